#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaptg/engine.hpp"
#include "adaptg/records.hpp"
#include "adaptg/simlab.hpp"

namespace adaptg {

inline std::string fmt_num(double v) {
    if (v == 0.0) v = 0.0;  // normalize negative zero
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

struct InputTable {
    std::vector<HypothesisRecord> records;
    std::vector<std::string> covariate_names;
    bool has_p = false, has_z = false, has_se = false;
};

namespace detail_csv {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') { out.push_back(cur); cur.clear(); }
        else if (c != '\r') cur.push_back(c);
    }
    out.push_back(cur);
    return out;
}

inline double parse_num(const std::string& s, std::size_t row, const std::string& col) {
    try {
        std::size_t at = 0;
        const double v = std::stod(s, &at);
        if (at != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("row " + std::to_string(row) + ", column '" + col +
                                 "': not a number: '" + s + "'");
    }
}

}  // namespace detail_csv

/// Read a CSV with a header row. Recognized columns: id, p, z, se; every other
/// column is a covariate. Parse errors name the offending row and column.
inline InputTable read_input_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open input file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty input file: " + path);
    const auto header = detail_csv::split_csv_line(line);

    InputTable table;
    int id_col = -1, p_col = -1, z_col = -1, se_col = -1;
    std::vector<int> cov_cols;
    for (std::size_t j = 0; j < header.size(); ++j) {
        const std::string& h = header[j];
        if (h == "id") id_col = static_cast<int>(j);
        else if (h == "p") { p_col = static_cast<int>(j); table.has_p = true; }
        else if (h == "z") { z_col = static_cast<int>(j); table.has_z = true; }
        else if (h == "se") { se_col = static_cast<int>(j); table.has_se = true; }
        else { cov_cols.push_back(static_cast<int>(j)); table.covariate_names.push_back(h); }
    }
    if (!table.has_p && !table.has_z)
        throw std::runtime_error("input needs a 'p' or 'z' column");

    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = detail_csv::split_csv_line(line);
        if (cells.size() != header.size())
            throw std::runtime_error("row " + std::to_string(row) + ": expected " +
                                     std::to_string(header.size()) + " columns, got " +
                                     std::to_string(cells.size()));
        HypothesisRecord rec;
        rec.id = id_col >= 0 ? cells[static_cast<std::size_t>(id_col)] : std::to_string(row - 1);
        for (std::size_t c = 0; c < cov_cols.size(); ++c)
            rec.x.push_back(detail_csv::parse_num(cells[static_cast<std::size_t>(cov_cols[c])],
                                                  row, table.covariate_names[c]));
        auto opt_cell = [&](int col, const char* name) -> std::optional<double> {
            if (col < 0) return std::nullopt;
            const std::string& s = cells[static_cast<std::size_t>(col)];
            if (s.empty() || s == "NA" || s == "nan") return std::nullopt;
            return detail_csv::parse_num(s, row, name);
        };
        rec.p = opt_cell(p_col, "p");
        rec.z = opt_cell(z_col, "z");
        rec.se = opt_cell(se_col, "se");
        table.records.push_back(std::move(rec));
    }
    if (table.records.empty()) throw std::runtime_error("input has no data rows: " + path);
    return table;
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << content;
}

inline std::string rejections_csv(const PreparedData& data, std::span<const int> rejected) {
    std::vector<std::uint8_t> flag(data.size(), 0);
    for (int i : rejected) flag[static_cast<std::size_t>(i)] = 1;
    std::ostringstream os;
    os << "id,p,z,rejected\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double z =
            std::isnan(data.z_raw[i]) ? norm_quantile_comp(data.p[i]) : data.z_raw[i];
        os << data.ids[i] << ',' << fmt_num(data.p[i]) << ',' << fmt_num(z) << ','
           << int(flag[i]) << '\n';
    }
    return os.str();
}

inline std::string trace_csv(std::span<const TraceRow> trace) {
    std::ostringstream os;
    os << "step,masked,a_count,r_count,fdp_hat,note\n";
    for (const auto& t : trace)
        os << t.step << ',' << t.masked << ',' << t.a_count << ',' << t.r_count << ','
           << fmt_num(t.fdp) << ',' << t.note << '\n';
    return os.str();
}

inline std::string eval_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "method,alpha,replication,fdp,tpr,rejections,ok,error\n";
    for (const auto& r : report.rows)
        os << r.method << ',' << fmt_num(r.alpha) << ',' << r.replication << ',' << fmt_num(r.fdp)
           << ',' << fmt_num(r.tpr) << ',' << r.rejections << ',' << (r.ok ? 1 : 0) << ','
           << r.error << '\n';
    return os.str();
}

}  // namespace adaptg
