// Command-line front end: `adaptg test` runs a testing procedure on a CSV of
// hypotheses, `adaptg simulate` runs the Monte Carlo lab scenarios.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "adaptg/adaptg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitNoRejections = 2;

adaptg::NullType parse_null(const std::string& spec) {
    using adaptg::NullType;
    if (spec == "point") return NullType::point();
    if (spec == "one-sided-right") return NullType::one_sided_right();
    if (spec == "one-sided-left") return NullType::one_sided_left();
    if (spec.rfind("interval:", 0) == 0) {
        const double delta = std::stod(spec.substr(9));
        return NullType::interval(delta);
    }
    throw CLI::ValidationError(
        "--null", "expected point|one-sided-right|one-sided-left|interval:<delta>");
}

adaptg::ClassifierKind parse_classifier(const std::string& name) {
    using adaptg::ClassifierKind;
    if (name == "logit" || name == "auto") return ClassifierKind::Logit;
    if (name == "nnet") return ClassifierKind::Net;
    if (name == "intercept") return ClassifierKind::Intercept;
    throw CLI::ValidationError("--classifier", "expected logit|nnet|intercept|auto");
}

struct MaskOverrides {
    std::optional<double> alpha_m, lambda, nu;
    std::optional<std::string> shape;
};

adaptg::MaskingParams resolve_masking(const MaskOverrides& ov, std::size_t n, double alpha,
                                      adaptg::NullType null) {
    adaptg::MaskingParams base = adaptg::default_params(n, alpha, null, ov.nu);
    const double am = ov.alpha_m.value_or(base.alpha_m);
    const double lam = ov.lambda.value_or(ov.alpha_m ? *ov.alpha_m : base.lambda);
    const double nu = ov.nu.value_or(base.nu);
    adaptg::MaskShape shape = base.shape;
    if (ov.shape) {
        if (*ov.shape == "tent") shape = adaptg::MaskShape::Tent;
        else if (*ov.shape == "comb") shape = adaptg::MaskShape::Comb;
        else throw CLI::ValidationError("--mask-shape", "expected tent|comb");
    }
    return adaptg::MaskingParams(am, lam, nu, shape);
}

json masking_json(const adaptg::MaskingParams& p) {
    return json{{"alpha_m", p.alpha_m},
                {"lambda", p.lambda},
                {"nu", p.nu},
                {"zeta", p.zeta()},
                {"shape", p.shape == adaptg::MaskShape::Tent ? "tent" : "comb"}};
}

int run_test_command(const std::string& input, const std::string& null_spec, double alpha,
                     const std::string& method, const MaskOverrides& mask_ov,
                     const std::string& classifier, std::optional<int> classes,
                     const std::string& criterion, std::uint64_t seed,
                     std::optional<std::size_t> batch, const std::string& out_dir,
                     bool write_trace) {
    using namespace adaptg;
    const NullType null = parse_null(null_spec);
    const InputTable table = read_input_table(input);

    if (null.is_interval() && (!table.has_z || !table.has_se))
        throw std::runtime_error("interval nulls require explicit z and se columns");

    fs::create_directories(out_dir);
    const PreparedData data = prepare_data(table.records, null);

    std::vector<int> rejected;
    json diagnostics;
    diagnostics["method"] = method;
    diagnostics["alpha"] = alpha;
    diagnostics["null"] = null.name();
    diagnostics["seed"] = seed;
    diagnostics["n"] = data.size();

    if (method == "bh" || method == "storey") {
        const RejectionSet rs = method == "bh" ? bh(data.p, alpha) : storey_bh(data.p, alpha);
        rejected = rs.indices;
        if (rs.threshold) diagnostics["threshold"] = *rs.threshold;
        write_file(out_dir + "/trace.csv", trace_csv({}));
    } else if (method == "adaptg") {
        const MaskingParams params = resolve_masking(mask_ov, data.size(), alpha, null);
        GmmPolicyConfig pcfg;
        const ClassifierKind clf = parse_classifier(classifier);
        pcfg.grid = default_candidate_grid(clf);
        if (classes) {
            std::erase_if(pcfg.grid,
                          [&](const ModelCandidate& c) { return c.K != *classes; });
            if (pcfg.grid.empty()) throw std::runtime_error("--classes outside the model grid");
        }
        pcfg.criterion = criterion == "bic" ? ModelCriterion::BIC : ModelCriterion::AIC;
        pcfg.seed = seed;
        GmmRevealPolicy policy(pcfg);
        RunOptions ropts;
        ropts.batch_cap = batch;
        const RunResult res = run(data, params, alpha, policy, ropts);
        rejected = res.rejected;

        diagnostics["masking"] = masking_json(params);
        diagnostics["stopped"] = !res.no_rejections();
        if (res.stop_step) diagnostics["stop_step"] = *res.stop_step;
        if (policy.has_selection()) {
            const SelectedModel& sel = policy.selection();
            diagnostics["selected_model"] = {
                {"name", sel.candidate.name()},
                {"K", sel.candidate.K},
                {"score", sel.candidate.score},
                {"criterion", criterion},
                {"mu", sel.fit.params.mu},
                {"tau2", sel.fit.params.tau2},
                {"loglik_path", sel.fit.loglik_path},
                {"refits", policy.refit_count()},
                {"notes", sel.fit.notes},
            };
            json scored = json::array();
            for (const auto& c : sel.scored)
                scored.push_back({{"name", c.name()}, {"score", c.score}});
            diagnostics["candidates"] = scored;
        }
        if (write_trace) write_file(out_dir + "/trace.csv", trace_csv(res.trace));
    } else {
        throw std::runtime_error("unknown method: " + method);
    }

    diagnostics["rejections"] = rejected.size();
    write_file(out_dir + "/rejections.csv", rejections_csv(data, rejected));
    write_file(out_dir + "/diagnostics.json", diagnostics.dump(2) + "\n");

    std::cout << method << ": " << rejected.size() << " rejection(s) at alpha=" << alpha << "\n";
    return rejected.empty() ? kExitNoRejections : kExitOk;
}

int run_simulate_command(const std::string& scenario_name_, std::size_t n, int reps,
                         const std::vector<double>& alpha_grid, std::uint64_t seed,
                         const std::string& classifier, const std::string& out_dir,
                         bool with_oracle) {
    using namespace adaptg;
    const auto scenario = scenario_from_name(scenario_name_);
    if (!scenario) throw std::runtime_error("unknown scenario: " + scenario_name_);

    LogisticSimConfig cfg;
    cfg.n = n;
    cfg.replications = reps;
    cfg.alpha_grid = alpha_grid;
    cfg.scenario = *scenario;
    cfg.seed = seed;

    std::vector<Method> methods;
    methods.push_back(make_bh_method());
    methods.push_back(make_storey_method());
    AdaptgOptions opts;
    opts.policy.grid = default_candidate_grid(parse_classifier(classifier));
    methods.push_back(make_adaptg_method("adaptg", opts));
    if (*scenario == Scenario::SpikeAtOne) {
        AdaptgOptions sym = opts;
        sym.masking = MaskingParams::symmetric();
        methods.push_back(make_adaptg_method("adaptg-symmetric", sym));
    }
    if (with_oracle) methods.push_back(make_adaptg_oracle_method(*scenario));

    const EvalReport report = evaluate(methods, cfg);

    fs::create_directories(out_dir);
    write_file(out_dir + "/eval.csv", eval_csv(report));

    json summary;
    summary["scenario"] = scenario_name_;
    summary["n"] = n;
    summary["replications"] = reps;
    summary["seed"] = seed;
    json rows = json::array();
    for (const auto& s : report.summaries) {
        rows.push_back({{"method", s.method},
                        {"alpha", s.alpha},
                        {"fdr_mean", s.fdr_mean},
                        {"fdr_se", s.fdr_se},
                        {"tpr_mean", s.tpr_mean},
                        {"tpr_se", s.tpr_se},
                        {"n_ok", s.n_ok},
                        {"n_err", s.n_err}});
    }
    summary["summaries"] = rows;
    write_file(out_dir + "/summary.json", summary.dump(2) + "\n");

    for (const auto& s : report.summaries)
        std::cout << s.method << " alpha=" << s.alpha << " FDR=" << s.fdr_mean
                  << " TPR=" << s.tpr_mean << " (n_ok=" << s.n_ok << ")\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"AdaPT_g: covariate-assisted multiple testing with FDR control"};
    app.require_subcommand(1);

    // ---- test ----
    std::string input, null_spec = "one-sided-right", method = "adaptg";
    std::string classifier = "auto", criterion = "aic", out_dir = "adaptg-out";
    double alpha = 0.05;
    MaskOverrides mask_ov;
    std::optional<int> classes;
    std::uint64_t seed = 0;
    std::optional<std::size_t> batch;
    bool write_trace = true;

    CLI::App* test = app.add_subcommand("test", "run a testing procedure on a CSV input");
    test->add_option("--input", input, "input CSV (columns: id, covariates..., p, z, se)")
        ->required();
    test->add_option("--alpha", alpha, "target FDR level")->default_val(0.05);
    test->add_option("--null", null_spec,
                     "point|one-sided-right|one-sided-left|interval:<delta>")
        ->default_val("one-sided-right");
    test->add_option("--method", method, "adaptg|bh|storey")->default_val("adaptg");
    double am_in = -1, lam_in = -1, nu_in = -1;
    std::string shape_in;
    test->add_option("--mask-alpha-m", am_in, "masking alpha_m (default: size heuristic)");
    test->add_option("--mask-lambda", lam_in, "masking lambda (default: alpha_m)");
    test->add_option("--mask-nu", nu_in, "masking nu (default 0.9)");
    test->add_option("--mask-shape", shape_in, "tent|comb (default by null type)");
    test->add_option("--classes", classes, "fix the mixture component count K");
    test->add_option("--classifier", classifier, "logit|nnet|intercept|auto")->default_val("auto");
    test->add_option("--criterion", criterion, "aic|bic")->default_val("aic");
    test->add_option("--seed", seed, "random seed")->default_val(0);
    test->add_option("--batch", batch, "reveal batch size (default |M0|/50)");
    test->add_option("--out-dir", out_dir, "output directory")->default_val("adaptg-out");
    test->add_flag("--trace,!--no-trace", write_trace, "write trace.csv (default on)");

    // ---- simulate ----
    std::string scenario = "logistic-onesided", sim_out = "adaptg-sim";
    std::size_t sim_n = 3000;
    int reps = 100;
    std::vector<double> alpha_grid;
    std::uint64_t sim_seed = 0;
    std::string sim_classifier = "auto";
    bool with_oracle = false;

    CLI::App* sim = app.add_subcommand("simulate", "run a Monte Carlo scenario");
    sim->add_option("--scenario", scenario,
                    "logistic-onesided|logistic-point|logistic-interval|spike-at-one")
        ->default_val("logistic-onesided");
    sim->add_option("--n", sim_n, "hypotheses per replication")->default_val(3000);
    sim->add_option("--reps", reps, "replications")->default_val(100);
    sim->add_option("--alpha-grid", alpha_grid, "comma-separated alpha levels")
        ->delimiter(',');
    sim->add_option("--seed", sim_seed, "master seed")->default_val(0);
    sim->add_option("--classifier", sim_classifier, "logit|nnet|intercept|auto")
        ->default_val("auto");
    sim->add_flag("--oracle", with_oracle, "include the oracle reveal policy");
    sim->add_option("--out-dir", sim_out, "output directory")->default_val("adaptg-sim");

    CLI11_PARSE(app, argc, argv);

    try {
        if (test->parsed()) {
            if (am_in > 0) mask_ov.alpha_m = am_in;
            if (lam_in > 0) mask_ov.lambda = lam_in;
            if (nu_in > 0) mask_ov.nu = nu_in;
            if (!shape_in.empty()) mask_ov.shape = shape_in;
            return run_test_command(input, null_spec, alpha, method, mask_ov, classifier, classes,
                                    criterion, seed, batch, out_dir, write_trace);
        }
        if (alpha_grid.empty()) alpha_grid = {0.05, 0.1, 0.2};
        return run_simulate_command(scenario, sim_n, reps, alpha_grid, sim_seed, sim_classifier,
                                    sim_out, with_oracle);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
}
