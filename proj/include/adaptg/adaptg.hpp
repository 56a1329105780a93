#pragma once

#include "adaptg/baselines.hpp"
#include "adaptg/classifier.hpp"
#include "adaptg/csvio.hpp"
#include "adaptg/engine.hpp"
#include "adaptg/masking.hpp"
#include "adaptg/mathutil.hpp"
#include "adaptg/rational.hpp"
#include "adaptg/records.hpp"
#include "adaptg/rng.hpp"
#include "adaptg/simlab.hpp"
#include "adaptg/workmodel.hpp"
