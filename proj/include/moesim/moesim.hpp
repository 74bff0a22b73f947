#pragma once

#include "moesim/model.hpp"
#include "moesim/gating.hpp"
#include "moesim/predictor.hpp"
#include "moesim/cache.hpp"
#include "moesim/loader.hpp"
#include "moesim/trace.hpp"
#include "moesim/tracegen.hpp"
#include "moesim/trace_io.hpp"
#include "moesim/engine.hpp"
#include "moesim/config.hpp"
#include "moesim/report.hpp"
#include "moesim/sweep.hpp"
