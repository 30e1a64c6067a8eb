#pragma once

// Everything except io.hpp, which additionally needs nlohmann/json.

#include "error.hpp"
#include "model.hpp"
#include "qp.hpp"
#include "bnb.hpp"
#include "regret_core.hpp"
#include "parallel.hpp"
#include "solver.hpp"
#include "gmm.hpp"
#include "ci_regret.hpp"
#include "rng.hpp"
#include "validation.hpp"
#include "apps.hpp"
