#pragma once

#include "poddp/types.hpp"
#include "poddp/belief.hpp"
#include "poddp/model.hpp"
#include "poddp/bayes.hpp"
#include "poddp/tree.hpp"
#include "poddp/solver.hpp"
#include "poddp/baselines.hpp"
#include "poddp/config.hpp"
#include "poddp/scenarios.hpp"
#include "poddp/harness.hpp"
#include "poddp/cli.hpp"
