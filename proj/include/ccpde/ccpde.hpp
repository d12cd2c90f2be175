#pragma once

#include "copula.hpp"
#include "errors.hpp"
#include "ito_consistency.hpp"
#include "normal.hpp"
#include "parallel.hpp"
#include "pi_system.hpp"
#include "pipeline.hpp"
#include "residuals.hpp"
#include "selection.hpp"
#include "simulator.hpp"
#include "stats.hpp"
#include "table.hpp"

namespace ccpde {
inline constexpr const char* kVersion = "0.1.0";
}
