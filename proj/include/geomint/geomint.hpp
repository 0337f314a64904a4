#pragma once

#include "geomint/analysis.hpp"
#include "geomint/core.hpp"
#include "geomint/csv.hpp"
#include "geomint/integrators.hpp"
#include "geomint/solvers.hpp"
#include "geomint/stochastic.hpp"
#include "geomint/systems.hpp"
#include "geomint/version.hpp"
