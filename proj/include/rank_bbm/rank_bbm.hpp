#pragma once

/// @file rank_bbm.hpp
/// @brief Umbrella header.

#include "rank_bbm/config.hpp"
#include "rank_bbm/errors.hpp"
#include "rank_bbm/experiments.hpp"
#include "rank_bbm/io.hpp"
#include "rank_bbm/particle_engine.hpp"
#include "rank_bbm/pde_solver.hpp"
#include "rank_bbm/polynomial.hpp"
#include "rank_bbm/rng.hpp"
#include "rank_bbm/selection.hpp"
#include "rank_bbm/wave_analysis.hpp"
