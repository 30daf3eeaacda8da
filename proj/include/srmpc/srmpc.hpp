#pragma once

// Everything: geometry, solvers, models, controllers, learning, safety, stability, harness.

#include <srmpc/core.hpp>
#include <srmpc/geometry/invariant_sets.hpp>
#include <srmpc/geometry/polytope.hpp>
#include <srmpc/geometry/polytope_json.hpp>
#include <srmpc/harness/config.hpp>
#include <srmpc/harness/figures.hpp>
#include <srmpc/harness/report.hpp>
#include <srmpc/harness/run.hpp>
#include <srmpc/harness/scalar_experiment.hpp>
#include <srmpc/harness/sim_truth.hpp>
#include <srmpc/harness/trace.hpp>
#include <srmpc/harness/tube_experiment.hpp>
#include <srmpc/learning/constrained_step.hpp>
#include <srmpc/learning/q_learning.hpp>
#include <srmpc/learning/scalar_constraints.hpp>
#include <srmpc/learning/scalar_gradient.hpp>
#include <srmpc/model/linear_model.hpp>
#include <srmpc/mpc/scalar_mpc.hpp>
#include <srmpc/mpc/tube_mpc.hpp>
#include <srmpc/safety/gate.hpp>
#include <srmpc/safety/nonblocking.hpp>
#include <srmpc/solvers/dare.hpp>
#include <srmpc/solvers/qp.hpp>
#include <srmpc/stability/lyapunov.hpp>
