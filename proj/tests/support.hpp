#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "cddpc/controller.hpp"
#include "cddpc/lq.hpp"
#include "cddpc/qp.hpp"
#include "cddpc/sim.hpp"
#include "cddpc/traj.hpp"

namespace cddpc::fixtures {

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0);

/// Random stable innovation-form model with spectral radius `radius`.
StateSpaceModel random_model(std::mt19937_64& rng, int n, int m, int p, double radius = 0.8);

/// Open-loop data under white uniform excitation in [-1, 1].
Trajectory white_dataset(const StateSpaceModel& model, int length, double noise_std, std::uint64_t seed);

/// One randomized horizon problem built from a noisy dataset. z_p comes from
/// a fresh continuation of the plant, the reference is random.
struct Problem {
    HankelPartition part;
    LqBlocks blocks;
    CausalSplit split;
    Eigen::VectorXd z_p;
    Eigen::VectorXd r_f;
    ControllerSpec spec;
};

struct ProblemOptions {
    int max_io = 2;       // m, p drawn from 1..max_io
    int min_past = 3, max_past = 8;
    int min_future = 3, max_future = 10;
    int max_columns = 0;  // 0: enough for full row rank with margin
    double noise_std = 0.2;
    double u_bound = 0.6;  // small enough that input bounds bind
    double y_bound = kInfinity;
};

Problem random_problem(std::uint64_t seed, const ProblemOptions& options = {});

/// Exact primal active-set method for strictly convex QPs whose origin is
/// feasible (lower <= 0 <= upper). Independent of the ADMM solver.
Eigen::VectorXd active_set_oracle(const QpProblem& problem);

/// Brute force over every assignment of each row to {free, at lower, at
/// upper}; returns the feasible KKT point with valid multiplier signs.
/// Only for a handful of constraints.
Eigen::VectorXd enumeration_oracle(const QpProblem& problem);

struct KktResiduals {
    double stationarity = 0;
    double primal = 0;
    double complementarity = 0;
    double dual_sign = 0;

    double max() const;
};

/// Residuals of (x, y) with the sign convention y > 0 at upper bounds.
KktResiduals kkt_residuals(const QpProblem& problem, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// Random strictly convex QP with 0 strictly feasible and several active rows.
QpProblem random_qp(std::mt19937_64& rng, int n, int k);

}  // namespace cddpc::fixtures
