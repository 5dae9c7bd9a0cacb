#pragma once

#include <Eigen/Dense>

namespace cddpc {

/// Relative cutoff shared by rank tests and pseudo-inverses.
inline constexpr double kRankTolerance = 1e-10;

/// Moore-Penrose inverse via SVD, singular values below rtol * sigma_max dropped.
Eigen::MatrixXd pinv(const Eigen::MatrixXd& a, double rtol = kRankTolerance);

/// Number of singular values above rtol * sigma_max.
Eigen::Index numerical_rank(const Eigen::MatrixXd& a, double rtol = kRankTolerance);

/// Relative Frobenius distance ||a - b|| / max(||b||, tiny).
double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Block-diagonal matrix with `block` repeated `count` times.
Eigen::MatrixXd repeat_diagonal(const Eigen::MatrixXd& block, int count);

/// Vector with `v` repeated `count` times.
Eigen::VectorXd tile(const Eigen::VectorXd& v, int count);

}  // namespace cddpc
