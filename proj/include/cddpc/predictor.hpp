#pragma once

#include <filesystem>
#include <iosfwd>

#include <Eigen/Dense>

#include "cddpc/lq.hpp"
#include "cddpc/traj.hpp"

namespace cddpc {

/// Linear multi-step predictor  y_f = K_p z_p + K_f u_f.
struct Predictor {
    Eigen::MatrixXd past_gain;    // K_p, pL_f x (m+p)L_p
    Eigen::MatrixXd future_gain;  // K_f, pL_f x mL_f
    bool causal = false;
    int m = 0;
    int p = 0;
    HorizonSpec horizon;

    /// [K_p | K_f]
    Eigen::MatrixXd gain() const;
};

/// SPC predictor K = Y_f pinv([Z_p; U_f]) computed directly from the data.
Predictor fit_spc(const HankelPartition& part);

/// SPC predictor from the LQ blocks: [L31 L32] inv([[L11, 0], [L21, L22]]).
Predictor fit_spc(const LqBlocks& blocks);

/// Causal predictor [L31 LT(L32)] inv([[L11, 0], [L21, L22]]).
Predictor fit_causal(const LqBlocks& blocks);

/// Causal predictor by one unconstrained least-squares fit per output block
/// row against [Z_p; U_f(1..i)]. Slow; kept as a cross-check.
Predictor fit_causal_bruteforce(const HankelPartition& part);

Eigen::VectorXd predict(const Predictor& pred, const Eigen::VectorXd& z_p, const Eigen::VectorXd& u_f);

/// ||Y_f - K [Z_p; U_f]||_F
double fit_residual(const HankelPartition& part, const Predictor& pred);

/// K_p and K_f side by side, one CSV row per predictor row.
void write_csv(std::ostream& out, const Predictor& pred);
void write_csv(const std::filesystem::path& path, const Predictor& pred);

}  // namespace cddpc
