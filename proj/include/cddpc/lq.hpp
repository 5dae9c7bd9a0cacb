#pragma once

#include <filesystem>
#include <iosfwd>

#include <Eigen/Dense>

#include "cddpc/traj.hpp"

namespace cddpc {

/// How factorize() treats a rank-deficient past block Z_p.
enum class RankPolicy {
    /// RankDeficient if L11 or L22 has a relative diagonal below 1e-12.
    Strict,
    /// Keep only the numerically independent rows of Z_p when building Q1, so
    /// L11 becomes tall with full column rank. Noise-free data with
    /// p*L_p > n always needs this. L22 is still required to be nonsingular.
    CompressPast,
};

/// Blocks of [Z_p; U_f; Y_f] = L * Q with L block lower-triangular and Q
/// having orthonormal rows. The diagonal of L is nonnegative.
///
/// With RankPolicy::CompressPast, l11 is (m+p)L_p x r with r = rank(Z_p) and
/// q1 has r rows; every other block keeps its nominal shape.
struct LqBlocks {
    Eigen::MatrixXd l11, l21, l22, l31, l32, l33;
    Eigen::MatrixXd q1, q2, q3;
    int m = 0;
    int p = 0;
    HorizonSpec horizon;

    bool compressed() const { return l11.rows() != l11.cols(); }
    Eigen::Index past_rank() const { return l11.cols(); }

    /// Left inverse of l11 when compressed (empty otherwise).
    Eigen::MatrixXd l11_left_inverse;

    /// Full L (rows of Z_p, U_f, Y_f; columns of Q1, Q2, Q3).
    Eigen::MatrixXd lower() const;
    /// Stacked [Q1; Q2; Q3].
    Eigen::MatrixXd orthonormal() const;
};

/// Causal (block lower-triangular) and non-causal parts of L32.
struct CausalSplit {
    Eigen::MatrixXd causal;      // LT_{p,m}(L32)
    Eigen::MatrixXd noncausal;   // L'32 = L32 - LT_{p,m}(L32)
};

LqBlocks factorize(const HankelPartition& part, RankPolicy policy = RankPolicy::Strict);

CausalSplit causal_split(const LqBlocks& blocks);

/// Block lower-triangular part of a (p*L) x (m*L) matrix with p x m blocks.
Eigen::MatrixXd block_lower_triangular(const Eigen::MatrixXd& x, int p, int m);

/// 1 where a causal K_f may be nonzero, 0 elsewhere (pL_f x mL_f).
Eigen::MatrixXi causal_mask(int p, int m, int future);

/// Structurally free entries of the full predictor K = [K_p | K_f].
long free_parameters(int m, int p, const HorizonSpec& horizon, bool causal);

/// gamma_1 = L11^{-1} z_p (forward substitution), or the least-squares
/// solution when the past block was compressed.
Eigen::VectorXd gamma1_of(const LqBlocks& blocks, const Eigen::VectorXd& z_p);

/// Little-endian binary dump: int64 header (m, p, L_p, L_f, M, rank(Z_p)),
/// then float64 blocks L11, L21, L22, L31, L32, L33, Q1, Q2, Q3 row-major.
void dump_blocks(std::ostream& out, const LqBlocks& blocks);
void dump_blocks(const std::filesystem::path& path, const LqBlocks& blocks);
LqBlocks load_blocks(std::istream& in);
LqBlocks load_blocks(const std::filesystem::path& path);

}  // namespace cddpc
