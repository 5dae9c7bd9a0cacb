#include "cddpc/lq.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "cddpc/linalg.hpp"

namespace cddpc {

namespace {

constexpr double kNonsingularTolerance = 1e-12;

struct Lq {
    Eigen::MatrixXd lower;
    Eigen::MatrixXd q;
};

// LQ of s (rows <= cols) through a thin Householder QR of s^T, with the sign
// of each Q row chosen so that the diagonal of L is nonnegative.
Lq lq_decompose(const Eigen::MatrixXd& s) {
    const Eigen::Index rows = s.rows(), cols = s.cols();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(s.transpose());
    Lq out;
    out.lower = qr.matrixQR().topRows(rows).triangularView<Eigen::Upper>().toDenseMatrix().transpose();
    Eigen::MatrixXd thin = Eigen::MatrixXd::Identity(cols, rows);
    thin.applyOnTheLeft(qr.householderQ());
    out.q = thin.transpose();
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (out.lower(i, i) < 0.0) {
            out.lower.col(i) *= -1.0;
            out.q.row(i) *= -1.0;
        }
    }
    return out;
}

bool diagonal_ok(const Eigen::MatrixXd& l, Eigen::Index start, Eigen::Index size, double tol) {
    if (size == 0) return true;
    const Eigen::VectorXd d = l.diagonal().segment(start, size).cwiseAbs();
    return d.minCoeff() > tol * d.maxCoeff();
}

LqBlocks split_blocks(const Lq& f, const HankelPartition& part, Eigen::Index past_rows) {
    const Eigen::Index r1 = past_rows;
    const Eigen::Index r2 = part.future_input.rows();
    const Eigen::Index r3 = part.future_output.rows();
    LqBlocks b;
    b.m = part.m;
    b.p = part.p;
    b.horizon = part.horizon;
    b.l11 = f.lower.block(0, 0, r1, r1);
    b.l21 = f.lower.block(r1, 0, r2, r1);
    b.l22 = f.lower.block(r1, r1, r2, r2);
    b.l31 = f.lower.block(r1 + r2, 0, r3, r1);
    b.l32 = f.lower.block(r1 + r2, r1, r3, r2);
    b.l33 = f.lower.block(r1 + r2, r1 + r2, r3, r3);
    b.q1 = f.q.topRows(r1);
    b.q2 = f.q.middleRows(r1, r2);
    b.q3 = f.q.bottomRows(r3);
    return b;
}

}  // namespace

Eigen::MatrixXd LqBlocks::lower() const {
    const Eigen::Index r1 = l11.rows(), c1 = l11.cols(), r2 = l22.rows(), r3 = l33.rows();
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(r1 + r2 + r3, c1 + r2 + r3);
    l.block(0, 0, r1, c1) = l11;
    l.block(r1, 0, r2, c1) = l21;
    l.block(r1, c1, r2, r2) = l22;
    l.block(r1 + r2, 0, r3, c1) = l31;
    l.block(r1 + r2, c1, r3, r2) = l32;
    l.block(r1 + r2, c1 + r2, r3, r3) = l33;
    return l;
}

Eigen::MatrixXd LqBlocks::orthonormal() const {
    Eigen::MatrixXd q(q1.rows() + q2.rows() + q3.rows(), q1.cols());
    q << q1, q2, q3;
    return q;
}

LqBlocks factorize(const HankelPartition& part, RankPolicy policy) {
    const Eigen::Index past_rows = part.past.rows();
    const Eigen::Index input_rows = part.future_input.rows();
    const Eigen::MatrixXd s = part.stacked();
    if (s.cols() < s.rows()) {
        throw Error(ErrorKind::RankDeficient,
                    "Hankel data has " + std::to_string(s.cols()) + " columns but " + std::to_string(s.rows()) +
                        " rows; collect more samples");
    }

    const Lq full = lq_decompose(s);
    const bool past_ok = diagonal_ok(full.lower, 0, past_rows, kNonsingularTolerance);
    if (past_ok || policy == RankPolicy::Strict) {
        if (!past_ok) {
            throw Error(ErrorKind::RankDeficient, "L11 is singular: past data Z_p is rank deficient");
        }
        if (!diagonal_ok(full.lower, past_rows, input_rows, kNonsingularTolerance)) {
            throw Error(ErrorKind::RankDeficient, "L22 is singular: future inputs are not persistently exciting");
        }
        return split_blocks(full, part, past_rows);
    }

    // Rows of Z_p whose residual against the preceding rows is negligible.
    const Eigen::VectorXd d = full.lower.diagonal().head(past_rows).cwiseAbs();
    const double cutoff = kRankTolerance * d.maxCoeff();
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < past_rows; ++i) {
        if (d(i) > cutoff) keep.push_back(i);
    }
    const auto rank = static_cast<Eigen::Index>(keep.size());
    if (rank == 0) throw Error(ErrorKind::RankDeficient, "past data Z_p is identically zero");

    Eigen::MatrixXd reduced(rank + input_rows + part.future_output.rows(), s.cols());
    reduced << part.past(keep, Eigen::all), part.future_input, part.future_output;
    const Lq f = lq_decompose(reduced);
    if (!diagonal_ok(f.lower, 0, rank, kNonsingularTolerance)) {
        throw Error(ErrorKind::RankDeficient, "compressed L11 is singular");
    }
    if (!diagonal_ok(f.lower, rank, input_rows, kNonsingularTolerance)) {
        throw Error(ErrorKind::RankDeficient, "L22 is singular: future inputs are not persistently exciting");
    }

    LqBlocks b = split_blocks(f, part, rank);
    Eigen::MatrixXd l11 = part.past * b.q1.transpose();
    for (Eigen::Index k = 0; k < rank; ++k) l11.row(keep[static_cast<std::size_t>(k)]) = b.l11.row(k);
    b.l11 = std::move(l11);
    b.l11_left_inverse = pinv(b.l11);
    return b;
}

Eigen::MatrixXd block_lower_triangular(const Eigen::MatrixXd& x, int p, int m) {
    Eigen::MatrixXd out = x;
    const Eigen::Index row_blocks = x.rows() / p;
    const Eigen::Index col_blocks = x.cols() / m;
    for (Eigen::Index i = 0; i < row_blocks; ++i) {
        for (Eigen::Index j = i + 1; j < col_blocks; ++j) out.block(i * p, j * m, p, m).setZero();
    }
    return out;
}

CausalSplit causal_split(const LqBlocks& blocks) {
    CausalSplit s;
    s.causal = block_lower_triangular(blocks.l32, blocks.p, blocks.m);
    s.noncausal = blocks.l32 - s.causal;
    return s;
}

Eigen::MatrixXi causal_mask(int p, int m, int future) {
    Eigen::MatrixXi mask = Eigen::MatrixXi::Zero(p * future, m * future);
    for (int i = 0; i < future; ++i) mask.block(i * p, 0, p, (i + 1) * m).setOnes();
    return mask;
}

long free_parameters(int m, int p, const HorizonSpec& horizon, bool causal) {
    const long past = static_cast<long>(p) * horizon.future * (m + p) * horizon.past;
    const long fut = causal ? static_cast<long>(causal_mask(p, m, horizon.future).sum())
                            : static_cast<long>(p) * horizon.future * m * horizon.future;
    return past + fut;
}

Eigen::VectorXd gamma1_of(const LqBlocks& blocks, const Eigen::VectorXd& z_p) {
    require(z_p.size() == blocks.l11.rows(), ErrorKind::DimensionMismatch,
            "z_p has " + std::to_string(z_p.size()) + " entries, expected " + std::to_string(blocks.l11.rows()));
    if (blocks.compressed()) return blocks.l11_left_inverse * z_p;
    return blocks.l11.triangularView<Eigen::Lower>().solve(z_p);
}

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
    std::array<char, 8> b;
    for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xffu);
    out.write(b.data(), 8);
}

std::uint64_t get_u64(std::istream& in) {
    std::array<unsigned char, 8> b{};
    in.read(reinterpret_cast<char*>(b.data()), 8);
    require(in.gcount() == 8, ErrorKind::Io, "truncated LQ block dump");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
}

void put_matrix(std::ostream& out, const Eigen::MatrixXd& x) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            std::uint64_t bits;
            const double v = x(i, j);
            std::memcpy(&bits, &v, 8);
            put_u64(out, bits);
        }
    }
}

Eigen::MatrixXd get_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd x(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            const std::uint64_t bits = get_u64(in);
            double v;
            std::memcpy(&v, &bits, 8);
            x(i, j) = v;
        }
    }
    return x;
}

}  // namespace

void dump_blocks(std::ostream& out, const LqBlocks& b) {
    put_u64(out, static_cast<std::uint64_t>(b.m));
    put_u64(out, static_cast<std::uint64_t>(b.p));
    put_u64(out, static_cast<std::uint64_t>(b.horizon.past));
    put_u64(out, static_cast<std::uint64_t>(b.horizon.future));
    put_u64(out, static_cast<std::uint64_t>(b.q1.cols()));
    put_u64(out, static_cast<std::uint64_t>(b.past_rank()));
    for (const auto* x : {&b.l11, &b.l21, &b.l22, &b.l31, &b.l32, &b.l33, &b.q1, &b.q2, &b.q3}) put_matrix(out, *x);
}

void dump_blocks(const std::filesystem::path& path, const LqBlocks& blocks) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
    dump_blocks(out, blocks);
}

LqBlocks load_blocks(std::istream& in) {
    LqBlocks b;
    b.m = static_cast<int>(get_u64(in));
    b.p = static_cast<int>(get_u64(in));
    const int lp = static_cast<int>(get_u64(in));
    const int lf = static_cast<int>(get_u64(in));
    const auto cols = static_cast<Eigen::Index>(get_u64(in));
    const auto rank = static_cast<Eigen::Index>(get_u64(in));
    require(b.m >= 1 && b.p >= 1 && lp >= 1 && lf >= 1 && rank >= 1, ErrorKind::Io, "corrupt LQ block header");
    b.horizon = HorizonSpec(lp, lf);
    const Eigen::Index zr = static_cast<Eigen::Index>(b.m + b.p) * lp;
    const Eigen::Index ur = static_cast<Eigen::Index>(b.m) * lf;
    const Eigen::Index yr = static_cast<Eigen::Index>(b.p) * lf;
    require(rank <= zr, ErrorKind::Io, "corrupt LQ block header");
    b.l11 = get_matrix(in, zr, rank);
    b.l21 = get_matrix(in, ur, rank);
    b.l22 = get_matrix(in, ur, ur);
    b.l31 = get_matrix(in, yr, rank);
    b.l32 = get_matrix(in, yr, ur);
    b.l33 = get_matrix(in, yr, yr);
    b.q1 = get_matrix(in, rank, cols);
    b.q2 = get_matrix(in, ur, cols);
    b.q3 = get_matrix(in, yr, cols);
    if (b.compressed()) b.l11_left_inverse = pinv(b.l11);
    return b;
}

LqBlocks load_blocks(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open LQ dump " + path.string());
    return load_blocks(in);
}

}  // namespace cddpc
