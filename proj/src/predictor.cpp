#include "cddpc/predictor.hpp"

#include <fstream>
#include <ostream>
#include <string>

#include "cddpc/csv.hpp"
#include "cddpc/linalg.hpp"

namespace cddpc {

Eigen::MatrixXd Predictor::gain() const {
    Eigen::MatrixXd k(past_gain.rows(), past_gain.cols() + future_gain.cols());
    k << past_gain, future_gain;
    return k;
}

namespace {

Predictor make_predictor(int m, int p, const HorizonSpec& h, bool causal) {
    Predictor pred;
    pred.m = m;
    pred.p = p;
    pred.horizon = h;
    pred.causal = causal;
    return pred;
}

// [L31 X] times the (pseudo-)inverse of [[L11, 0], [L21, L22]].
void from_blocks(const LqBlocks& b, const Eigen::MatrixXd& x, Predictor& pred) {
    // K_f = X L22^{-1}
    pred.future_gain = b.l22.transpose().triangularView<Eigen::Upper>().solve(x.transpose()).transpose();
    const Eigen::MatrixXd lhs = b.l31 - pred.future_gain * b.l21;
    if (b.compressed()) {
        pred.past_gain = lhs * b.l11_left_inverse;
    } else {
        pred.past_gain = b.l11.transpose().triangularView<Eigen::Upper>().solve(lhs.transpose()).transpose();
    }
}

}  // namespace

Predictor fit_spc(const HankelPartition& part) {
    Predictor pred = make_predictor(part.m, part.p, part.horizon, false);
    const Eigen::MatrixXd k = part.future_output * pinv(part.regressor());
    pred.past_gain = k.leftCols(part.past.rows());
    pred.future_gain = k.rightCols(part.future_input.rows());
    return pred;
}

Predictor fit_spc(const LqBlocks& blocks) {
    Predictor pred = make_predictor(blocks.m, blocks.p, blocks.horizon, false);
    from_blocks(blocks, blocks.l32, pred);
    return pred;
}

Predictor fit_causal(const LqBlocks& blocks) {
    Predictor pred = make_predictor(blocks.m, blocks.p, blocks.horizon, true);
    from_blocks(blocks, block_lower_triangular(blocks.l32, blocks.p, blocks.m), pred);
    // Triangular solves keep the upper blocks at zero already; make it exact.
    pred.future_gain = block_lower_triangular(pred.future_gain, blocks.p, blocks.m);
    return pred;
}

Predictor fit_causal_bruteforce(const HankelPartition& part) {
    const int m = part.m, p = part.p, lf = part.horizon.future;
    Predictor pred = make_predictor(m, p, part.horizon, true);
    const Eigen::Index zr = part.past.rows();
    pred.past_gain = Eigen::MatrixXd::Zero(p * lf, zr);
    pred.future_gain = Eigen::MatrixXd::Zero(p * lf, m * lf);
    for (int i = 1; i <= lf; ++i) {
        Eigen::MatrixXd regressor(zr + m * i, part.columns());
        regressor << part.past, part.future_input.topRows(m * i);
        const Eigen::MatrixXd row = part.future_output.middleRows((i - 1) * p, p) * pinv(regressor);
        pred.past_gain.middleRows((i - 1) * p, p) = row.leftCols(zr);
        pred.future_gain.block((i - 1) * p, 0, p, m * i) = row.rightCols(m * i);
    }
    return pred;
}

Eigen::VectorXd predict(const Predictor& pred, const Eigen::VectorXd& z_p, const Eigen::VectorXd& u_f) {
    require(z_p.size() == pred.past_gain.cols() && u_f.size() == pred.future_gain.cols(),
            ErrorKind::DimensionMismatch,
            "predict: expected z_p of size " + std::to_string(pred.past_gain.cols()) + " and u_f of size " +
                std::to_string(pred.future_gain.cols()));
    return pred.past_gain * z_p + pred.future_gain * u_f;
}

double fit_residual(const HankelPartition& part, const Predictor& pred) {
    require(pred.past_gain.cols() == part.past.rows() && pred.future_gain.cols() == part.future_input.rows() &&
                pred.past_gain.rows() == part.future_output.rows(),
            ErrorKind::DimensionMismatch, "fit_residual: predictor does not match the partition");
    return (part.future_output - pred.past_gain * part.past - pred.future_gain * part.future_input).norm();
}

void write_csv(std::ostream& out, const Predictor& pred) {
    for (Eigen::Index j = 0; j < pred.past_gain.cols(); ++j) out << (j ? "," : "") << "kp" << j + 1;
    for (Eigen::Index j = 0; j < pred.future_gain.cols(); ++j) out << ",kf" << j + 1;
    out << "\n";
    const Eigen::MatrixXd k = pred.gain();
    for (Eigen::Index i = 0; i < k.rows(); ++i) {
        for (Eigen::Index j = 0; j < k.cols(); ++j) out << (j ? "," : "") << csv::format_double(k(i, j));
        out << "\n";
    }
}

void write_csv(const std::filesystem::path& path, const Predictor& pred) {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
    write_csv(out, pred);
}

}  // namespace cddpc
