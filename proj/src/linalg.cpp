#include "cddpc/linalg.hpp"

#include <algorithm>
#include <limits>

namespace cddpc {

Eigen::MatrixXd pinv(const Eigen::MatrixXd& a, double rtol) {
    if (a.size() == 0) return Eigen::MatrixXd::Zero(a.cols(), a.rows());
    Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const double cutoff = rtol * s(0);
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) > cutoff && s(i) > 0.0) inv(i) = 1.0 / s(i);
    }
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Eigen::Index numerical_rank(const Eigen::MatrixXd& a, double rtol) {
    if (a.size() == 0) return 0;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(a);
    const auto& s = svd.singularValues();
    if (s(0) == 0.0) return 0;
    const double cutoff = rtol * s(0);
    return static_cast<Eigen::Index>(std::count_if(s.begin(), s.end(), [&](double v) { return v > cutoff; }));
}

double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double denom = std::max(b.norm(), std::numeric_limits<double>::min());
    return (a - b).norm() / denom;
}

Eigen::MatrixXd repeat_diagonal(const Eigen::MatrixXd& block, int count) {
    const Eigen::Index r = block.rows(), c = block.cols();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(r * count, c * count);
    for (int i = 0; i < count; ++i) out.block(i * r, i * c, r, c) = block;
    return out;
}

Eigen::VectorXd tile(const Eigen::VectorXd& v, int count) {
    Eigen::VectorXd out(v.size() * count);
    for (int i = 0; i < count; ++i) out.segment(i * v.size(), v.size()) = v;
    return out;
}

}  // namespace cddpc
