#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace cddpc::fixtures {

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
    std::normal_distribution<double> n01;
    Eigen::MatrixXd a(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) a(i, j) = scale * n01(rng);
    return a;
}

StateSpaceModel random_model(std::mt19937_64& rng, int n, int m, int p, double radius) {
    StateSpaceModel s;
    s.A = random_matrix(rng, n, n);
    const double rho = s.A.eigenvalues().cwiseAbs().maxCoeff();
    s.A *= radius / rho;
    s.B = random_matrix(rng, n, m);
    s.C = random_matrix(rng, p, n);
    s.D = random_matrix(rng, p, m, 0.5);
    s.K = random_matrix(rng, n, p, 0.3);
    return s;
}

Trajectory white_dataset(const StateSpaceModel& model, int length, double noise_std, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd excitation(model.m(), length);
    for (int t = 0; t < length; ++t)
        for (Eigen::Index i = 0; i < model.m(); ++i) excitation(i, t) = u(rng);
    return collect_open_loop(model, excitation, noise_std, seed);
}

Problem random_problem(std::uint64_t seed, const ProblemOptions& o) {
    std::mt19937_64 rng(seed);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    const int m = pick(1, o.max_io);
    const int p = pick(1, o.max_io);
    const int n = pick(2, 3);
    const HorizonSpec horizon(pick(o.min_past, o.max_past), pick(o.min_future, o.max_future));
    const StateSpaceModel model = random_model(rng, n, m, p);

    const int rows = (m + p) * horizon.depth();
    int columns = 2 * rows + 20;
    if (o.max_columns > 0) columns = std::min(columns, o.max_columns);
    if (columns < rows + 10) throw std::invalid_argument("max_columns too small for the drawn horizons");

    Problem pr{.part = partition(white_dataset(model, columns + horizon.depth() - 1, o.noise_std, seed), horizon),
               .blocks = {}, .split = {}, .z_p = {}, .r_f = {}, .spec = {}};
    pr.blocks = factorize(pr.part);
    pr.split = causal_split(pr.blocks);

    const Trajectory tail = white_dataset(model, horizon.past, o.noise_std, seed + 7919);
    pr.z_p = stack_past(tail.inputs(), tail.outputs());
    pr.r_f = random_matrix(rng, p * horizon.future, 1);

    pr.spec.horizon = horizon;
    pr.spec.cost = CostSpec::diagonal(p, m, 1.0, 0.1);
    pr.spec.box = BoxConstraints::symmetric(m, p, o.u_bound, o.y_bound);
    pr.spec.qp.eps_abs = 1e-10;
    pr.spec.qp.eps_rel = 1e-10;
    return pr;
}

namespace {

// One-sided row a'x <= b of the oracle's working problem.
struct Row {
    Eigen::VectorXd a;
    double b;
    bool equality;
};

std::vector<Row> one_sided_rows(const QpProblem& qp) {
    std::vector<Row> rows;
    for (Eigen::Index j = 0; j < qp.constraints(); ++j) {
        const Eigen::VectorXd a = qp.A.row(j).transpose();
        if (qp.lower(j) == qp.upper(j)) {
            rows.push_back({a, qp.upper(j), true});
            continue;
        }
        if (std::isfinite(qp.upper(j))) rows.push_back({a, qp.upper(j), false});
        if (std::isfinite(qp.lower(j))) rows.push_back({-a, -qp.lower(j), false});
    }
    return rows;
}

// Solves min 1/2 x'Px + q'x s.t. a_i'x = b_i (i in active). Returns false on a
// singular KKT matrix.
bool equality_qp(const QpProblem& qp, const std::vector<Row>& rows, const std::vector<int>& active,
                 Eigen::VectorXd& x, Eigen::VectorXd& lambda) {
    const Eigen::Index n = qp.variables();
    const Eigen::Index k = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + k, n + k);
    Eigen::VectorXd rhs(n + k);
    kkt.topLeftCorner(n, n) = qp.P;
    rhs.head(n) = -qp.q;
    for (Eigen::Index i = 0; i < k; ++i) {
        kkt.block(0, n + i, n, 1) = rows[active[i]].a;
        kkt.block(n + i, 0, 1, n) = rows[active[i]].a.transpose();
        rhs(n + i) = rows[active[i]].b;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) return false;
    const Eigen::VectorXd sol = lu.solve(rhs);
    x = sol.head(n);
    lambda = sol.tail(k);
    return true;
}

}  // namespace

Eigen::VectorXd active_set_oracle(const QpProblem& qp) {
    const std::vector<Row> rows = one_sided_rows(qp);
    const Eigen::Index n = qp.variables();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    std::vector<int> work;
    for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
        if (rows[i].equality) work.push_back(i);
        else if (rows[i].a.dot(x) > rows[i].b + 1e-12) throw std::invalid_argument("origin is infeasible");
    }

    for (int iter = 0; iter < 10000; ++iter) {
        // Step p solves the EQP in the shifted variable with the working rows tight.
        QpProblem shifted = qp;
        shifted.q = qp.P * x + qp.q;
        std::vector<Row> homogeneous = rows;
        for (Row& r : homogeneous) r.b = 0.0;
        Eigen::VectorXd step, lambda;
        if (!equality_qp(shifted, homogeneous, work, step, lambda))
            throw std::runtime_error("active-set oracle: singular working set");

        if (step.lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + x.lpNorm<Eigen::Infinity>())) {
            // lambda here is the multiplier with P p + g + A_W' lambda = 0.
            int drop = -1;
            double most = -1e-12;
            for (int i = 0; i < static_cast<int>(work.size()); ++i) {
                if (rows[work[i]].equality) continue;
                if (lambda(i) < most) {
                    most = lambda(i);
                    drop = i;
                }
            }
            if (drop < 0) return x;
            work.erase(work.begin() + drop);
            continue;
        }

        double alpha = 1.0;
        int blocking = -1;
        for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
            if (std::find(work.begin(), work.end(), i) != work.end()) continue;
            const double ap = rows[i].a.dot(step);
            if (ap <= 1e-14) continue;
            const double t = (rows[i].b - rows[i].a.dot(x)) / ap;
            if (t < alpha) {
                alpha = std::max(t, 0.0);
                blocking = i;
            }
        }
        x += alpha * step;
        if (blocking >= 0) work.push_back(blocking);
    }
    throw std::runtime_error("active-set oracle did not converge");
}

Eigen::VectorXd enumeration_oracle(const QpProblem& qp) {
    const std::vector<Row> rows = one_sided_rows(qp);
    const int count = static_cast<int>(rows.size());
    if (count > 16) throw std::invalid_argument("enumeration oracle is for tiny problems");
    for (long mask = 0; mask < (1L << count); ++mask) {
        std::vector<int> active;
        bool skip = false;
        for (int i = 0; i < count; ++i) {
            const bool on = (mask >> i) & 1;
            if (rows[i].equality && !on) skip = true;
            if (on) active.push_back(i);
        }
        if (skip) continue;
        Eigen::VectorXd x, lambda;
        if (!equality_qp(qp, rows, active, x, lambda)) continue;
        bool ok = true;
        for (int i = 0; i < count && ok; ++i) ok = rows[i].a.dot(x) <= rows[i].b + 1e-9;
        for (int i = 0; i < static_cast<int>(active.size()) && ok; ++i)
            ok = rows[active[i]].equality || lambda(i) >= -1e-9;
        if (ok) return x;
    }
    throw std::runtime_error("enumeration oracle found no KKT point");
}

double KktResiduals::max() const { return std::max({stationarity, primal, complementarity, dual_sign}); }

KktResiduals kkt_residuals(const QpProblem& qp, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    KktResiduals r;
    r.stationarity = (qp.P * x + qp.q + qp.A.transpose() * y).lpNorm<Eigen::Infinity>();
    const Eigen::VectorXd ax = qp.A * x;
    for (Eigen::Index j = 0; j < qp.constraints(); ++j) {
        r.primal = std::max({r.primal, ax(j) - qp.upper(j), qp.lower(j) - ax(j)});
        const double up = std::max(y(j), 0.0);
        const double lo = std::max(-y(j), 0.0);
        if (std::isfinite(qp.upper(j))) r.complementarity = std::max(r.complementarity, up * std::abs(qp.upper(j) - ax(j)));
        else r.dual_sign = std::max(r.dual_sign, up);
        if (std::isfinite(qp.lower(j))) r.complementarity = std::max(r.complementarity, lo * std::abs(ax(j) - qp.lower(j)));
        else r.dual_sign = std::max(r.dual_sign, lo);
    }
    return r;
}

QpProblem random_qp(std::mt19937_64& rng, int n, int k) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    QpProblem qp;
    const Eigen::MatrixXd m = random_matrix(rng, n, n);
    qp.P = m.transpose() * m / n + 0.1 * Eigen::MatrixXd::Identity(n, n);
    qp.q = random_matrix(rng, n, 1, 3.0);
    qp.A = random_matrix(rng, k, n);
    // Plain variable bounds first, then general rows.
    for (int i = 0; i < std::min(n, k); ++i) qp.A.row(i) = Eigen::RowVectorXd::Unit(n, i);
    qp.lower.resize(k);
    qp.upper.resize(k);
    for (int j = 0; j < k; ++j) {
        qp.lower(j) = unit(rng) < 0.1 ? -kInfinity : -(0.2 + unit(rng));
        qp.upper(j) = unit(rng) < 0.1 ? kInfinity : 0.2 + unit(rng);
    }
    return qp;
}

}  // namespace cddpc::fixtures
