#include "cddpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cddpc/error.hpp"

namespace cddpc {

const char* to_string(QpStatus status) {
    switch (status) {
        case QpStatus::Solved: return "Solved";
        case QpStatus::MaxIter: return "MaxIter";
        case QpStatus::PrimalInfeasible: return "PrimalInfeasible";
        case QpStatus::DualInfeasible: return "DualInfeasible";
    }
    return "Unknown";
}

void QpProblem::validate() const {
    const Eigen::Index n = q.size();
    require(P.rows() == n && P.cols() == n, ErrorKind::DimensionMismatch, "QP: P must be n x n");
    require(A.cols() == n || A.rows() == 0, ErrorKind::DimensionMismatch, "QP: A must have n columns");
    require(lower.size() == A.rows() && upper.size() == A.rows(), ErrorKind::DimensionMismatch,
            "QP: bounds must have one entry per constraint row");
    const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
    require(n == 0 || (P - P.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale, ErrorKind::InvalidArgument,
            "QP: P is not symmetric");
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
        require(!(lower(i) > upper(i)), ErrorKind::InvalidArgument,
                "QP: lower bound exceeds upper bound in row " + std::to_string(i));
    }
}

double QpProblem::objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(P * x) + q.dot(x); }

namespace {

constexpr double kMinScaling = 1e-4;
constexpr double kMaxScaling = 1e4;
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kEqualityRhoFactor = 1e3;

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

double clamp_scaling(double v) {
    if (v < kMinScaling) return 1.0;
    return std::min(v, kMaxScaling);
}

}  // namespace

QpSolver::QpSolver(QpProblem problem, QpSettings settings)
    : problem_(std::move(problem)), settings_(settings) {
    if (problem_.A.rows() == 0) problem_.A.resize(0, problem_.q.size());
    problem_.validate();
    problem_.P = 0.5 * (problem_.P + problem_.P.transpose());
    const Eigen::Index n = problem_.variables(), k = problem_.constraints();
    equality_.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) equality_(i) = problem_.lower(i) == problem_.upper(i);

    equilibrate();
    scale_vectors();

    x_ = Eigen::VectorXd::Zero(n);
    z_ = Eigen::VectorXd::Zero(k);
    y_ = Eigen::VectorXd::Zero(k);
    set_rho(settings_.rho);

    Eigen::MatrixXd h = ps_;
    h.diagonal().array() += settings_.polish_delta;
    polish_hessian_.compute(h);
}

void QpSolver::equilibrate() {
    const Eigen::Index n = problem_.variables(), k = problem_.constraints();
    d_ = Eigen::VectorXd::Ones(n);
    e_ = Eigen::VectorXd::Ones(k);
    ps_ = problem_.P;
    as_ = problem_.A;
    c_ = 1.0;
    for (int it = 0; it < settings_.scaling_iterations && n > 0; ++it) {
        Eigen::VectorXd dd(n), de(k);
        for (Eigen::Index j = 0; j < n; ++j) {
            double col = ps_.col(j).cwiseAbs().maxCoeff();
            if (k > 0) col = std::max(col, as_.col(j).cwiseAbs().maxCoeff());
            dd(j) = 1.0 / std::sqrt(clamp_scaling(col));
        }
        for (Eigen::Index i = 0; i < k; ++i) de(i) = 1.0 / std::sqrt(clamp_scaling(as_.row(i).cwiseAbs().maxCoeff()));
        ps_ = dd.asDiagonal() * ps_ * dd.asDiagonal();
        as_ = de.asDiagonal() * as_ * dd.asDiagonal();
        d_.array() *= dd.array();
        e_.array() *= de.array();
    }
    if (n > 0) {
        const double mean_col = ps_.cwiseAbs().colwise().maxCoeff().mean();
        c_ = 1.0 / clamp_scaling(mean_col);
        ps_ *= c_;
    }
}

void QpSolver::scale_vectors() {
    qs_ = c_ * d_.cwiseProduct(problem_.q);
    ls_ = e_.cwiseProduct(problem_.lower);
    us_ = e_.cwiseProduct(problem_.upper);
}

void QpSolver::set_rho(double rho) {
    rho_ = std::clamp(rho, kRhoMin, kRhoMax);
    const Eigen::Index k = problem_.constraints();
    rho_vec_.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const bool free_row = std::isinf(problem_.lower(i)) && std::isinf(problem_.upper(i));
        rho_vec_(i) = free_row ? kRhoMin : (equality_(i) ? kEqualityRhoFactor * rho_ : rho_);
    }
    Eigen::MatrixXd kkt = ps_ + as_.transpose() * rho_vec_.asDiagonal() * as_;
    kkt.diagonal().array() += settings_.sigma;
    kkt_.compute(kkt);
}

void QpSolver::update_linear_cost(const Eigen::VectorXd& q) {
    require(q.size() == problem_.variables(), ErrorKind::DimensionMismatch, "QP: q has wrong size");
    problem_.q = q;
    qs_ = c_ * d_.cwiseProduct(q);
}

void QpSolver::update_bounds(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
    require(lower.size() == problem_.constraints() && upper.size() == problem_.constraints(),
            ErrorKind::DimensionMismatch, "QP: bounds have wrong size");
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
        require(!(lower(i) > upper(i)), ErrorKind::InvalidArgument, "QP: lower bound exceeds upper bound");
        require((lower(i) == upper(i)) == static_cast<bool>(equality_(i)), ErrorKind::InvalidArgument,
                "QP: bound update changes which rows are equalities");
    }
    problem_.lower = lower;
    problem_.upper = upper;
    ls_ = e_.cwiseProduct(lower);
    us_ = e_.cwiseProduct(upper);
}

void QpSolver::warm_start(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    require(x.size() == problem_.variables() && y.size() == problem_.constraints(), ErrorKind::DimensionMismatch,
            "QP: warm start has wrong size");
    x_ = x.cwiseQuotient(d_);
    y_ = c_ * y.cwiseQuotient(e_);
    z_ = as_ * x_;
}

QpSolver::Residuals QpSolver::residuals(const Eigen::VectorXd& xs, const Eigen::VectorXd& zs,
                                        const Eigen::VectorXd& ys) const {
    Residuals r;
    const Eigen::VectorXd ax = as_ * xs;
    const Eigen::VectorXd px = ps_ * xs;
    const Eigen::VectorXd aty = as_.transpose() * ys;
    const Eigen::VectorXd einv = e_.cwiseInverse();
    const Eigen::VectorXd dinv = d_.cwiseInverse();

    r.primal = inf_norm(einv.cwiseProduct(ax - zs));
    r.eps_primal = settings_.eps_abs +
                   settings_.eps_rel * std::max(inf_norm(einv.cwiseProduct(ax)), inf_norm(einv.cwiseProduct(zs)));
    r.dual = inf_norm(dinv.cwiseProduct(px + qs_ + aty)) / c_;
    r.eps_dual = settings_.eps_abs + settings_.eps_rel / c_ *
                                         std::max({inf_norm(dinv.cwiseProduct(px)), inf_norm(dinv.cwiseProduct(aty)),
                                                   inf_norm(dinv.cwiseProduct(qs_))});

    r.primal_scale = std::max(inf_norm(ax), inf_norm(zs));
    r.dual_scale = std::max({inf_norm(px), inf_norm(aty), inf_norm(qs_)});
    return r;
}

bool QpSolver::primal_infeasible(const Eigen::VectorXd& dy_scaled) const {
    const Eigen::VectorXd dy = e_.cwiseProduct(dy_scaled);
    const double norm = inf_norm(dy);
    if (norm < 1e-30) return false;
    const double eps = settings_.eps_primal_infeasible * norm;
    if (inf_norm(problem_.A.transpose() * dy) > eps) return false;
    double support = 0.0;
    for (Eigen::Index i = 0; i < dy.size(); ++i) {
        if (dy(i) > 0.0) {
            if (std::isinf(problem_.upper(i))) return false;
            support += problem_.upper(i) * dy(i);
        } else if (dy(i) < 0.0) {
            if (std::isinf(problem_.lower(i))) return false;
            support += problem_.lower(i) * dy(i);
        }
    }
    return support < -eps;
}

bool QpSolver::dual_infeasible(const Eigen::VectorXd& dx_scaled) const {
    const Eigen::VectorXd dx = d_.cwiseProduct(dx_scaled);
    const double norm = inf_norm(dx);
    if (norm < 1e-30) return false;
    const double eps = settings_.eps_dual_infeasible * norm;
    if (problem_.q.dot(dx) > -eps) return false;
    if (inf_norm(problem_.P * dx) > eps) return false;
    const Eigen::VectorXd adx = problem_.A * dx;
    for (Eigen::Index i = 0; i < adx.size(); ++i) {
        const bool lo_inf = std::isinf(problem_.lower(i)), hi_inf = std::isinf(problem_.upper(i));
        if (lo_inf && hi_inf) continue;
        if (hi_inf) {
            if (adx(i) < -eps) return false;
        } else if (lo_inf) {
            if (adx(i) > eps) return false;
        } else if (std::abs(adx(i)) > eps) {
            return false;
        }
    }
    return true;
}

QpSolution QpSolver::finish(QpStatus status, const Eigen::VectorXd& xs, const Eigen::VectorXd& ys,
                            const Residuals& r, int iterations) const {
    QpSolution s;
    s.status = status;
    s.x = d_.cwiseProduct(xs);
    s.y = e_.cwiseProduct(ys) / c_;
    s.primal_residual = r.primal;
    s.dual_residual = r.dual;
    s.iterations = iterations;
    s.objective = problem_.objective(s.x);
    return s;
}

// Guesses the active set from the ADMM iterate, solves the equality-constrained
// KKT system on it, and accepts the point only if it passes the full
// optimality test (primal feasibility, stationarity, dual signs).
bool QpSolver::try_polish(const Eigen::VectorXd& xs, const Eigen::VectorXd& zs, const Eigen::VectorXd& ys,
                          QpSolution& out) const {
    (void)xs;
    const Eigen::Index k = problem_.constraints();
    std::vector<Eigen::Index> rows;
    std::vector<double> targets;
    std::vector<int> side;  // -1 lower, +1 upper, 0 equality
    for (Eigen::Index i = 0; i < k; ++i) {
        if (equality_(i)) {
            rows.push_back(i);
            targets.push_back(ls_(i));
            side.push_back(0);
        } else if (!std::isinf(ls_(i)) && zs(i) - ls_(i) < -ys(i)) {
            rows.push_back(i);
            targets.push_back(ls_(i));
            side.push_back(-1);
        } else if (!std::isinf(us_(i)) && us_(i) - zs(i) < ys(i)) {
            rows.push_back(i);
            targets.push_back(us_(i));
            side.push_back(1);
        }
    }
    const auto na = static_cast<Eigen::Index>(rows.size());
    const Eigen::MatrixXd aa = as_(rows, Eigen::all);
    const Eigen::VectorXd ba = Eigen::Map<const Eigen::VectorXd>(targets.data(), na);
    const double delta = settings_.polish_delta;

    // Schur complement of the regularized KKT matrix [[P + dI, Aa'], [Aa, -dI]].
    Eigen::LLT<Eigen::MatrixXd> schur;
    Eigen::MatrixXd hinv_at;
    if (na > 0) {
        hinv_at = polish_hessian_.solve(aa.transpose());
        Eigen::MatrixXd s = aa * hinv_at;
        s.diagonal().array() += delta;
        schur.compute(s);
        if (schur.info() != Eigen::Success) return false;
    }
    auto solve_reg = [&](const Eigen::VectorXd& r1, const Eigen::VectorXd& r2, Eigen::VectorXd& x, Eigen::VectorXd& y) {
        const Eigen::VectorXd hr1 = polish_hessian_.solve(r1);
        if (na > 0) {
            y = schur.solve(aa * hr1 - r2);
            x = hr1 - hinv_at * y;
        } else {
            y.resize(0);
            x = hr1;
        }
    };

    Eigen::VectorXd x, ya;
    solve_reg(-qs_, ba, x, ya);
    for (int it = 0; it < settings_.polish_refine_iterations; ++it) {
        const Eigen::VectorXd r1 = -qs_ - ps_ * x - aa.transpose() * ya;
        const Eigen::VectorXd r2 = ba - aa * x;
        Eigen::VectorXd dx, dy;
        solve_reg(r1, r2, dx, dy);
        x += dx;
        ya += dy;
    }

    Eigen::VectorXd y = Eigen::VectorXd::Zero(k);
    for (Eigen::Index j = 0; j < na; ++j) y(rows[static_cast<std::size_t>(j)]) = ya(j);

    // Verify in unscaled space.
    const Eigen::VectorXd xu = d_.cwiseProduct(x);
    const Eigen::VectorXd yu = e_.cwiseProduct(y) / c_;
    const Eigen::VectorXd ax = problem_.A * xu;
    const Eigen::VectorXd zu = ax.cwiseMax(problem_.lower).cwiseMin(problem_.upper);
    const Eigen::VectorXd px = problem_.P * xu;
    const Eigen::VectorXd aty = problem_.A.transpose() * yu;
    const double primal = inf_norm(ax - zu);
    const double dual = inf_norm(px + problem_.q + aty);
    const double eps_primal = settings_.eps_abs + settings_.eps_rel * std::max(inf_norm(ax), inf_norm(zu));
    const double eps_dual =
        settings_.eps_abs + settings_.eps_rel * std::max({inf_norm(px), inf_norm(aty), inf_norm(problem_.q)});
    if (!(primal <= eps_primal && dual <= eps_dual)) return false;
    for (Eigen::Index j = 0; j < na; ++j) {
        const double yj = yu(rows[static_cast<std::size_t>(j)]);
        const int s = side[static_cast<std::size_t>(j)];
        if ((s < 0 && yj > eps_dual) || (s > 0 && yj < -eps_dual)) return false;
    }

    out.status = QpStatus::Solved;
    out.x = xu;
    out.y = yu;
    out.primal_residual = primal;
    out.dual_residual = dual;
    out.objective = problem_.objective(xu);
    out.polished = true;
    return true;
}

QpSolution QpSolver::solve() {
    const Eigen::Index k = problem_.constraints();
    const double alpha = settings_.alpha, sigma = settings_.sigma;
    Eigen::VectorXd x = x_, z = z_, y = y_;
    Eigen::VectorXd x_prev, y_prev;
    std::vector<signed char> last_active, tried_active;
    bool tried_any = false;

    auto active_pattern = [&](const Eigen::VectorXd& zz, const Eigen::VectorXd& yy) {
        std::vector<signed char> pat(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < k; ++i) {
            if (!std::isinf(ls_(i)) && zz(i) - ls_(i) < -yy(i)) pat[static_cast<std::size_t>(i)] = -1;
            else if (!std::isinf(us_(i)) && us_(i) - zz(i) < yy(i)) pat[static_cast<std::size_t>(i)] = 1;
        }
        return pat;
    };

    Residuals r{};
    int iter = 0;
    for (iter = 1; iter <= settings_.max_iter; ++iter) {
        x_prev = x;
        y_prev = y;
        const Eigen::VectorXd rhs = sigma * x - qs_ + as_.transpose() * (rho_vec_.cwiseProduct(z) - y);
        const Eigen::VectorXd xt = kkt_.solve(rhs);
        const Eigen::VectorXd zt = as_ * xt;
        x = alpha * xt + (1.0 - alpha) * x_prev;
        const Eigen::VectorXd zh = alpha * zt + (1.0 - alpha) * z;
        const Eigen::VectorXd z_new = (zh + y.cwiseQuotient(rho_vec_)).cwiseMax(ls_).cwiseMin(us_);
        y = y + rho_vec_.cwiseProduct(zh - z_new);
        z = z_new;

        const bool check = iter % settings_.check_interval == 0;
        const bool adapt = settings_.adaptive_rho && k > 0 && iter % settings_.adaptive_rho_interval == 0;
        if (!check && !adapt) continue;

        r = residuals(x, z, y);
        if (check) {
            if (r.primal <= r.eps_primal && r.dual <= r.eps_dual) {
                x_ = x;
                z_ = z;
                y_ = y;
                QpSolution out;
                if (settings_.polish && try_polish(x, z, y, out)) {
                    out.iterations = iter;
                    return out;
                }
                return finish(QpStatus::Solved, x, y, r, iter);
            }
            if (primal_infeasible(y - y_prev)) {
                x_.setZero();
                z_.setZero();
                y_.setZero();
                return finish(QpStatus::PrimalInfeasible, x, y - y_prev, r, iter);
            }
            if (dual_infeasible(x - x_prev)) {
                x_.setZero();
                z_.setZero();
                y_.setZero();
                return finish(QpStatus::DualInfeasible, x - x_prev, y, r, iter);
            }
            if (settings_.polish) {
                auto pat = active_pattern(z, y);
                if (pat == last_active && (!tried_any || pat != tried_active)) {
                    tried_any = true;
                    tried_active = pat;
                    QpSolution out;
                    if (try_polish(x, z, y, out)) {
                        x_ = out.x.cwiseQuotient(d_);
                        y_ = c_ * out.y.cwiseQuotient(e_);
                        z_ = (as_ * x_).cwiseMax(ls_).cwiseMin(us_);
                        out.iterations = iter;
                        return out;
                    }
                }
                last_active = std::move(pat);
            }
        }
        if (adapt) {
            const double pn = r.primal_scale > 0 ? inf_norm(as_ * x - z) / r.primal_scale : 0.0;
            const double dn = r.dual_scale > 0 ? inf_norm(ps_ * x + qs_ + as_.transpose() * y) / r.dual_scale : 0.0;
            if (pn > 0 && dn > 0) {
                const double rho_new = std::clamp(rho_ * std::sqrt(pn / dn), kRhoMin, kRhoMax);
                const double tol = settings_.adaptive_rho_tolerance;
                if (rho_new > tol * rho_ || rho_new < rho_ / tol) set_rho(rho_new);
            }
        }
    }
    x_ = x;
    z_ = z;
    y_ = y;
    r = residuals(x, z, y);
    return finish(QpStatus::MaxIter, x, y, r, settings_.max_iter);
}

QpSolution solve(const QpProblem& problem, const QpSettings& settings) {
    QpSolver solver(problem, settings);
    return solver.solve();
}

}  // namespace cddpc
