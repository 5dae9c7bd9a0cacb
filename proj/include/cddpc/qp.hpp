#pragma once

#include <limits>
#include <string>

#include <Eigen/Dense>

namespace cddpc {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// minimize 1/2 x'Px + q'x  subject to  lower <= Ax <= upper.
/// Equality rows have lower == upper; bounds may be +-infinity.
struct QpProblem {
    Eigen::MatrixXd P;
    Eigen::VectorXd q;
    Eigen::MatrixXd A;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;

    Eigen::Index variables() const { return q.size(); }
    Eigen::Index constraints() const { return A.rows(); }

    /// Throws DimensionMismatch / InvalidArgument on a malformed problem.
    void validate() const;
    double objective(const Eigen::VectorXd& x) const;
};

enum class QpStatus { Solved, MaxIter, PrimalInfeasible, DualInfeasible };

const char* to_string(QpStatus status);

struct QpSettings {
    double eps_abs = 1e-8;
    double eps_rel = 1e-8;
    double eps_primal_infeasible = 1e-5;
    double eps_dual_infeasible = 1e-5;
    int max_iter = 50000;
    double rho = 0.1;
    double sigma = 1e-6;
    double alpha = 1.6;
    bool adaptive_rho = true;
    int adaptive_rho_interval = 25;
    double adaptive_rho_tolerance = 5.0;
    int check_interval = 5;
    int scaling_iterations = 10;
    bool polish = true;
    double polish_delta = 1e-6;
    int polish_refine_iterations = 5;
};

struct QpSolution {
    Eigen::VectorXd x;
    Eigen::VectorXd y;
    QpStatus status = QpStatus::MaxIter;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double objective = 0.0;
    int iterations = 0;
    bool polished = false;
};

/// Operator-splitting (ADMM) solver for dense convex QPs with Ruiz
/// equilibration, residual-balanced step size and active-set polishing.
///
/// The matrices are fixed at construction; q and the bounds can be updated
/// between solves, and each solve warm-starts from the previous iterate.
/// Single-threaded; not shareable during a solve.
class QpSolver {
public:
    explicit QpSolver(QpProblem problem, QpSettings settings = {});

    void update_linear_cost(const Eigen::VectorXd& q);
    void update_bounds(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper);
    /// Seeds the next solve with an unscaled primal/dual pair.
    void warm_start(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

    QpSolution solve();

    const QpProblem& problem() const { return problem_; }
    const QpSettings& settings() const { return settings_; }

private:
    struct Residuals {
        double primal = 0, dual = 0, eps_primal = 0, eps_dual = 0;
        double primal_scale = 0, dual_scale = 0;  // for step-size balancing (scaled space)
    };

    void equilibrate();
    void set_rho(double rho);
    void scale_vectors();
    Residuals residuals(const Eigen::VectorXd& xs, const Eigen::VectorXd& zs, const Eigen::VectorXd& ys) const;
    bool primal_infeasible(const Eigen::VectorXd& dy) const;
    bool dual_infeasible(const Eigen::VectorXd& dx) const;
    bool try_polish(const Eigen::VectorXd& xs, const Eigen::VectorXd& zs, const Eigen::VectorXd& ys,
                    QpSolution& out) const;
    QpSolution finish(QpStatus status, const Eigen::VectorXd& xs, const Eigen::VectorXd& ys, const Residuals& r,
                      int iterations) const;

    QpProblem problem_;
    QpSettings settings_;

    // Scaled data.
    Eigen::VectorXd d_, e_;
    double c_ = 1.0;
    Eigen::MatrixXd ps_, as_;
    Eigen::VectorXd qs_, ls_, us_;
    Eigen::Array<bool, Eigen::Dynamic, 1> equality_;

    double rho_ = 0.1;
    Eigen::VectorXd rho_vec_;
    Eigen::LLT<Eigen::MatrixXd> kkt_;
    Eigen::LLT<Eigen::MatrixXd> polish_hessian_;

    Eigen::VectorXd x_, z_, y_;  // scaled iterates kept for warm starts
};

QpSolution solve(const QpProblem& problem, const QpSettings& settings = {});

}  // namespace cddpc
