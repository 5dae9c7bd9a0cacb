#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cddpc/lq.hpp"
#include "cddpc/predictor.hpp"
#include "cddpc/qp.hpp"
#include "cddpc/sim.hpp"
#include "cddpc/traj.hpp"

namespace cddpc {

/// Stage weights; the horizon cost is ||y_f - r||^2_Q + ||u_f||^2_R with the
/// stage weights repeated along the block diagonal.
struct CostSpec {
    Eigen::MatrixXd output_weight;  // p x p, PSD
    Eigen::MatrixXd input_weight;   // m x m, PD

    static CostSpec diagonal(int p, int m, double q, double r);
    void validate() const;

    Eigen::MatrixXd horizon_output_weight(int future) const;
    Eigen::MatrixXd horizon_input_weight(int future) const;
};

/// Per-step bounds, repeated along the horizon. Entries may be +-infinity.
struct BoxConstraints {
    Eigen::VectorXd u_lo, u_hi;
    Eigen::VectorXd y_lo, y_hi;

    static BoxConstraints unbounded(int m, int p);
    static BoxConstraints symmetric(int m, int p, double u_bound, double y_bound);
    void validate() const;
};

enum class ControllerKind {
    Spc,                 // SPC predictor, decision u_f
    CausalSpc,           // causal predictor, decision u_f
    GammaDdpc,           // (gamma2, gamma3), mu ||gamma3||^2
    GammaDdpcHard,       // gamma2 only, gamma3 = 0
    CausalGammaDdpc,     // gamma2 only, causal part of L32
    RegGammaDdpc,        // as GammaDdpc, mu chosen by tuning
    RegCausalGammaDdpc,  // (gamma2, gamma2', gamma3), lambda ||gamma2'||^2 + mu ||gamma3||^2
    ProjRegDdpc,         // g-space, mu ||(I - Pi) g||^2
    KfMpc,               // known model with steady-state Kalman filter
};

const char* to_string(ControllerKind kind);
/// Short identifiers used in configs and CSV files (spc, c_spc, gamma, ...).
const char* controller_id(ControllerKind kind);
ControllerKind controller_kind_from_id(const std::string& id);

struct ControllerSpec {
    ControllerKind kind = ControllerKind::CausalGammaDdpc;
    double mu = 1e10;
    double lambda = 1e10;
    HorizonSpec horizon;
    CostSpec cost;
    BoxConstraints box;
    QpSettings qp;
    /// When a step is primal infeasible, re-solve it with the output bounds
    /// dropped instead of aborting the run.
    bool relax_output_bounds = false;

    void validate() const;
};

/// Decision vector x and context c (z_p, or the state estimate for KF-MPC):
///   u_f = u_gain x + u_context c
///   y_f = y_gain x + y_context c
///   eq_gain x = eq_context c
/// plus the regularizer x' regularizer x.
struct Formulation {
    Eigen::MatrixXd u_gain, u_context;
    Eigen::MatrixXd y_gain, y_context;
    Eigen::MatrixXd regularizer;
    Eigen::MatrixXd eq_gain, eq_context;

    Eigen::Index decision_size() const { return u_gain.cols(); }
};

Formulation predictor_formulation(const Predictor& pred);
Formulation gamma_formulation(const LqBlocks& blocks, double mu);
Formulation gamma_hard_formulation(const LqBlocks& blocks);
Formulation causal_gamma_formulation(const LqBlocks& blocks, const CausalSplit& split);
Formulation reg_causal_gamma_formulation(const LqBlocks& blocks, const CausalSplit& split, double lambda, double mu);
Formulation projreg_formulation(const HankelPartition& part, double mu);
Formulation kf_mpc_formulation(const StateSpaceModel& model, int future);

/// Orthogonal projector onto the row space of [Z_p; U_f] (M x M).
Eigen::MatrixXd row_space_projector(const HankelPartition& part);

struct CondensedQp {
    QpProblem qp;
    double constant = 0.0;  // objective offset: J + regularizer = qp objective + constant
};

/// Eliminates u_f and y_f, leaving a QP over the decision vector. Box rows
/// with both bounds infinite are dropped.
CondensedQp condense(const Formulation& f, const Eigen::VectorXd& context, const Eigen::VectorXd& reference,
                     const CostSpec& cost, const BoxConstraints& box, int future);

struct StepResult {
    Eigen::VectorXd u_applied;
    Eigen::VectorXd u_f;
    Eigen::VectorXd y_hat;
    Eigen::VectorXd decision;
    QpStatus status = QpStatus::MaxIter;
    double objective = 0.0;  // J(u_f, y_hat) plus regularizer
    int iterations = 0;
    bool relaxed = false;  // output bounds were dropped for this step
};

/// Prediction matrices of a state-space model: y_f = obs x + toeplitz u_f.
struct PredictionMatrices {
    Eigen::MatrixXd observability;  // pL_f x n
    Eigen::MatrixXd toeplitz;       // pL_f x mL_f
};
PredictionMatrices prediction_matrices(const StateSpaceModel& model, int future);

/// Steady-state Kalman filter in innovation form.
Eigen::VectorXd kf_update(const StateSpaceModel& model, const Eigen::VectorXd& x_hat, const Eigen::VectorXd& u,
                          const Eigen::VectorXd& y);

/// Data a controller is built from. Only the members its kind needs are read.
struct ControllerData {
    std::shared_ptr<const LqBlocks> blocks;
    std::shared_ptr<const HankelPartition> partition;  // ProjRegDdpc
    std::optional<StateSpaceModel> model;              // KfMpc
};

/// One controller instance: fixed formulation, cached QP solver warm-started
/// between receding-horizon steps, and (for KF-MPC) the filter state.
class Controller {
public:
    Controller(ControllerSpec spec, Formulation formulation, std::optional<StateSpaceModel> model = std::nullopt);

    /// Solves the horizon problem for past data z_p and preview r_f.
    StepResult step(const Eigen::VectorXd& z_p, const Eigen::VectorXd& r_f);
    /// Feeds an applied input and measured output (updates the KF state).
    void observe(const Eigen::VectorXd& u, const Eigen::VectorXd& y);

    const ControllerSpec& spec() const { return spec_; }
    const Formulation& formulation() const { return formulation_; }

private:
    ControllerSpec spec_;
    Formulation formulation_;
    std::optional<StateSpaceModel> model_;
    Eigen::VectorXd x_hat_;
    std::unique_ptr<QpSolver> solver_;
    std::unique_ptr<QpSolver> relaxed_solver_;
};

Controller make_controller(const ControllerSpec& spec, const ControllerData& data);

// One-shot solves of a single horizon problem.
StepResult solve_spc(const LqBlocks& blocks, const Eigen::VectorXd& z_p, const Eigen::VectorXd& r_f,
                     const ControllerSpec& spec);
StepResult solve_causal_spc(const LqBlocks& blocks, const Eigen::VectorXd& z_p, const Eigen::VectorXd& r_f,
                            const ControllerSpec& spec);
StepResult solve_gamma(const LqBlocks& blocks, const Eigen::VectorXd& z_p, const Eigen::VectorXd& r_f,
                       const ControllerSpec& spec);
StepResult solve_gamma_hard(const LqBlocks& blocks, const Eigen::VectorXd& z_p, const Eigen::VectorXd& r_f,
                            const ControllerSpec& spec);
StepResult solve_causal_gamma(const LqBlocks& blocks, const CausalSplit& split, const Eigen::VectorXd& z_p,
                              const Eigen::VectorXd& r_f, const ControllerSpec& spec);
StepResult solve_reg_causal_gamma(const LqBlocks& blocks, const CausalSplit& split, const Eigen::VectorXd& z_p,
                                  const Eigen::VectorXd& r_f, const ControllerSpec& spec);
StepResult solve_projreg_g(const HankelPartition& part, const Eigen::VectorXd& z_p, const Eigen::VectorXd& r_f,
                           const ControllerSpec& spec);
StepResult solve_kf_mpc(const StateSpaceModel& model, const Eigen::VectorXd& x_hat, const Eigen::VectorXd& r_f,
                        const ControllerSpec& spec);

/// Per-channel reference r_i(t) = offset_i + amplitude_i * wave_i(t).
class Reference {
public:
    enum class Shape { Constant, Sine, Square };
    struct Channel {
        Shape shape = Shape::Sine;
        double amplitude = 1.0;
        double period = 60.0;
        double offset = 0.0;
    };

    Reference() = default;
    explicit Reference(std::vector<Channel> channels) : channels_(std::move(channels)) {}
    static Reference sine(int p, double amplitude, double period);
    static Reference zero(int p);

    Eigen::Index channels() const { return static_cast<Eigen::Index>(channels_.size()); }
    Eigen::VectorXd at(int t) const;
    /// col(r(t), ..., r(t + future - 1))
    Eigen::VectorXd preview(int t, int future) const;

private:
    std::vector<Channel> channels_;
};

struct RecedingHorizonOptions {
    int steps = 60;                // N_c
    double noise_std = 0.0;
    std::uint64_t seed = 0;
    Eigen::MatrixXd warmup_inputs;  // m x L_p applied before the first solve
    Reference reference;
};

struct ClosedLoopRun {
    Trajectory trajectory;          // the N_c controlled samples
    Eigen::MatrixXd references;     // p x N_c
    std::vector<StepResult> steps;
    Eigen::VectorXd cumulative_cost;
    double cost = 0.0;              // J = output_cost + input_cost
    double output_cost = 0.0;
    double input_cost = 0.0;
    long qp_iterations = 0;
    QpStatus status = QpStatus::Solved;  // worst status of the steps that were applied
    int relaxed_steps = 0;
    bool aborted = false;
};

/// Warm-up with the given inputs, then N_c receding-horizon steps: build
/// z_p from the last L_p samples, solve, apply the first input, advance.
/// Stops early (aborted = true) on an infeasible or unbounded QP, or when the
/// output exceeds 1e6; the trajectory then holds the applied steps only.
ClosedLoopRun run_receding_horizon(const PlantModel& plant, Controller& controller,
                                   const RecedingHorizonOptions& options);

/// Per-step CSV: t,u1..um,y1..yp,r1..rp,J_cum,qp_iters,qp_status
void write_run_csv(std::ostream& out, const ClosedLoopRun& run);

}  // namespace cddpc
