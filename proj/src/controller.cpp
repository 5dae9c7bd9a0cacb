#include "cddpc/controller.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <string>

#include "cddpc/csv.hpp"
#include "cddpc/linalg.hpp"

namespace cddpc {

namespace {

constexpr double kPsdTolerance = 1e-12;

void require_psd(const Eigen::MatrixXd& w, bool strict, const char* what) {
    require(w.rows() == w.cols(), ErrorKind::DimensionMismatch, std::string(what) + " must be square");
    const double scale = std::max(1.0, w.cwiseAbs().maxCoeff());
    require((w - w.transpose()).cwiseAbs().maxCoeff() <= kPsdTolerance * scale, ErrorKind::InvalidArgument,
            std::string(what) + " must be symmetric");
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(w, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    if (strict) {
        require(lo > kPsdTolerance * scale, ErrorKind::InvalidArgument, std::string(what) + " must be positive definite");
    } else {
        require(lo >= -kPsdTolerance * scale, ErrorKind::InvalidArgument,
                std::string(what) + " must be positive semidefinite");
    }
}

void require_bounds(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, const char* what) {
    require(lo.size() == hi.size(), ErrorKind::DimensionMismatch, std::string(what) + " bounds differ in size");
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
        require(!(lo(i) > hi(i)) && !std::isnan(lo(i)) && !std::isnan(hi(i)), ErrorKind::InvalidArgument,
                std::string(what) + " lower bound exceeds upper bound");
    }
}

// L11^{-1}, or the stored left inverse when the past block was compressed.
Eigen::MatrixXd past_solve(const LqBlocks& b) {
    if (b.compressed()) return b.l11_left_inverse;
    const Eigen::Index n = b.l11.rows();
    return b.l11.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
}

Formulation gamma_base(const LqBlocks& b, const Eigen::MatrixXd& y_decision) {
    const Eigen::MatrixXd g1 = past_solve(b);
    const Eigen::Index nd = y_decision.cols();
    Formulation f;
    f.u_gain = Eigen::MatrixXd::Zero(b.l22.rows(), nd);
    f.u_gain.leftCols(b.l22.cols()) = b.l22;
    f.u_context = b.l21 * g1;
    f.y_gain = y_decision;
    f.y_context = b.l31 * g1;
    f.regularizer = Eigen::MatrixXd::Zero(nd, nd);
    f.eq_gain.resize(0, nd);
    f.eq_context.resize(0, g1.cols());
    return f;
}

bool row_bounded(double lo, double hi) { return std::isfinite(lo) || std::isfinite(hi); }

Eigen::VectorXd clip(const Eigen::VectorXd& v, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    return v.cwiseMax(lo).cwiseMin(hi);
}

int severity(QpStatus s) {
    switch (s) {
        case QpStatus::Solved: return 0;
        case QpStatus::MaxIter: return 1;
        case QpStatus::DualInfeasible: return 2;
        case QpStatus::PrimalInfeasible: return 3;
    }
    return 3;
}

StepResult one_shot(const ControllerSpec& spec, Formulation f, const Eigen::VectorXd& context,
                    const Eigen::VectorXd& r_f) {
    const CondensedQp c = condense(f, context, r_f, spec.cost, spec.box, spec.horizon.future);
    const QpSolution sol = solve(c.qp, spec.qp);
    StepResult out;
    out.decision = sol.x;
    out.u_f = f.u_gain * sol.x + f.u_context * context;
    out.y_hat = f.y_gain * sol.x + f.y_context * context;
    out.u_applied = out.u_f.head(spec.cost.input_weight.rows());
    out.status = sol.status;
    out.objective = sol.objective + c.constant;
    out.iterations = sol.iterations;
    return out;
}

}  // namespace

CostSpec CostSpec::diagonal(int p, int m, double q, double r) {
    return {q * Eigen::MatrixXd::Identity(p, p), r * Eigen::MatrixXd::Identity(m, m)};
}

void CostSpec::validate() const {
    require(output_weight.rows() >= 1, ErrorKind::DimensionMismatch, "output weight is empty");
    require(input_weight.rows() >= 1, ErrorKind::DimensionMismatch, "input weight is empty");
    require_psd(output_weight, false, "output weight Q");
    require_psd(input_weight, true, "input weight R");
}

Eigen::MatrixXd CostSpec::horizon_output_weight(int future) const { return repeat_diagonal(output_weight, future); }
Eigen::MatrixXd CostSpec::horizon_input_weight(int future) const { return repeat_diagonal(input_weight, future); }

BoxConstraints BoxConstraints::unbounded(int m, int p) {
    return {Eigen::VectorXd::Constant(m, -kInfinity), Eigen::VectorXd::Constant(m, kInfinity),
            Eigen::VectorXd::Constant(p, -kInfinity), Eigen::VectorXd::Constant(p, kInfinity)};
}

BoxConstraints BoxConstraints::symmetric(int m, int p, double u_bound, double y_bound) {
    return {Eigen::VectorXd::Constant(m, -u_bound), Eigen::VectorXd::Constant(m, u_bound),
            Eigen::VectorXd::Constant(p, -y_bound), Eigen::VectorXd::Constant(p, y_bound)};
}

void BoxConstraints::validate() const {
    require_bounds(u_lo, u_hi, "input");
    require_bounds(y_lo, y_hi, "output");
}

const char* to_string(ControllerKind kind) {
    switch (kind) {
        case ControllerKind::Spc: return "SPC";
        case ControllerKind::CausalSpc: return "C-SPC";
        case ControllerKind::GammaDdpc: return "gamma-DDPC";
        case ControllerKind::GammaDdpcHard: return "gamma-DDPC (gamma3 = 0)";
        case ControllerKind::CausalGammaDdpc: return "C-gamma-DDPC";
        case ControllerKind::RegGammaDdpc: return "R-gamma-DDPC";
        case ControllerKind::RegCausalGammaDdpc: return "RC-gamma-DDPC";
        case ControllerKind::ProjRegDdpc: return "R-DDPC";
        case ControllerKind::KfMpc: return "KF-MPC";
    }
    return "unknown";
}

namespace {
struct KindId {
    ControllerKind kind;
    const char* id;
};
constexpr KindId kKindIds[] = {
    {ControllerKind::Spc, "spc"},
    {ControllerKind::CausalSpc, "c_spc"},
    {ControllerKind::GammaDdpc, "gamma"},
    {ControllerKind::GammaDdpcHard, "gamma_hard"},
    {ControllerKind::CausalGammaDdpc, "c_gamma"},
    {ControllerKind::RegGammaDdpc, "r_gamma"},
    {ControllerKind::RegCausalGammaDdpc, "rc_gamma"},
    {ControllerKind::ProjRegDdpc, "r_ddpc"},
    {ControllerKind::KfMpc, "kf_mpc"},
};
}  // namespace

const char* controller_id(ControllerKind kind) {
    for (const auto& k : kKindIds) {
        if (k.kind == kind) return k.id;
    }
    return "unknown";
}

ControllerKind controller_kind_from_id(const std::string& id) {
    for (const auto& k : kKindIds) {
        if (id == k.id) return k.kind;
    }
    throw Error(ErrorKind::InvalidArgument, "unknown controller id '" + id + "'");
}

void ControllerSpec::validate() const {
    require(horizon.past >= 1 && horizon.future >= 1, ErrorKind::InvalidArgument, "horizons must be >= 1");
    require(mu >= 0.0 && lambda >= 0.0, ErrorKind::InvalidArgument, "regularization weights must be >= 0");
    cost.validate();
    box.validate();
    require(box.u_lo.size() == cost.input_weight.rows() && box.y_lo.size() == cost.output_weight.rows(),
            ErrorKind::DimensionMismatch, "box constraints and cost weights disagree on channel counts");
}

Formulation predictor_formulation(const Predictor& pred) {
    const Eigen::Index nu = pred.future_gain.cols();
    Formulation f;
    f.u_gain = Eigen::MatrixXd::Identity(nu, nu);
    f.u_context = Eigen::MatrixXd::Zero(nu, pred.past_gain.cols());
    f.y_gain = pred.future_gain;
    f.y_context = pred.past_gain;
    f.regularizer = Eigen::MatrixXd::Zero(nu, nu);
    f.eq_gain.resize(0, nu);
    f.eq_context.resize(0, pred.past_gain.cols());
    return f;
}

Formulation gamma_formulation(const LqBlocks& blocks, double mu) {
    const Eigen::Index nu = blocks.l22.cols(), ny = blocks.l33.cols();
    Eigen::MatrixXd yd(blocks.l32.rows(), nu + ny);
    yd << blocks.l32, blocks.l33;
    Formulation f = gamma_base(blocks, yd);
    f.regularizer.bottomRightCorner(ny, ny).diagonal().setConstant(mu);
    return f;
}

Formulation gamma_hard_formulation(const LqBlocks& blocks) { return gamma_base(blocks, blocks.l32); }

Formulation causal_gamma_formulation(const LqBlocks& blocks, const CausalSplit& split) {
    return gamma_base(blocks, split.causal);
}

Formulation reg_causal_gamma_formulation(const LqBlocks& blocks, const CausalSplit& split, double lambda,
                                         double mu) {
    const Eigen::Index nu = blocks.l22.cols(), ny = blocks.l33.cols();
    Eigen::MatrixXd yd(blocks.l32.rows(), 2 * nu + ny);
    yd << split.causal, split.noncausal, blocks.l33;
    Formulation f = gamma_base(blocks, yd);
    f.regularizer.diagonal().segment(nu, nu).setConstant(lambda);
    f.regularizer.diagonal().tail(ny).setConstant(mu);
    return f;
}

Eigen::MatrixXd row_space_projector(const HankelPartition& part) {
    const Eigen::MatrixXd reg = part.regressor();
    return pinv(reg) * reg;
}

Formulation projreg_formulation(const HankelPartition& part, double mu) {
    const Eigen::Index cols = part.columns();
    Formulation f;
    f.u_gain = part.future_input;
    f.u_context = Eigen::MatrixXd::Zero(part.future_input.rows(), part.past.rows());
    f.y_gain = part.future_output;
    f.y_context = Eigen::MatrixXd::Zero(part.future_output.rows(), part.past.rows());
    Eigen::MatrixXd residual = Eigen::MatrixXd::Identity(cols, cols) - row_space_projector(part);
    // I - Pi is symmetric and idempotent, so (I - Pi)'(I - Pi) = I - Pi.
    f.regularizer = mu * 0.5 * (residual + residual.transpose());
    f.eq_gain = part.past;
    f.eq_context = Eigen::MatrixXd::Identity(part.past.rows(), part.past.rows());
    return f;
}

PredictionMatrices prediction_matrices(const StateSpaceModel& model, int future) {
    model.validate();
    require(future >= 1, ErrorKind::InvalidArgument, "future horizon must be >= 1");
    const Eigen::Index n = model.n(), m = model.m(), p = model.p();
    PredictionMatrices pm;
    pm.observability.resize(p * future, n);
    pm.toeplitz = Eigen::MatrixXd::Zero(p * future, m * future);
    // Markov parameters: h_0 = D, h_k = C A^{k-1} B.
    std::vector<Eigen::MatrixXd> markov(future);
    markov[0] = model.D;
    Eigen::MatrixXd cak = model.C;
    for (int k = 0; k < future; ++k) {
        pm.observability.middleRows(k * p, p) = cak;
        if (k + 1 < future) markov[k + 1] = cak * model.B;
        cak = cak * model.A;
    }
    for (int i = 0; i < future; ++i) {
        for (int j = 0; j <= i; ++j) pm.toeplitz.block(i * p, j * m, p, m) = markov[i - j];
    }
    return pm;
}

Formulation kf_mpc_formulation(const StateSpaceModel& model, int future) {
    const PredictionMatrices pm = prediction_matrices(model, future);
    const Eigen::Index nu = pm.toeplitz.cols(), n = model.n();
    Formulation f;
    f.u_gain = Eigen::MatrixXd::Identity(nu, nu);
    f.u_context = Eigen::MatrixXd::Zero(nu, n);
    f.y_gain = pm.toeplitz;
    f.y_context = pm.observability;
    f.regularizer = Eigen::MatrixXd::Zero(nu, nu);
    f.eq_gain.resize(0, nu);
    f.eq_context.resize(0, n);
    return f;
}

Eigen::VectorXd kf_update(const StateSpaceModel& model, const Eigen::VectorXd& x_hat, const Eigen::VectorXd& u,
                          const Eigen::VectorXd& y) {
    require(x_hat.size() == model.n() && u.size() == model.m() && y.size() == model.p(),
            ErrorKind::DimensionMismatch, "kf_update: dimension mismatch");
    return model.A * x_hat + model.B * u + model.K * (y - model.C * x_hat - model.D * u);
}

CondensedQp condense(const Formulation& f, const Eigen::VectorXd& context, const Eigen::VectorXd& reference,
                     const CostSpec& cost, const BoxConstraints& box, int future) {
    const Eigen::Index nu = f.u_gain.rows(), ny = f.y_gain.rows(), nd = f.decision_size();
    const Eigen::Index m = cost.input_weight.rows(), p = cost.output_weight.rows();
    require(nu == m * future && ny == p * future, ErrorKind::DimensionMismatch,
            "condense: formulation does not match cost weights and horizon");
    require(f.y_gain.cols() == nd && f.regularizer.rows() == nd && f.regularizer.cols() == nd,
            ErrorKind::DimensionMismatch, "condense: inconsistent decision size");
    require(context.size() == f.u_context.cols() && context.size() == f.y_context.cols(),
            ErrorKind::DimensionMismatch, "condense: context has size " + std::to_string(context.size()) +
                                              ", expected " + std::to_string(f.u_context.cols()));
    require(reference.size() == ny, ErrorKind::DimensionMismatch, "condense: reference must have p*L_f entries");
    require(box.u_lo.size() == m && box.y_lo.size() == p, ErrorKind::DimensionMismatch,
            "condense: box constraints do not match channel counts");

    const Eigen::MatrixXd qh = cost.horizon_output_weight(future);
    const Eigen::MatrixXd rh = cost.horizon_input_weight(future);
    const Eigen::VectorXd bu = f.u_context * context;
    const Eigen::VectorXd dy = f.y_context * context - reference;

    const Eigen::MatrixXd qgy = qh * f.y_gain;
    const Eigen::MatrixXd rgu = rh * f.u_gain;
    CondensedQp out;
    out.qp.P = 2.0 * (f.y_gain.transpose() * qgy + f.u_gain.transpose() * rgu + f.regularizer);
    out.qp.P = 0.5 * (out.qp.P + out.qp.P.transpose()).eval();
    out.qp.q = 2.0 * (qgy.transpose() * dy + rgu.transpose() * bu);
    out.constant = dy.dot(qh * dy) + bu.dot(rh * bu);

    std::vector<Eigen::Index> urows, yrows;
    for (Eigen::Index i = 0; i < nu; ++i) {
        if (row_bounded(box.u_lo(i % m), box.u_hi(i % m))) urows.push_back(i);
    }
    for (Eigen::Index i = 0; i < ny; ++i) {
        if (row_bounded(box.y_lo(i % p), box.y_hi(i % p))) yrows.push_back(i);
    }
    const Eigen::Index ne = f.eq_gain.rows();
    const Eigen::Index k = static_cast<Eigen::Index>(urows.size() + yrows.size()) + ne;
    out.qp.A.resize(k, nd);
    out.qp.lower.resize(k);
    out.qp.upper.resize(k);
    Eigen::Index row = 0;
    for (Eigen::Index i : urows) {
        out.qp.A.row(row) = f.u_gain.row(i);
        out.qp.lower(row) = box.u_lo(i % m) - bu(i);
        out.qp.upper(row) = box.u_hi(i % m) - bu(i);
        ++row;
    }
    const Eigen::VectorXd by = f.y_context * context;
    for (Eigen::Index i : yrows) {
        out.qp.A.row(row) = f.y_gain.row(i);
        out.qp.lower(row) = box.y_lo(i % p) - by(i);
        out.qp.upper(row) = box.y_hi(i % p) - by(i);
        ++row;
    }
    if (ne > 0) {
        const Eigen::VectorXd rhs = f.eq_context * context;
        out.qp.A.bottomRows(ne) = f.eq_gain;
        out.qp.lower.tail(ne) = rhs;
        out.qp.upper.tail(ne) = rhs;
    }
    return out;
}

Controller::Controller(ControllerSpec spec, Formulation formulation, std::optional<StateSpaceModel> model)
    : spec_(std::move(spec)), formulation_(std::move(formulation)), model_(std::move(model)) {
    spec_.validate();
    if (spec_.kind == ControllerKind::KfMpc) {
        require(model_.has_value(), ErrorKind::InvalidArgument, "KF-MPC needs a state-space model");
        x_hat_ = Eigen::VectorXd::Zero(model_->n());
    }
}

StepResult Controller::step(const Eigen::VectorXd& z_p, const Eigen::VectorXd& r_f) {
    const Eigen::VectorXd& context = model_ ? x_hat_ : z_p;
    const int lf = spec_.horizon.future;
    auto run = [&](std::unique_ptr<QpSolver>& solver, const BoxConstraints& box, double& constant) {
        const CondensedQp c = condense(formulation_, context, r_f, spec_.cost, box, lf);
        constant = c.constant;
        if (!solver) {
            solver = std::make_unique<QpSolver>(c.qp, spec_.qp);
        } else {
            solver->update_linear_cost(c.qp.q);
            solver->update_bounds(c.qp.lower, c.qp.upper);
        }
        return solver->solve();
    };

    double constant = 0.0;
    QpSolution sol = run(solver_, spec_.box, constant);
    StepResult out;
    if (sol.status == QpStatus::PrimalInfeasible && spec_.relax_output_bounds) {
        BoxConstraints inputs_only = spec_.box;
        inputs_only.y_lo.setConstant(-kInfinity);
        inputs_only.y_hi.setConstant(kInfinity);
        const int spent = sol.iterations;
        sol = run(relaxed_solver_, inputs_only, constant);
        sol.iterations += spent;
        out.relaxed = true;
    }
    out.decision = sol.x;
    out.u_f = formulation_.u_gain * sol.x + formulation_.u_context * context;
    if (sol.status == QpStatus::MaxIter) {
        out.u_f = clip(out.u_f, tile(spec_.box.u_lo, lf), tile(spec_.box.u_hi, lf));
    }
    out.y_hat = formulation_.y_gain * sol.x + formulation_.y_context * context;
    out.u_applied = out.u_f.head(spec_.cost.input_weight.rows());
    out.status = sol.status;
    out.objective = sol.objective + constant;
    out.iterations = sol.iterations;
    return out;
}

void Controller::observe(const Eigen::VectorXd& u, const Eigen::VectorXd& y) {
    if (model_) x_hat_ = kf_update(*model_, x_hat_, u, y);
}

Controller make_controller(const ControllerSpec& spec, const ControllerData& data) {
    auto need_blocks = [&]() -> const LqBlocks& {
        require(data.blocks != nullptr, ErrorKind::InvalidArgument,
                std::string(to_string(spec.kind)) + " needs an LQ factorization");
        return *data.blocks;
    };
    switch (spec.kind) {
        case ControllerKind::Spc: return Controller(spec, predictor_formulation(fit_spc(need_blocks())));
        case ControllerKind::CausalSpc: return Controller(spec, predictor_formulation(fit_causal(need_blocks())));
        case ControllerKind::GammaDdpc:
        case ControllerKind::RegGammaDdpc: return Controller(spec, gamma_formulation(need_blocks(), spec.mu));
        case ControllerKind::GammaDdpcHard: return Controller(spec, gamma_hard_formulation(need_blocks()));
        case ControllerKind::CausalGammaDdpc: {
            const LqBlocks& b = need_blocks();
            return Controller(spec, causal_gamma_formulation(b, causal_split(b)));
        }
        case ControllerKind::RegCausalGammaDdpc: {
            const LqBlocks& b = need_blocks();
            return Controller(spec, reg_causal_gamma_formulation(b, causal_split(b), spec.lambda, spec.mu));
        }
        case ControllerKind::ProjRegDdpc:
            require(data.partition != nullptr, ErrorKind::InvalidArgument, "R-DDPC needs the Hankel partition");
            return Controller(spec, projreg_formulation(*data.partition, spec.mu));
        case ControllerKind::KfMpc:
            require(data.model.has_value(), ErrorKind::InvalidArgument, "KF-MPC needs a state-space model");
            return Controller(spec, kf_mpc_formulation(*data.model, spec.horizon.future), data.model);
    }
    throw Error(ErrorKind::InvalidArgument, "unknown controller kind");
}

StepResult solve_spc(const LqBlocks& blocks, const Eigen::VectorXd& z_p, const Eigen::VectorXd& r_f,
                     const ControllerSpec& spec) {
    return one_shot(spec, predictor_formulation(fit_spc(blocks)), z_p, r_f);
}

StepResult solve_causal_spc(const LqBlocks& blocks, const Eigen::VectorXd& z_p, const Eigen::VectorXd& r_f,
                            const ControllerSpec& spec) {
    return one_shot(spec, predictor_formulation(fit_causal(blocks)), z_p, r_f);
}

StepResult solve_gamma(const LqBlocks& blocks, const Eigen::VectorXd& z_p, const Eigen::VectorXd& r_f,
                       const ControllerSpec& spec) {
    return one_shot(spec, gamma_formulation(blocks, spec.mu), z_p, r_f);
}

StepResult solve_gamma_hard(const LqBlocks& blocks, const Eigen::VectorXd& z_p, const Eigen::VectorXd& r_f,
                            const ControllerSpec& spec) {
    return one_shot(spec, gamma_hard_formulation(blocks), z_p, r_f);
}

StepResult solve_causal_gamma(const LqBlocks& blocks, const CausalSplit& split, const Eigen::VectorXd& z_p,
                              const Eigen::VectorXd& r_f, const ControllerSpec& spec) {
    return one_shot(spec, causal_gamma_formulation(blocks, split), z_p, r_f);
}

StepResult solve_reg_causal_gamma(const LqBlocks& blocks, const CausalSplit& split, const Eigen::VectorXd& z_p,
                                  const Eigen::VectorXd& r_f, const ControllerSpec& spec) {
    return one_shot(spec, reg_causal_gamma_formulation(blocks, split, spec.lambda, spec.mu), z_p, r_f);
}

StepResult solve_projreg_g(const HankelPartition& part, const Eigen::VectorXd& z_p, const Eigen::VectorXd& r_f,
                           const ControllerSpec& spec) {
    return one_shot(spec, projreg_formulation(part, spec.mu), z_p, r_f);
}

StepResult solve_kf_mpc(const StateSpaceModel& model, const Eigen::VectorXd& x_hat, const Eigen::VectorXd& r_f,
                        const ControllerSpec& spec) {
    return one_shot(spec, kf_mpc_formulation(model, spec.horizon.future), x_hat, r_f);
}

Reference Reference::sine(int p, double amplitude, double period) {
    return Reference(std::vector<Channel>(p, Channel{Shape::Sine, amplitude, period, 0.0}));
}

Reference Reference::zero(int p) { return Reference(std::vector<Channel>(p, Channel{Shape::Constant, 0.0, 1.0, 0.0})); }

Eigen::VectorXd Reference::at(int t) const {
    Eigen::VectorXd r(channels());
    for (Eigen::Index i = 0; i < channels(); ++i) {
        const Channel& c = channels_[i];
        double wave = 0.0;
        switch (c.shape) {
            case Shape::Constant: wave = 1.0; break;
            case Shape::Sine: wave = std::sin(2.0 * std::numbers::pi * t / c.period); break;
            case Shape::Square: {
                const double phase = std::fmod(static_cast<double>(t), c.period);
                wave = (phase < 0 ? phase + c.period : phase) < c.period / 2 ? 1.0 : -1.0;
                break;
            }
        }
        r(i) = c.offset + c.amplitude * wave;
    }
    return r;
}

Eigen::VectorXd Reference::preview(int t, int future) const {
    Eigen::VectorXd r(channels() * future);
    for (int k = 0; k < future; ++k) r.segment(k * channels(), channels()) = at(t + k);
    return r;
}

ClosedLoopRun run_receding_horizon(const PlantModel& plant_model, Controller& controller,
                                   const RecedingHorizonOptions& options) {
    Plant plant(plant_model);
    const StateSpaceModel& lin = plant.linear();
    const Eigen::Index m = lin.m(), p = lin.p();
    const ControllerSpec& spec = controller.spec();
    const int lp = spec.horizon.past, lf = spec.horizon.future, nc = options.steps;
    require(nc >= 1, ErrorKind::InvalidArgument, "number of control steps must be >= 1");
    require(spec.cost.input_weight.rows() == m && spec.cost.output_weight.rows() == p, ErrorKind::DimensionMismatch,
            "controller and plant disagree on channel counts");
    require(options.reference.channels() == p, ErrorKind::DimensionMismatch, "reference must have p channels");
    Eigen::MatrixXd warm = options.warmup_inputs;
    if (warm.size() == 0) warm = Eigen::MatrixXd::Zero(m, lp);
    require(warm.rows() == m && warm.cols() == lp, ErrorKind::DimensionMismatch, "warm-up inputs must be m x L_p");

    const Eigen::MatrixXd e = innovations(p, lp + nc, options.noise_std, options.seed, kControlStream);
    Eigen::MatrixXd u_hist(m, lp + nc), y_hist(p, lp + nc);
    for (int t = 0; t < lp; ++t) {
        u_hist.col(t) = warm.col(t);
        y_hist.col(t) = plant.step(warm.col(t), e.col(t));
        controller.observe(u_hist.col(t), y_hist.col(t));
    }

    ClosedLoopRun run;
    run.references.resize(p, nc);
    run.cumulative_cost = Eigen::VectorXd::Zero(nc);
    run.steps.reserve(nc);
    const Eigen::MatrixXd& q = spec.cost.output_weight;
    const Eigen::MatrixXd& r = spec.cost.input_weight;
    int done = 0;
    for (int k = 0; k < nc; ++k) {
        const int t = k + 1;
        const int col = lp + k;
        const Eigen::VectorXd z_p = stack_past(u_hist.middleCols(col - lp, lp), y_hist.middleCols(col - lp, lp));
        StepResult sr = controller.step(z_p, options.reference.preview(t, lf));
        run.qp_iterations += sr.iterations;
        if (sr.status == QpStatus::PrimalInfeasible || sr.status == QpStatus::DualInfeasible) {
            run.status = sr.status;
            run.aborted = true;
            break;
        }
        if (severity(sr.status) > severity(run.status)) run.status = sr.status;
        if (sr.relaxed) ++run.relaxed_steps;
        const Eigen::VectorXd u = sr.u_applied;
        const Eigen::VectorXd y = plant.step(u, e.col(col));
        controller.observe(u, y);
        u_hist.col(col) = u;
        y_hist.col(col) = y;

        const Eigen::VectorXd ref = options.reference.at(t);
        run.references.col(k) = ref;
        const Eigen::VectorXd err = y - ref;
        const double jy = err.dot(q * err), ju = u.dot(r * u);
        run.output_cost += jy;
        run.input_cost += ju;
        run.cumulative_cost(k) = run.output_cost + run.input_cost;
        run.steps.push_back(std::move(sr));
        ++done;
        if (!y.allFinite() || y.cwiseAbs().maxCoeff() > 1e6) {
            run.aborted = true;
            break;
        }
    }
    run.cost = run.output_cost + run.input_cost;
    run.references.conservativeResize(p, done);
    run.cumulative_cost.conservativeResize(done);
    if (done > 0) run.trajectory = Trajectory(u_hist.middleCols(lp, done), y_hist.middleCols(lp, done));
    return run;
}

void write_run_csv(std::ostream& out, const ClosedLoopRun& run) {
    const Eigen::Index m = run.trajectory.m(), p = run.trajectory.p();
    out << "t";
    for (Eigen::Index i = 1; i <= m; ++i) out << ",u" << i;
    for (Eigen::Index i = 1; i <= p; ++i) out << ",y" << i;
    for (Eigen::Index i = 1; i <= p; ++i) out << ",r" << i;
    out << ",J_cum,qp_iters,qp_status\n";
    for (Eigen::Index t = 0; t < run.trajectory.length(); ++t) {
        out << (t + 1);
        for (Eigen::Index i = 0; i < m; ++i) out << ',' << csv::format_double(run.trajectory.inputs()(i, t));
        for (Eigen::Index i = 0; i < p; ++i) out << ',' << csv::format_double(run.trajectory.outputs()(i, t));
        for (Eigen::Index i = 0; i < p; ++i) out << ',' << csv::format_double(run.references(i, t));
        out << ',' << csv::format_double(run.cumulative_cost(t)) << ',' << run.steps[t].iterations << ','
            << to_string(run.steps[t].status) << '\n';
    }
}

}  // namespace cddpc
