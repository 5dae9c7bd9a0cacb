#include "cddpc/sim.hpp"

#include <cmath>
#include <string>

#include "cddpc/linalg.hpp"
#include "cddpc/rng.hpp"

namespace cddpc {

namespace {

constexpr double kDivergenceThreshold = 1e6;

void check_vector(const Eigen::VectorXd& v, Eigen::Index size, const char* what) {
    if (v.size() != size) {
        throw Error(ErrorKind::DimensionMismatch, std::string(what) + " has size " + std::to_string(v.size()) +
                                                      ", expected " + std::to_string(size));
    }
}

}  // namespace

void StateSpaceModel::validate() const {
    const Eigen::Index nn = A.rows();
    require(A.cols() == nn && nn >= 1, ErrorKind::DimensionMismatch, "A must be square");
    require(B.rows() == nn && B.cols() >= 1, ErrorKind::DimensionMismatch, "B must be n x m");
    require(C.cols() == nn && C.rows() >= 1, ErrorKind::DimensionMismatch, "C must be p x n");
    require(D.rows() == C.rows() && D.cols() == B.cols(), ErrorKind::DimensionMismatch, "D must be p x m");
    require(K.rows() == nn && K.cols() == C.rows(), ErrorKind::DimensionMismatch, "K must be n x p");
    require(noise_std >= 0.0, ErrorKind::InvalidArgument, "noise_std must be >= 0");
}

int StateSpaceModel::lag() const {
    validate();
    Eigen::MatrixXd obs(0, n());
    Eigen::MatrixXd cak = C;
    for (int l = 1; l <= n(); ++l) {
        obs.conservativeResize(obs.rows() + p(), Eigen::NoChange);
        obs.bottomRows(p()) = cak;
        if (numerical_rank(obs) == n()) return l;
        cak = cak * A;
    }
    throw Error(ErrorKind::InvalidArgument, "model is not observable");
}

StateSpaceModel StateSpaceModel::benchmark_siso() {
    StateSpaceModel s;
    s.A = (Eigen::MatrixXd(2, 2) << 0.7326, -0.0861, 0.1722, 0.9909).finished();
    s.B = (Eigen::MatrixXd(2, 1) << 0.0609, 0.0064).finished();
    s.C = (Eigen::MatrixXd(1, 2) << 0.0, 1.4142).finished();
    s.D = Eigen::MatrixXd::Ones(1, 1);
    s.K = (Eigen::MatrixXd(2, 1) << -0.3645, 0.9973).finished();
    return s;
}

StateSpaceModel StateSpaceModel::benchmark_mimo() {
    StateSpaceModel s;
    s.A = (Eigen::MatrixXd(2, 2) << 0.85, 0.05, 0.0, 0.7).finished();
    s.B = (Eigen::MatrixXd(2, 2) << 0.08, 0.04, 0.03, 0.1).finished();
    s.C = Eigen::MatrixXd::Identity(2, 2);
    s.D = Eigen::MatrixXd::Zero(2, 2);
    s.K = (Eigen::MatrixXd(2, 2) << 0.3, 0.0, 0.0, 0.2).finished();
    return s;
}

void NonlinearWrapper::validate() const {
    base.validate();
    require(epsilon >= 0.0 && epsilon <= 1.0, ErrorKind::InvalidArgument, "epsilon must lie in [0, 1]");
}

void LinearFeedbackController::validate(Eigen::Index plant_inputs, Eigen::Index plant_outputs) const {
    const Eigen::Index nc = Ac.rows();
    require(Ac.cols() == nc, ErrorKind::DimensionMismatch, "Ac must be square");
    require(Bc.rows() == nc && Bc.cols() == plant_outputs, ErrorKind::DimensionMismatch, "Bc must be nc x p");
    require(Cc.rows() == plant_inputs && Cc.cols() == nc, ErrorKind::DimensionMismatch, "Cc must be m x nc");
    require(Dc.rows() == plant_inputs && Dc.cols() == plant_outputs, ErrorKind::DimensionMismatch,
            "Dc must be m x p");
}

LinearFeedbackController LinearFeedbackController::benchmark_pi() {
    LinearFeedbackController c;
    c.Ac = (Eigen::MatrixXd(2, 2) << 1.0, 0.0, 1.0, 0.0).finished();
    c.Cc = c.Ac;
    c.Bc = (Eigen::MatrixXd(2, 2) << 0.08, 0.0, 0.29, 0.0).finished();
    c.Dc = (Eigen::MatrixXd(2, 2) << 0.32, 0.0, 0.62, 0.0).finished();
    return c;
}

PlantStep step_lti(const StateSpaceModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                   const Eigen::VectorXd& e) {
    check_vector(x, model.n(), "state");
    check_vector(u, model.m(), "input");
    check_vector(e, model.p(), "innovation");
    return {model.A * x + model.B * u + model.K * e, model.C * x + model.D * u + e};
}

Eigen::VectorXd distort_state(double epsilon, const Eigen::VectorXd& x) {
    return ((1.0 - epsilon) * x.array() + 0.5 * epsilon * x.array().cube()).matrix();
}

Eigen::VectorXd distort_input(double epsilon, const Eigen::VectorXd& u) {
    return ((1.0 - epsilon) * u.array() + epsilon * (u.array().sin() + 2.0 * u.array().cube())).matrix();
}

PlantStep step_nonlinear(const NonlinearWrapper& plant, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                         const Eigen::VectorXd& e) {
    const StateSpaceModel& s = plant.base;
    check_vector(x, s.n(), "state");
    check_vector(u, s.m(), "input");
    check_vector(e, s.p(), "innovation");
    const Eigen::VectorXd ut = distort_input(plant.epsilon, u);
    return {s.A * distort_state(plant.epsilon, x) + s.B * ut + s.K * e, s.C * x + s.D * ut + e};
}

const StateSpaceModel& linear_part(const PlantModel& model) {
    if (const auto* lin = std::get_if<StateSpaceModel>(&model)) return *lin;
    return std::get<NonlinearWrapper>(model).base;
}

Plant::Plant(PlantModel model) : model_(std::move(model)) {
    std::visit([](const auto& m) { m.validate(); }, model_);
    x_ = Eigen::VectorXd::Zero(linear().n());
}

Eigen::VectorXd Plant::step(const Eigen::VectorXd& u, const Eigen::VectorXd& e) {
    PlantStep s = std::visit(
        [&](const auto& m) {
            if constexpr (std::is_same_v<std::decay_t<decltype(m)>, StateSpaceModel>) {
                return step_lti(m, x_, u, e);
            } else {
                return step_nonlinear(m, x_, u, e);
            }
        },
        model_);
    x_ = std::move(s.x_next);
    return std::move(s.y);
}

Eigen::RowVectorXd square_wave(int period, double amplitude, int length) {
    require(period >= 2, ErrorKind::InvalidArgument, "square wave period must be >= 2");
    require(length >= 1, ErrorKind::InvalidArgument, "square wave length must be >= 1");
    Eigen::RowVectorXd s(length);
    for (int t = 0; t < length; ++t) s(t) = (t % period) < period / 2 ? amplitude : -amplitude;
    return s;
}

Eigen::MatrixXd innovations(Eigen::Index p, Eigen::Index length, double noise_std, std::uint64_t seed,
                            std::uint64_t stream, Eigen::Index offset) {
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(p, length);
    if (noise_std == 0.0) return e;
    const NoiseStream gen(seed, stream);
    for (Eigen::Index t = 0; t < length; ++t) {
        for (Eigen::Index i = 0; i < p; ++i) {
            e(i, t) = noise_std * gen.normal(static_cast<std::uint64_t>((offset + t) * p + i));
        }
    }
    return e;
}

Trajectory collect_open_loop(const PlantModel& model, const Eigen::MatrixXd& excitation, double noise_std,
                             std::uint64_t seed) {
    Plant plant(model);
    const StateSpaceModel& lin = plant.linear();
    require(excitation.rows() == lin.m(), ErrorKind::DimensionMismatch, "excitation must have m rows");
    const Eigen::Index n = excitation.cols();
    const Eigen::MatrixXd e = innovations(lin.p(), n, noise_std, seed, kDataStream);
    Eigen::MatrixXd y(lin.p(), n);
    for (Eigen::Index t = 0; t < n; ++t) y.col(t) = plant.step(excitation.col(t), e.col(t));
    return Trajectory(excitation, std::move(y));
}

Trajectory collect_closed_loop(const PlantModel& model, const LinearFeedbackController& fb,
                               const Eigen::MatrixXd& setpoints, double noise_std, std::uint64_t seed,
                               const Eigen::MatrixXd& dither) {
    Plant plant(model);
    const StateSpaceModel& lin = plant.linear();
    fb.validate(lin.m(), lin.p());
    require(setpoints.rows() == lin.p(), ErrorKind::DimensionMismatch, "setpoints must have p rows");
    const Eigen::Index n = setpoints.cols();
    const Eigen::MatrixXd e = innovations(lin.p(), n, noise_std, seed, kDataStream);
    const bool nonlinear = std::holds_alternative<NonlinearWrapper>(model);
    require(dither.size() == 0 || (dither.rows() == lin.m() && dither.cols() == n), ErrorKind::DimensionMismatch,
            "dither must be m x N_d");

    // With feedthrough D the loop is algebraic: (I + Dc D) u = Cc xc + Dc (r - C x - e - D d) + d.
    const Eigen::MatrixXd loop = Eigen::MatrixXd::Identity(lin.m(), lin.m()) + fb.Dc * lin.D;
    const Eigen::FullPivLU<Eigen::MatrixXd> loop_lu(loop);
    require(loop_lu.isInvertible(), ErrorKind::InvalidArgument, "feedback loop is ill-posed");
    require(!nonlinear || lin.D.isZero(0.0), ErrorKind::InvalidArgument,
            "closed-loop collection needs D = 0 for nonlinear plants");

    Eigen::VectorXd xc = Eigen::VectorXd::Zero(fb.Ac.rows());
    Eigen::MatrixXd u(lin.m(), n), y(lin.p(), n);
    for (Eigen::Index t = 0; t < n; ++t) {
        const Eigen::VectorXd& x = plant.state();
        Eigen::VectorXd rhs = fb.Cc * xc + fb.Dc * (setpoints.col(t) - lin.C * x - e.col(t));
        if (dither.size() != 0) rhs += dither.col(t) - fb.Dc * lin.D * dither.col(t);
        const Eigen::VectorXd ut = loop_lu.solve(rhs);
        const Eigen::VectorXd yt = plant.step(ut, e.col(t));
        if (!yt.allFinite() || yt.cwiseAbs().maxCoeff() > kDivergenceThreshold) {
            throw Error(ErrorKind::Diverged, "closed loop diverged at sample " + std::to_string(t + 1));
        }
        xc = fb.Ac * xc + fb.Bc * (setpoints.col(t) - yt);
        u.col(t) = ut;
        y.col(t) = yt;
    }
    return Trajectory(std::move(u), std::move(y));
}

}  // namespace cddpc
