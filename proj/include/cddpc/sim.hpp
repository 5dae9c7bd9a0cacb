#pragma once

#include <cstdint>
#include <variant>

#include <Eigen/Dense>

#include "cddpc/traj.hpp"

namespace cddpc {

/// Innovation-form LTI plant
///   x(t+1) = A x(t) + B u(t) + K e(t)
///   y(t)   = C x(t) + D u(t) + e(t),   e ~ N(0, noise_std^2 I)
struct StateSpaceModel {
    Eigen::MatrixXd A, B, C, D, K;
    double noise_std = 0.0;

    Eigen::Index n() const { return A.rows(); }
    Eigen::Index m() const { return B.cols(); }
    Eigen::Index p() const { return C.rows(); }

    void validate() const;
    /// Smallest l with rank [C; CA; ...; CA^{l-1}] = n; throws if unobservable.
    int lag() const;

    /// Second-order SISO benchmark plant used throughout the numerical studies.
    static StateSpaceModel benchmark_siso();
    /// Stable, weakly coupled 2x2 plant used for closed-loop data collection.
    static StateSpaceModel benchmark_mimo();
};

/// Plant with the input and state passed through
///   x~ = (1-eps) x + 0.5 eps x^3,   u~ = (1-eps) u + eps (sin u + 2 u^3)
/// before the linear update; the output uses the raw state and u~.
struct NonlinearWrapper {
    StateSpaceModel base;
    double epsilon = 0.0;

    void validate() const;
};

/// Discrete-time output-feedback law acting on the tracking error e = r - y:
///   xc(t+1) = Ac xc(t) + Bc e(t),  u(t) = Cc xc(t) + Dc e(t)
struct LinearFeedbackController {
    Eigen::MatrixXd Ac, Bc, Cc, Dc;

    void validate(Eigen::Index plant_inputs, Eigen::Index plant_outputs) const;
    /// Coarsely tuned PI law for a two-input two-output process.
    static LinearFeedbackController benchmark_pi();
};

struct PlantStep {
    Eigen::VectorXd x_next;
    Eigen::VectorXd y;
};

PlantStep step_lti(const StateSpaceModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                   const Eigen::VectorXd& e);
PlantStep step_nonlinear(const NonlinearWrapper& plant, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                         const Eigen::VectorXd& e);

Eigen::VectorXd distort_state(double epsilon, const Eigen::VectorXd& x);
Eigen::VectorXd distort_input(double epsilon, const Eigen::VectorXd& u);

using PlantModel = std::variant<StateSpaceModel, NonlinearWrapper>;

const StateSpaceModel& linear_part(const PlantModel& model);

/// Stateful plant simulator starting from x(0) = 0.
class Plant {
public:
    explicit Plant(PlantModel model);

    /// Applies u with innovation e; returns y(t) and advances the state.
    Eigen::VectorXd step(const Eigen::VectorXd& u, const Eigen::VectorXd& e);

    const Eigen::VectorXd& state() const { return x_; }
    const PlantModel& model() const { return model_; }
    const StateSpaceModel& linear() const { return linear_part(model_); }

private:
    PlantModel model_;
    Eigen::VectorXd x_;
};

/// +amplitude for the first half of each period, -amplitude for the second.
Eigen::RowVectorXd square_wave(int period, double amplitude, int length);

/// Random streams: data-collection innovations, closed-loop innovations and
/// random excitation signals.
inline constexpr std::uint64_t kDataStream = 1;
inline constexpr std::uint64_t kControlStream = 2;
inline constexpr std::uint64_t kExcitationStream = 3;

/// Gaussian innovations, p x length, sample (i, t) drawn from (seed, stream).
Eigen::MatrixXd innovations(Eigen::Index p, Eigen::Index length, double noise_std, std::uint64_t seed,
                            std::uint64_t stream, Eigen::Index offset = 0);

Trajectory collect_open_loop(const PlantModel& model, const Eigen::MatrixXd& excitation, double noise_std,
                             std::uint64_t seed);

/// Runs plant and feedback law in closed loop; setpoints is p x N_d. An
/// optional m x N_d dither is added to the feedback output before it reaches
/// the plant (and is part of the recorded input).
/// Throws Diverged when |y| exceeds 1e6.
Trajectory collect_closed_loop(const PlantModel& model, const LinearFeedbackController& fb,
                               const Eigen::MatrixXd& setpoints, double noise_std, std::uint64_t seed,
                               const Eigen::MatrixXd& dither = Eigen::MatrixXd());

}  // namespace cddpc
