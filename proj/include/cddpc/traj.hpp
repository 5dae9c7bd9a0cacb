#pragma once

#include <filesystem>
#include <iosfwd>

#include <Eigen/Dense>

#include "cddpc/error.hpp"

namespace cddpc {

/// Input/output record. Columns are samples, rows are channels.
class Trajectory {
public:
    Trajectory() = default;
    Trajectory(Eigen::MatrixXd inputs, Eigen::MatrixXd outputs);

    const Eigen::MatrixXd& inputs() const { return inputs_; }
    const Eigen::MatrixXd& outputs() const { return outputs_; }

    Eigen::Index m() const { return inputs_.rows(); }
    Eigen::Index p() const { return outputs_.rows(); }
    Eigen::Index length() const { return inputs_.cols(); }

private:
    Eigen::MatrixXd inputs_;
    Eigen::MatrixXd outputs_;
};

struct HorizonSpec {
    int past = 1;    // L_p
    int future = 1;  // L_f

    HorizonSpec() = default;
    HorizonSpec(int past_steps, int future_steps);

    int depth() const { return past + future; }
};

/// Past/future blocks cut from the input and output Hankel matrices.
///
/// Row layout of each column (the wire contract for lq/predictor/controller):
///   z_p = [u(k) .. u(k+L_p-1), y(k) .. y(k+L_p-1)]
///   u_f = [u(k+L_p) .. u(k+L-1)],  y_f likewise.
struct HankelPartition {
    Eigen::MatrixXd past;          // Z_p, (m+p)L_p x M
    Eigen::MatrixXd future_input;  // U_f, mL_f x M
    Eigen::MatrixXd future_output; // Y_f, pL_f x M
    int m = 0;
    int p = 0;
    HorizonSpec horizon;

    Eigen::Index columns() const { return past.cols(); }
    /// [Z_p; U_f; Y_f]
    Eigen::MatrixXd stacked() const;
    /// [Z_p; U_f]
    Eigen::MatrixXd regressor() const;
};

/// Block Hankel matrix of the given depth. Block (i, j) equals signal column i + j.
Eigen::MatrixXd build_hankel(const Eigen::MatrixXd& signal, int depth);

HankelPartition partition(const Trajectory& traj, const HorizonSpec& horizon);

/// Stacks the last window of samples into z_p ordering (inputs above outputs).
Eigen::VectorXd stack_past(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& outputs);

/// Row rank test of build_hankel(signal, order) at rtol * sigma_max.
bool persistency_order(const Eigen::MatrixXd& signal, int order, double rtol = 1e-10);

/// Per-channel affine map used by standardize().
struct ChannelScaling {
    Eigen::VectorXd input_offset, input_scale;
    Eigen::VectorXd output_offset, output_scale;

    Trajectory apply(const Trajectory& traj) const;
    Trajectory invert(const Trajectory& traj) const;
};

struct Standardized {
    Trajectory data;
    ChannelScaling scaling;
};

/// Zero mean, unit sample (n-1) standard deviation per channel.
Standardized standardize(const Trajectory& traj);

// CSV with header t,u1..um,y1..yp. The t column is 1-based.
void write_csv(std::ostream& out, const Trajectory& traj);
void write_csv(const std::filesystem::path& path, const Trajectory& traj);
Trajectory read_trajectory_csv(std::istream& in);
Trajectory read_trajectory_csv(const std::filesystem::path& path);

/// FNV-1a over the raw sample values; identifies datasets in benchmark records.
std::uint64_t dataset_hash(const Trajectory& traj);

}  // namespace cddpc
