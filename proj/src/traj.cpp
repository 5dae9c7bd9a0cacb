#include "cddpc/traj.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cddpc/csv.hpp"
#include "cddpc/linalg.hpp"

namespace cddpc {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::DepthExceedsLength: return "DepthExceedsLength";
        case ErrorKind::ZeroVariance: return "ZeroVariance";
        case ErrorKind::RankDeficient: return "RankDeficient";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::Diverged: return "Diverged";
        case ErrorKind::MissingBaseline: return "MissingBaseline";
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::Config: return "Config";
        case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

Trajectory::Trajectory(Eigen::MatrixXd inputs, Eigen::MatrixXd outputs)
    : inputs_(std::move(inputs)), outputs_(std::move(outputs)) {
    require(inputs_.rows() >= 1 && outputs_.rows() >= 1, ErrorKind::DimensionMismatch,
            "trajectory needs at least one input and one output channel");
    require(inputs_.cols() == outputs_.cols(), ErrorKind::DimensionMismatch,
            "inputs and outputs must have the same number of samples");
    require(inputs_.cols() >= 1, ErrorKind::DimensionMismatch, "trajectory is empty");
}

HorizonSpec::HorizonSpec(int past_steps, int future_steps) : past(past_steps), future(future_steps) {
    require(past >= 1 && future >= 1, ErrorKind::InvalidArgument, "horizons must be >= 1");
}

Eigen::MatrixXd HankelPartition::stacked() const {
    Eigen::MatrixXd out(past.rows() + future_input.rows() + future_output.rows(), columns());
    out << past, future_input, future_output;
    return out;
}

Eigen::MatrixXd HankelPartition::regressor() const {
    Eigen::MatrixXd out(past.rows() + future_input.rows(), columns());
    out << past, future_input;
    return out;
}

Eigen::MatrixXd build_hankel(const Eigen::MatrixXd& signal, int depth) {
    require(depth >= 1, ErrorKind::InvalidArgument, "Hankel depth must be >= 1");
    const Eigen::Index q = signal.rows();
    const Eigen::Index n = signal.cols();
    if (depth > n) {
        throw Error(ErrorKind::DepthExceedsLength,
                    "Hankel depth " + std::to_string(depth) + " exceeds signal length " + std::to_string(n));
    }
    const Eigen::Index cols = n - depth + 1;
    Eigen::MatrixXd h(q * depth, cols);
    for (int i = 0; i < depth; ++i) h.middleRows(i * q, q) = signal.middleCols(i, cols);
    return h;
}

HankelPartition partition(const Trajectory& traj, const HorizonSpec& horizon) {
    const int m = static_cast<int>(traj.m());
    const int p = static_cast<int>(traj.p());
    const int lp = horizon.past, lf = horizon.future;
    const Eigen::MatrixXd uh = build_hankel(traj.inputs(), horizon.depth());
    const Eigen::MatrixXd yh = build_hankel(traj.outputs(), horizon.depth());

    HankelPartition part;
    part.m = m;
    part.p = p;
    part.horizon = horizon;
    part.past.resize((m + p) * lp, uh.cols());
    part.past << uh.topRows(m * lp), yh.topRows(p * lp);
    part.future_input = uh.bottomRows(m * lf);
    part.future_output = yh.bottomRows(p * lf);
    return part;
}

Eigen::VectorXd stack_past(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& outputs) {
    require(inputs.cols() == outputs.cols(), ErrorKind::DimensionMismatch, "past window lengths differ");
    Eigen::VectorXd z(inputs.size() + outputs.size());
    z << inputs.reshaped(), outputs.reshaped();
    return z;
}

bool persistency_order(const Eigen::MatrixXd& signal, int order, double rtol) {
    require(order >= 1, ErrorKind::InvalidArgument, "order must be >= 1");
    if (order > signal.cols()) return false;
    const Eigen::MatrixXd h = build_hankel(signal, order);
    if (h.cols() < h.rows()) return false;
    return numerical_rank(h, rtol) == h.rows();
}

Trajectory ChannelScaling::apply(const Trajectory& traj) const {
    Eigen::MatrixXd u = (traj.inputs().colwise() - input_offset).array().colwise() / input_scale.array();
    Eigen::MatrixXd y = (traj.outputs().colwise() - output_offset).array().colwise() / output_scale.array();
    return Trajectory(std::move(u), std::move(y));
}

Trajectory ChannelScaling::invert(const Trajectory& traj) const {
    Eigen::MatrixXd u = (traj.inputs().array().colwise() * input_scale.array()).matrix().colwise() + input_offset;
    Eigen::MatrixXd y = (traj.outputs().array().colwise() * output_scale.array()).matrix().colwise() + output_offset;
    return Trajectory(std::move(u), std::move(y));
}

namespace {

void channel_stats(const Eigen::MatrixXd& x, Eigen::VectorXd& mean, Eigen::VectorXd& scale, const char* what) {
    mean = x.rowwise().mean();
    const Eigen::MatrixXd centered = x.colwise() - mean;
    scale = (centered.rowwise().squaredNorm() / static_cast<double>(x.cols() - 1)).cwiseSqrt();
    for (Eigen::Index i = 0; i < scale.size(); ++i) {
        if (!(scale(i) > 0.0)) {
            throw Error(ErrorKind::ZeroVariance, std::string(what) + " channel " + std::to_string(i + 1) + " is constant");
        }
    }
}

}  // namespace

Standardized standardize(const Trajectory& traj) {
    require(traj.length() >= 2, ErrorKind::InvalidArgument, "standardize needs at least two samples");
    ChannelScaling s;
    channel_stats(traj.inputs(), s.input_offset, s.input_scale, "input");
    channel_stats(traj.outputs(), s.output_offset, s.output_scale, "output");
    return {s.apply(traj), s};
}

void write_csv(std::ostream& out, const Trajectory& traj) {
    out << "t";
    for (Eigen::Index i = 0; i < traj.m(); ++i) out << ",u" << i + 1;
    for (Eigen::Index i = 0; i < traj.p(); ++i) out << ",y" << i + 1;
    out << "\n";
    for (Eigen::Index k = 0; k < traj.length(); ++k) {
        out << k + 1;
        for (Eigen::Index i = 0; i < traj.m(); ++i) out << ',' << csv::format_double(traj.inputs()(i, k));
        for (Eigen::Index i = 0; i < traj.p(); ++i) out << ',' << csv::format_double(traj.outputs()(i, k));
        out << "\n";
    }
}

void write_csv(const std::filesystem::path& path, const Trajectory& traj) {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
    write_csv(out, traj);
}

Trajectory read_trajectory_csv(std::istream& in) {
    std::vector<std::string> header;
    require(csv::read_record(in, header), ErrorKind::Io, "trajectory CSV is empty");
    if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);
    require(!header.empty() && header[0] == "t", ErrorKind::Io, "trajectory CSV must start with column 't'");

    int m = 0, p = 0;
    for (std::size_t i = 1; i < header.size(); ++i) {
        const std::string& h = header[i];
        const std::string expect_u = "u" + std::to_string(m + 1);
        const std::string expect_y = "y" + std::to_string(p + 1);
        if (p == 0 && h == expect_u) {
            ++m;
        } else if (h == expect_y) {
            ++p;
        } else {
            throw Error(ErrorKind::Io, "unexpected trajectory CSV column '" + h + "'");
        }
    }
    require(m >= 1 && p >= 1, ErrorKind::Io, "trajectory CSV needs u and y columns");

    std::vector<double> values;
    std::vector<std::string> row;
    Eigen::Index n = 0;
    while (csv::read_record(in, row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        require(row.size() == header.size(), ErrorKind::Io, "ragged trajectory CSV row " + std::to_string(n + 2));
        for (std::size_t i = 1; i < row.size(); ++i) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(row[i], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            require(used == row[i].size() && used > 0, ErrorKind::Io, "bad number '" + row[i] + "' in trajectory CSV");
            values.push_back(v);
        }
        ++n;
    }
    require(n >= 1, ErrorKind::Io, "trajectory CSV has no samples");
    const Eigen::Map<const Eigen::MatrixXd> all(values.data(), m + p, n);
    return Trajectory(all.topRows(m), all.bottomRows(p));
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open trajectory file " + path.string());
    return read_trajectory_csv(in);
}

std::uint64_t dataset_hash(const Trajectory& traj) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const Eigen::MatrixXd& x) {
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            std::uint64_t bits;
            const double v = x.data()[i];
            std::memcpy(&bits, &v, sizeof bits);
            for (int b = 0; b < 8; ++b) {
                h ^= (bits >> (8 * b)) & 0xffu;
                h *= 1099511628211ull;
            }
        }
    };
    mix(traj.inputs());
    mix(traj.outputs());
    return h;
}

}  // namespace cddpc
