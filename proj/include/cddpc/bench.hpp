#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "cddpc/config.hpp"
#include "cddpc/controller.hpp"

namespace cddpc {

struct GridPoint {
    int n_d = 0;
    double sigma_e = 0.0;
    double eps = 0.0;

    bool operator==(const GridPoint&) const = default;
};

/// Cartesian product of the sweep grids, N_d outermost.
std::vector<GridPoint> grid_points(const ExperimentConfig& config);

PlantModel plant_model(const ExperimentConfig& config, double eps);

/// Offline dataset for one grid point and seed. Every controller at the same
/// (point, seed) sees this exact trajectory.
Trajectory collect_dataset(const ExperimentConfig& config, const GridPoint& point, std::uint64_t seed);

struct RunRecord {
    std::string controller;
    GridPoint point;
    std::uint64_t seed = 0;
    double cost = 0.0;         // J
    double output_cost = 0.0;  // J_y
    double input_cost = 0.0;   // J_u
    double wall_ms = 0.0;      // NaN unless wall-time recording is enabled
    long qp_iterations = 0;
    /// Worst QP status, "Relaxed" if some step dropped its output bounds, or
    /// the error kind that stopped the run.
    std::string status;
    std::uint64_t dataset_hash = 0;

    /// True when all N_c steps were applied.
    bool completed() const { return status == "Solved" || status == "MaxIter" || status == "Relaxed"; }
};

/// Regularization weights picked for one controller at one grid point.
struct TunedParameters {
    std::string controller;
    GridPoint point;
    double lambda = 0.0;
    double mu = 0.0;
    double mean_cost = 0.0;
};

/// Everything a closed-loop run is built from, shared across controllers.
struct PreparedData {
    Trajectory data;
    std::uint64_t hash = 0;
    ControllerData controller_data;
};

PreparedData prepare_data(const ExperimentConfig& config, const GridPoint& point, std::uint64_t seed);

/// One closed-loop run of `entry` (with its own mu/lambda) on prepared data.
ClosedLoopRun run_controller(const ExperimentConfig& config, const ControllerEntry& entry, const GridPoint& point,
                             std::uint64_t seed, const PreparedData& data, RunRecord* record = nullptr);

/// Grid search over mu (and lambda for RC-gamma-DDPC). Minimizes mean J over
/// the validation seeds; ties go to the larger weights. Runs that fail count
/// as J = +inf.
TunedParameters tune(const ExperimentConfig& config, const ControllerEntry& entry, const GridPoint& point,
                     const std::vector<double>& grid, const std::vector<std::uint64_t>& validation_seeds);

/// Tunes every controller flagged `tune` at every grid point.
std::vector<TunedParameters> tune_all(const ExperimentConfig& config);

/// Paired Monte-Carlo sweep. Records are sorted by grid point, seed, then
/// controller order in the config. Controllers flagged `tune` take their
/// weights from `tuned`.
std::vector<RunRecord> run_sweep(const ExperimentConfig& config, const std::vector<TunedParameters>& tuned = {});

struct NormalizedRow {
    std::string controller;
    GridPoint point;
    int runs = 0;
    int failed = 0;
    double mean_cost = 0.0;    // over completed runs
    double median_cost = 0.0;  // failed runs count as +inf
    double ratio = 0.0;        // mean_cost / baseline mean_cost
    double median_ratio = 0.0;
};

/// Mean and median J per (grid point, controller), divided by the baseline's.
/// Throws MissingBaseline if the baseline has no completed run at some point.
std::vector<NormalizedRow> normalize_costs(const std::vector<RunRecord>& records, const std::string& baseline);

double median(std::vector<double> values);

void write_records_csv(std::ostream& out, const std::vector<RunRecord>& records);
void write_normalized_csv(std::ostream& out, const std::vector<NormalizedRow>& rows);
void write_tuned_csv(std::ostream& out, const std::vector<TunedParameters>& tuned);
std::vector<RunRecord> read_records_csv(std::istream& in);

/// Runs fn(0..count-1) on up to `threads` workers (0: hardware concurrency).
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

}  // namespace cddpc
