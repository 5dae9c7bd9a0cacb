#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cddpc/controller.hpp"
#include "cddpc/qp.hpp"
#include "cddpc/sim.hpp"

namespace cddpc {

/// Parsed `[section]` / `key = value` text with `#` comments. Keys are stored
/// as "section.key". Every lookup marks the key as used so that typos can be
/// reported by unused_keys().
class KeyValueFile {
public:
    static KeyValueFile parse(std::istream& in, const std::string& source = "<input>");
    static KeyValueFile load(const std::filesystem::path& path);

    bool has(const std::string& key) const;
    std::string get(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    double number(const std::string& key) const;
    double number(const std::string& key, double fallback) const;
    long integer(const std::string& key, long fallback) const;
    bool boolean(const std::string& key, bool fallback) const;
    std::vector<double> numbers(const std::string& key) const;
    std::vector<std::string> strings(const std::string& key) const;
    /// Rows separated by ';', entries by whitespace.
    Eigen::MatrixXd matrix(const std::string& key) const;

    void set(const std::string& key, const std::string& value);
    std::vector<std::string> unused_keys() const;
    const std::string& source() const { return source_; }

private:
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, bool> used_;
    std::string source_;
};

double parse_number(const std::string& text, const std::string& what);

struct ExcitationSpec {
    /// Square: square wave. Uniform: seeded random levels drawn from
    /// U(-amplitude, amplitude), each held for `hold` samples. ClosedLoop:
    /// feedback on square-wave setpoints, plus optional white dither.
    enum class Kind { Square, Uniform, ClosedLoop };
    Kind kind = Kind::Square;
    int period = 200;
    int hold = 1;
    double amplitude = 3.0;
    double dither = 0.0;  // std of the Gaussian dither added to the plant input
    LinearFeedbackController feedback;  // ClosedLoop only; period/amplitude describe the setpoint
};

struct ControllerEntry {
    ControllerKind kind = ControllerKind::CausalGammaDdpc;
    double mu = 1e10;
    double lambda = 1e10;
    bool tune = false;  // mu (and lambda for RC-gamma-DDPC) chosen by tune()

    std::string id() const { return controller_id(kind); }
};

struct TuneSpec {
    double grid_lo = 1e-5;
    double grid_hi = 1e5;
    int points = 100;
    int validation_seeds = 20;
    std::uint64_t validation_seed_offset = 1000000;

    std::vector<double> grid() const;
};

struct ExperimentConfig {
    std::string name = "experiment";
    StateSpaceModel plant;
    ExcitationSpec excitation;
    HorizonSpec horizon{15, 30};
    CostSpec cost;
    BoxConstraints box;
    Reference reference;
    QpSettings qp;
    int steps = 60;  // N_c
    bool relax_output_bounds = false;

    std::vector<int> n_d{200};
    std::vector<double> sigma_e{0.0};
    std::vector<double> epsilon{0.0};
    int seeds = 100;
    std::uint64_t seed_offset = 0;
    int threads = 0;  // 0: hardware concurrency

    std::vector<ControllerEntry> controllers;
    TuneSpec tune;
    std::string baseline;  // controller id used by normalize_costs; empty: first controller
    std::filesystem::path output_dir = "out";
    bool record_wall_time = false;

    void validate() const;
    ControllerSpec controller_spec(const ControllerEntry& entry) const;
    const ControllerEntry& controller(const std::string& id) const;
};

ExperimentConfig parse_config(const KeyValueFile& kv);
/// Loads and validates a config. Unknown keys are an error.
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace cddpc
