// cddpc: factorize trajectories, run single closed-loop experiments, tune
// regularization weights and run Monte-Carlo benchmarks from config files.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cddpc/bench.hpp"
#include "cddpc/config.hpp"
#include "cddpc/csv.hpp"
#include "cddpc/controller.hpp"
#include "cddpc/lq.hpp"
#include "cddpc/predictor.hpp"
#include "cddpc/traj.hpp"

namespace fs = std::filesystem;
using namespace cddpc;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kSolver = 3 };

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Config:
        case ErrorKind::InvalidArgument: return kUsage;
        default: return kData;
    }
}

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

ExperimentConfig open_config(const std::string& path) {
    if (!fs::exists(path)) throw UsageError("config file '" + path + "' not found");
    return load_config(path);
}

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
    return out;
}

GridPoint pick_point(const ExperimentConfig& c, std::optional<int> nd, std::optional<double> sigma,
                     std::optional<double> eps) {
    return {nd.value_or(c.n_d.front()), sigma.value_or(c.sigma_e.front()), eps.value_or(c.epsilon.front())};
}

int cmd_factorize(const std::string& traj_path, int lp, int lf, const std::string& dump, const std::string& pred_csv,
                  bool causal, bool compress) {
    const Trajectory traj = read_trajectory_csv(fs::path(traj_path));
    const HankelPartition part = partition(traj, HorizonSpec(lp, lf));
    const LqBlocks blocks = factorize(part, compress ? RankPolicy::CompressPast : RankPolicy::Strict);
    const Predictor spc = fit_spc(blocks);
    const Predictor cpred = fit_causal(blocks);
    const CausalSplit split = causal_split(blocks);

    std::cout << "samples        " << traj.length() << " (m = " << traj.m() << ", p = " << traj.p() << ")\n"
              << "columns        " << part.columns() << "\n"
              << "rank(Z_p)      " << blocks.past_rank() << " of " << part.past.rows() << "\n"
              << std::setprecision(6) << "||L'32||/||L32|| " << split.noncausal.norm() / blocks.l32.norm() << "\n"
              << "residual SPC   " << fit_residual(part, spc) << "\n"
              << "residual C-SPC " << fit_residual(part, cpred) << "\n";
    if (!dump.empty()) {
        dump_blocks(fs::path(dump), blocks);
        std::cout << "blocks written to " << dump << "\n";
    }
    if (!pred_csv.empty()) {
        write_csv(fs::path(pred_csv), causal ? cpred : spc);
        std::cout << (causal ? "causal" : "SPC") << " predictor written to " << pred_csv << "\n";
    }
    return kOk;
}

int cmd_control(const std::string& config_path, const std::string& id, std::uint64_t seed, std::optional<int> nd,
                std::optional<double> sigma, std::optional<double> eps, std::optional<double> mu,
                std::optional<double> lambda, const std::string& out_path) {
    const ExperimentConfig config = open_config(config_path);
    ControllerEntry entry;
    entry.kind = controller_kind_from_id(id);
    for (const ControllerEntry& e : config.controllers) {
        if (e.kind == entry.kind) entry = e;
    }
    if (mu) entry.mu = *mu;
    if (lambda) entry.lambda = *lambda;
    const GridPoint point = pick_point(config, nd, sigma, eps);

    const PreparedData data = prepare_data(config, point, seed);
    RunRecord rec;
    const ClosedLoopRun run = run_controller(config, entry, point, seed, data, &rec);
    if (out_path.empty()) {
        write_run_csv(std::cout, run);
    } else {
        std::ofstream out = open_output(out_path);
        write_run_csv(out, run);
    }
    std::cerr << id << ": J = " << csv::format_double(rec.cost) << " (J_y = " << csv::format_double(rec.output_cost)
              << ", J_u = " << csv::format_double(rec.input_cost) << "), status " << rec.status << "\n";
    return run.aborted ? kSolver : kOk;
}

void apply_overrides(ExperimentConfig& c, std::optional<int> seeds, std::optional<int> threads,
                     std::optional<int> validation_seeds, std::optional<int> points, const std::string& out_dir) {
    if (seeds) c.seeds = *seeds;
    if (threads) c.threads = *threads;
    if (validation_seeds) c.tune.validation_seeds = *validation_seeds;
    if (points) c.tune.points = *points;
    if (!out_dir.empty()) c.output_dir = out_dir;
    c.validate();
}

void print_table(const std::vector<NormalizedRow>& rows) {
    std::cout << std::left << std::setw(10) << "controller" << std::right << std::setw(7) << "N_d" << std::setw(9)
              << "sigma_e" << std::setw(7) << "eps" << std::setw(7) << "failed" << std::setw(13) << "mean J"
              << std::setw(13) << "median J" << std::setw(9) << "ratio" << "\n";
    for (const NormalizedRow& r : rows) {
        std::cout << std::left << std::setw(10) << r.controller << std::right << std::setw(7) << r.point.n_d
                  << std::setw(9) << r.point.sigma_e << std::setw(7) << r.point.eps << std::setw(7) << r.failed
                  << std::fixed << std::setprecision(4) << std::setw(13) << r.mean_cost << std::setw(13)
                  << r.median_cost << std::setw(9) << r.ratio << std::defaultfloat << std::setprecision(6) << "\n";
    }
}

int cmd_tune(ExperimentConfig config) {
    const std::vector<TunedParameters> tuned = tune_all(config);
    if (tuned.empty()) {
        std::cerr << "no controller in the config is marked for tuning\n";
        return kUsage;
    }
    const fs::path path = config.output_dir / "tuned.csv";
    std::ofstream out = open_output(path);
    write_tuned_csv(out, tuned);
    write_tuned_csv(std::cout, tuned);
    std::cerr << "wrote " << path.string() << "\n";
    return kOk;
}

int cmd_benchmark(ExperimentConfig config) {
    bool needs_tuning = false;
    for (const ControllerEntry& e : config.controllers) needs_tuning = needs_tuning || e.tune;
    std::vector<TunedParameters> tuned;
    if (needs_tuning) {
        tuned = tune_all(config);
        std::ofstream out = open_output(config.output_dir / "tuned.csv");
        write_tuned_csv(out, tuned);
    }
    const std::vector<RunRecord> records = run_sweep(config, tuned);
    {
        std::ofstream out = open_output(config.output_dir / "records.csv");
        write_records_csv(out, records);
    }
    const std::string baseline = config.baseline.empty() ? config.controllers.front().id() : config.baseline;
    const std::vector<NormalizedRow> rows = normalize_costs(records, baseline);
    {
        std::ofstream out = open_output(config.output_dir / "normalized.csv");
        write_normalized_csv(out, rows);
    }
    print_table(rows);
    std::cerr << "wrote " << (config.output_dir / "records.csv").string() << " and "
              << (config.output_dir / "normalized.csv").string() << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Causality-informed data-driven predictive control: factorization, control runs and benchmarks"};
    app.require_subcommand(1);

    std::string traj_path, dump, pred_csv;
    int lp = 15, lf = 30;
    bool causal = false, compress = false;
    auto* fac = app.add_subcommand("factorize", "LQ-factorize the Hankel data of a trajectory CSV");
    fac->add_option("trajectory", traj_path, "CSV with header t,u1..um,y1..yp")->required();
    fac->add_option("--lp", lp, "past horizon L_p")->required()->check(CLI::PositiveNumber);
    fac->add_option("--lf", lf, "future horizon L_f")->required()->check(CLI::PositiveNumber);
    fac->add_option("--dump", dump, "write the LQ blocks to this binary file");
    fac->add_option("--predictor", pred_csv, "write the predictor gains to this CSV");
    fac->add_flag("--causal", causal, "export the causal predictor instead of SPC");
    fac->add_flag("--compress-past", compress, "accept a rank-deficient past block (noise-free data)");

    std::string config_path, controller, out;
    std::uint64_t seed = 0;
    std::optional<int> nd, seeds, threads, vseeds, points;
    std::optional<double> sigma, eps, mu, lambda;
    auto* ctl = app.add_subcommand("control", "single closed-loop run; per-step CSV on stdout or --out");
    ctl->add_option("--config", config_path, "experiment config")->required();
    ctl->add_option("--controller", controller, "spc, c_spc, gamma, gamma_hard, c_gamma, r_gamma, rc_gamma, r_ddpc, kf_mpc")
        ->required();
    ctl->add_option("--seed", seed, "dataset and noise seed");
    ctl->add_option("--nd", nd, "data length (default: first sweep value)");
    ctl->add_option("--sigma", sigma, "innovation std (default: first sweep value)");
    ctl->add_option("--eps", eps, "nonlinearity degree (default: first sweep value)");
    ctl->add_option("--mu", mu, "override mu");
    ctl->add_option("--lambda", lambda, "override lambda");
    ctl->add_option("--out", out, "per-step CSV path");

    std::string out_dir;
    auto* bench = app.add_subcommand("benchmark", "Monte-Carlo sweep; writes records.csv and normalized.csv");
    auto* tune = app.add_subcommand("tune", "grid-search the regularization weights; writes tuned.csv");
    for (CLI::App* sub : {bench, tune}) {
        sub->add_option("--config", config_path, "experiment config")->required();
        sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
        sub->add_option("--seeds", seeds, "number of Monte-Carlo seeds")->check(CLI::PositiveNumber);
        sub->add_option("--threads", threads, "worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
        sub->add_option("--validation-seeds", vseeds, "seeds used for tuning")->check(CLI::PositiveNumber);
        sub->add_option("--grid-points", points, "tuning grid points per weight")->check(CLI::PositiveNumber);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*fac) return cmd_factorize(traj_path, lp, lf, dump, pred_csv, causal, compress);
        if (*ctl) return cmd_control(config_path, controller, seed, nd, sigma, eps, mu, lambda, out);
        ExperimentConfig config = open_config(config_path);
        apply_overrides(config, seeds, threads, vseeds, points, out_dir);
        if (*tune) return cmd_tune(std::move(config));
        return cmd_benchmark(std::move(config));
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
}
