#include "cddpc/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include "cddpc/csv.hpp"
#include "cddpc/lq.hpp"
#include "cddpc/rng.hpp"

namespace cddpc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

bool same_point(const GridPoint& a, const GridPoint& b) { return a == b; }

const TunedParameters* find_tuned(const std::vector<TunedParameters>& tuned, const std::string& id,
                                  const GridPoint& point) {
    for (const TunedParameters& t : tuned) {
        if (t.controller == id && same_point(t.point, point)) return &t;
    }
    return nullptr;
}

bool tunes_lambda(ControllerKind kind) { return kind == ControllerKind::RegCausalGammaDdpc; }

}  // namespace

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    if (count <= 0) return;
    int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::clamp(workers, 1, count);
    if (workers == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    const std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

std::vector<GridPoint> grid_points(const ExperimentConfig& config) {
    std::vector<GridPoint> out;
    for (int n : config.n_d) {
        for (double s : config.sigma_e) {
            for (double e : config.epsilon) out.push_back({n, s, e});
        }
    }
    return out;
}

PlantModel plant_model(const ExperimentConfig& config, double eps) {
    if (eps == 0.0) return config.plant;
    return NonlinearWrapper{config.plant, eps};
}

Trajectory collect_dataset(const ExperimentConfig& config, const GridPoint& point, std::uint64_t seed) {
    const ExcitationSpec& ex = config.excitation;
    const PlantModel model = plant_model(config, point.eps);
    // Channel i uses period (i + 1) * period so multichannel excitation is not collinear.
    auto waves = [&](Eigen::Index rows) {
        Eigen::MatrixXd w(rows, point.n_d);
        for (Eigen::Index i = 0; i < rows; ++i) {
            w.row(i) = square_wave(ex.period * static_cast<int>(i + 1), ex.amplitude, point.n_d);
        }
        return w;
    };
    if (ex.kind == ExcitationSpec::Kind::Uniform) {
        const NoiseStream gen(seed, kExcitationStream);
        const Eigen::Index m = config.plant.m();
        Eigen::MatrixXd u(m, point.n_d);
        for (int t = 0; t < point.n_d; ++t) {
            const std::uint64_t level = static_cast<std::uint64_t>(t / ex.hold);
            for (Eigen::Index i = 0; i < m; ++i) {
                u(i, t) = ex.amplitude * (2.0 * gen.uniform(level * m + i) - 1.0);
            }
        }
        return collect_open_loop(model, u, point.sigma_e, seed);
    }
    if (ex.kind == ExcitationSpec::Kind::ClosedLoop) {
        const Eigen::MatrixXd dither = innovations(config.plant.m(), point.n_d, ex.dither, seed, kExcitationStream);
        return collect_closed_loop(model, ex.feedback, waves(config.plant.p()), point.sigma_e, seed, dither);
    }
    return collect_open_loop(model, waves(config.plant.m()), point.sigma_e, seed);
}

PreparedData prepare_data(const ExperimentConfig& config, const GridPoint& point, std::uint64_t seed) {
    PreparedData d;
    d.data = collect_dataset(config, point, seed);
    d.hash = dataset_hash(d.data);
    auto part = std::make_shared<HankelPartition>(partition(d.data, config.horizon));
    d.controller_data.blocks = std::make_shared<LqBlocks>(factorize(*part, RankPolicy::CompressPast));
    d.controller_data.partition = std::move(part);
    d.controller_data.model = config.plant;
    return d;
}

ClosedLoopRun run_controller(const ExperimentConfig& config, const ControllerEntry& entry, const GridPoint& point,
                             std::uint64_t seed, const PreparedData& data, RunRecord* record) {
    const auto start = std::chrono::steady_clock::now();
    Controller controller = make_controller(config.controller_spec(entry), data.controller_data);
    RecedingHorizonOptions opt;
    opt.steps = config.steps;
    opt.noise_std = point.sigma_e;
    opt.seed = seed;
    opt.warmup_inputs = data.data.inputs().rightCols(config.horizon.past);
    opt.reference = config.reference;
    ClosedLoopRun run = run_receding_horizon(plant_model(config, point.eps), controller, opt);
    if (record) {
        record->controller = entry.id();
        record->point = point;
        record->seed = seed;
        record->cost = run.cost;
        record->output_cost = run.output_cost;
        record->input_cost = run.input_cost;
        record->qp_iterations = run.qp_iterations;
        record->status = to_string(run.status);
        if (run.aborted && run.status != QpStatus::PrimalInfeasible && run.status != QpStatus::DualInfeasible) {
            record->status = to_string(ErrorKind::Diverged);
        } else if (!run.aborted && run.relaxed_steps > 0) {
            record->status = "Relaxed";
        }
        record->dataset_hash = data.hash;
        record->wall_ms = config.record_wall_time
                              ? std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()
                              : kNaN;
    }
    return run;
}

TunedParameters tune(const ExperimentConfig& config, const ControllerEntry& entry, const GridPoint& point,
                     const std::vector<double>& grid, const std::vector<std::uint64_t>& validation_seeds) {
    require(!grid.empty(), ErrorKind::InvalidArgument, "tuning grid is empty");
    require(!validation_seeds.empty(), ErrorKind::InvalidArgument, "no validation seeds");
    std::vector<double> sorted = grid;
    std::sort(sorted.begin(), sorted.end());

    struct Candidate {
        double lambda, mu;
    };
    std::vector<Candidate> candidates;
    if (tunes_lambda(entry.kind)) {
        for (double l : sorted) {
            for (double m : sorted) candidates.push_back({l, m});
        }
    } else {
        for (double m : sorted) candidates.push_back({entry.lambda, m});
    }

    std::vector<PreparedData> data(validation_seeds.size());
    std::vector<char> usable(validation_seeds.size(), 1);
    parallel_for(static_cast<int>(validation_seeds.size()), config.threads, [&](int i) {
        try {
            data[i] = prepare_data(config, point, validation_seeds[i]);
        } catch (const Error&) {
            usable[i] = 0;
        }
    });

    const int nc = static_cast<int>(candidates.size()), ns = static_cast<int>(validation_seeds.size());
    std::vector<double> costs(static_cast<std::size_t>(nc) * ns, kInfinity);
    parallel_for(nc * ns, config.threads, [&](int task) {
        const int c = task / ns, s = task % ns;
        if (!usable[s]) return;
        ControllerEntry e = entry;
        e.lambda = candidates[c].lambda;
        e.mu = candidates[c].mu;
        try {
            RunRecord rec;
            run_controller(config, e, point, validation_seeds[s], data[s], &rec);
            if (rec.completed()) costs[task] = rec.cost;
        } catch (const Error&) {
        }
    });

    TunedParameters best{entry.id(), point, candidates.front().lambda, candidates.front().mu, kInfinity};
    for (int c = 0; c < nc; ++c) {
        double sum = 0.0;
        for (int s = 0; s < ns; ++s) sum += costs[static_cast<std::size_t>(c) * ns + s];
        const double mean = sum / ns;
        // Candidates ascend in (lambda, mu), so accepting ties keeps the largest weights.
        if (c == 0 || mean <= best.mean_cost || (std::isinf(best.mean_cost) && std::isinf(mean))) {
            best.lambda = candidates[c].lambda;
            best.mu = candidates[c].mu;
            best.mean_cost = mean;
        }
    }
    return best;
}

std::vector<TunedParameters> tune_all(const ExperimentConfig& config) {
    std::vector<std::uint64_t> seeds(config.tune.validation_seeds);
    for (int i = 0; i < config.tune.validation_seeds; ++i) seeds[i] = config.tune.validation_seed_offset + i;
    const std::vector<double> grid = config.tune.grid();
    std::vector<TunedParameters> out;
    for (const GridPoint& point : grid_points(config)) {
        for (const ControllerEntry& entry : config.controllers) {
            if (entry.tune) out.push_back(tune(config, entry, point, grid, seeds));
        }
    }
    return out;
}

std::vector<RunRecord> run_sweep(const ExperimentConfig& config, const std::vector<TunedParameters>& tuned) {
    config.validate();
    const std::vector<GridPoint> points = grid_points(config);
    const int nctrl = static_cast<int>(config.controllers.size());
    const int tasks = static_cast<int>(points.size()) * config.seeds;

    std::vector<std::vector<ControllerEntry>> entries(points.size(), config.controllers);
    for (std::size_t g = 0; g < points.size(); ++g) {
        for (ControllerEntry& e : entries[g]) {
            if (!e.tune) continue;
            const TunedParameters* t = find_tuned(tuned, e.id(), points[g]);
            require(t != nullptr, ErrorKind::InvalidArgument, "controller '" + e.id() + "' needs tuned weights");
            e.lambda = t->lambda;
            e.mu = t->mu;
        }
    }

    std::vector<RunRecord> records(static_cast<std::size_t>(tasks) * nctrl);
    parallel_for(tasks, config.threads, [&](int task) {
        const std::size_t g = static_cast<std::size_t>(task / config.seeds);
        const std::uint64_t seed = config.seed_offset + static_cast<std::uint64_t>(task % config.seeds);
        const GridPoint& point = points[g];
        PreparedData data;
        std::string data_error;
        try {
            data = prepare_data(config, point, seed);
        } catch (const Error& err) {
            data_error = to_string(err.kind());
        }
        for (int c = 0; c < nctrl; ++c) {
            RunRecord& rec = records[static_cast<std::size_t>(task) * nctrl + c];
            const ControllerEntry& entry = entries[g][c];
            rec.controller = entry.id();
            rec.point = point;
            rec.seed = seed;
            rec.cost = rec.output_cost = rec.input_cost = rec.wall_ms = kNaN;
            rec.dataset_hash = data.hash;
            if (!data_error.empty()) {
                rec.status = data_error;
                continue;
            }
            try {
                run_controller(config, entry, point, seed, data, &rec);
            } catch (const Error& err) {
                rec.status = to_string(err.kind());
            }
        }
    });
    return records;
}

double median(std::vector<double> values) {
    require(!values.empty(), ErrorKind::InvalidArgument, "median of an empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<NormalizedRow> normalize_costs(const std::vector<RunRecord>& records, const std::string& baseline) {
    // Group in first-appearance order of grid points and controllers.
    std::vector<GridPoint> points;
    std::vector<std::string> controllers;
    for (const RunRecord& r : records) {
        if (std::find(points.begin(), points.end(), r.point) == points.end()) points.push_back(r.point);
        if (std::find(controllers.begin(), controllers.end(), r.controller) == controllers.end()) {
            controllers.push_back(r.controller);
        }
    }
    std::vector<NormalizedRow> out;
    for (const GridPoint& point : points) {
        std::vector<NormalizedRow> rows;
        for (const std::string& id : controllers) {
            std::vector<double> all, done;
            for (const RunRecord& r : records) {
                if (r.controller != id || !(r.point == point)) continue;
                if (r.completed()) {
                    all.push_back(r.cost);
                    done.push_back(r.cost);
                } else {
                    all.push_back(kInfinity);
                }
            }
            if (all.empty()) continue;
            NormalizedRow row;
            row.controller = id;
            row.point = point;
            row.runs = static_cast<int>(all.size());
            row.failed = static_cast<int>(all.size() - done.size());
            row.mean_cost = kNaN;
            if (!done.empty()) {
                double sum = 0.0;
                for (double v : done) sum += v;
                row.mean_cost = sum / static_cast<double>(done.size());
            }
            row.median_cost = median(all);
            rows.push_back(row);
        }
        const auto base = std::find_if(rows.begin(), rows.end(), [&](const NormalizedRow& r) {
            return r.controller == baseline;
        });
        if (base == rows.end() || std::isnan(base->mean_cost)) {
            throw Error(ErrorKind::MissingBaseline, "baseline '" + baseline + "' has no completed runs at N_d = " +
                                                        std::to_string(point.n_d));
        }
        const double bmean = base->mean_cost, bmedian = base->median_cost;
        for (NormalizedRow& r : rows) {
            r.ratio = r.mean_cost / bmean;
            r.median_ratio = r.median_cost / bmedian;
            out.push_back(r);
        }
    }
    return out;
}

void write_records_csv(std::ostream& out, const std::vector<RunRecord>& records) {
    using csv::format_double;
    out << "controller,N_d,sigma_e,eps,seed,J,J_y,J_u,wall_ms,qp_iters,status,dataset_hash\n";
    for (const RunRecord& r : records) {
        out << csv::escape(r.controller) << ',' << r.point.n_d << ',' << format_double(r.point.sigma_e) << ','
            << format_double(r.point.eps) << ',' << r.seed << ',' << format_double(r.cost) << ','
            << format_double(r.output_cost) << ',' << format_double(r.input_cost) << ','
            << (std::isnan(r.wall_ms) ? std::string("NA") : format_double(r.wall_ms)) << ',' << r.qp_iterations
            << ',' << csv::escape(r.status) << ',' << hex64(r.dataset_hash) << '\n';
    }
}

void write_normalized_csv(std::ostream& out, const std::vector<NormalizedRow>& rows) {
    using csv::format_double;
    out << "controller,N_d,sigma_e,eps,runs,failed,mean_J,median_J,ratio,median_ratio\n";
    for (const NormalizedRow& r : rows) {
        out << csv::escape(r.controller) << ',' << r.point.n_d << ',' << format_double(r.point.sigma_e) << ','
            << format_double(r.point.eps) << ',' << r.runs << ',' << r.failed << ',' << format_double(r.mean_cost)
            << ',' << format_double(r.median_cost) << ',' << format_double(r.ratio) << ','
            << format_double(r.median_ratio) << '\n';
    }
}

void write_tuned_csv(std::ostream& out, const std::vector<TunedParameters>& tuned) {
    using csv::format_double;
    out << "controller,N_d,sigma_e,eps,lambda,mu,mean_J\n";
    for (const TunedParameters& t : tuned) {
        out << csv::escape(t.controller) << ',' << t.point.n_d << ',' << format_double(t.point.sigma_e) << ','
            << format_double(t.point.eps) << ',' << format_double(t.lambda) << ',' << format_double(t.mu) << ','
            << format_double(t.mean_cost) << '\n';
    }
}

std::vector<RunRecord> read_records_csv(std::istream& in) {
    std::vector<std::string> f;
    require(csv::read_record(in, f) && f.size() == 12 && f[0] == "controller", ErrorKind::Io,
            "records CSV: unexpected header");
    auto num = [](const std::string& s) {
        if (s == "NA" || s == "nan") return kNaN;
        return parse_number(s, "records CSV");
    };
    std::vector<RunRecord> out;
    while (csv::read_record(in, f)) {
        if (f.size() == 1 && f[0].empty()) continue;
        require(f.size() == 12, ErrorKind::Io, "records CSV: ragged row");
        RunRecord r;
        r.controller = f[0];
        r.point = {static_cast<int>(num(f[1])), num(f[2]), num(f[3])};
        r.seed = std::stoull(f[4]);
        r.cost = num(f[5]);
        r.output_cost = num(f[6]);
        r.input_cost = num(f[7]);
        r.wall_ms = num(f[8]);
        r.qp_iterations = std::stol(f[9]);
        r.status = f[10];
        r.dataset_hash = std::stoull(f[11], nullptr, 16);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace cddpc
