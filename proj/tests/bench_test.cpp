#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "cddpc/bench.hpp"
#include "cddpc/config.hpp"

using namespace cddpc;

namespace {

const char* kSmall = R"(# small sweep
[experiment]
name = small

[plant]
model = siso

[excitation]
kind = square
period = 40
amplitude = 3

[horizon]
past = 4
future = 6

[cost]
q = 1
r = 0.05

[box]
u_lo = -2
u_hi = 2

[reference]
shape = sine
amplitude = 1
period = 30

[control]
steps = 12

[sweep]
n_d = 80, 120
sigma_e = 0, 0.2
seeds = 3
threads = 2

[controllers]
run = c_gamma, gamma, spc, c_spc
gamma.mu = 1e10

[tune]
grid_lo = 1e-2
grid_hi = 1e2
points = 3
validation_seeds = 2
)";

ExperimentConfig small(const std::string& extra = "") {
    std::istringstream in(std::string(kSmall) + extra);
    return parse_config(KeyValueFile::parse(in));
}

ErrorKind parse_error(const std::string& text) {
    try {
        std::istringstream in(text);
        parse_config(KeyValueFile::parse(in));
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::Io;  // sentinel: no error
}

}  // namespace

TEST(KeyValue, SectionsCommentsAndLists) {
    std::istringstream in("\xEF\xBB\xBF# top\n[A]\nKey = 1, 2 ,3  # trailing\nm = 1 2; 3 4\n\n[b]\nflag = yes\n");
    const KeyValueFile kv = KeyValueFile::parse(in);
    EXPECT_EQ(kv.numbers("a.key"), (std::vector<double>{1, 2, 3}));
    EXPECT_EQ(kv.matrix("a.m"), (Eigen::MatrixXd(2, 2) << 1, 2, 3, 4).finished());
    EXPECT_TRUE(kv.boolean("b.flag", false));
    EXPECT_EQ(kv.number("b.missing", 7.5), 7.5);
    EXPECT_TRUE(kv.unused_keys().empty());
}

TEST(KeyValue, Errors) {
    std::istringstream dup("[a]\nx = 1\nx = 2\n");
    EXPECT_THROW(KeyValueFile::parse(dup), Error);
    std::istringstream bare("[a]\njust words\n");
    EXPECT_THROW(KeyValueFile::parse(bare), Error);
    std::istringstream ok("[a]\nx = abc\n");
    const KeyValueFile kv = KeyValueFile::parse(ok);
    EXPECT_THROW(kv.number("a.x"), Error);
    EXPECT_THROW(kv.number("a.y"), Error);
    EXPECT_EQ(parse_number("-inf", "v"), -kInfinity);
}

TEST(Config, ParsesSmall) {
    const ExperimentConfig c = small();
    EXPECT_EQ(c.name, "small");
    EXPECT_EQ(c.horizon.past, 4);
    EXPECT_EQ(c.n_d, (std::vector<int>{80, 120}));
    EXPECT_EQ(c.controllers.size(), 4u);
    EXPECT_EQ(c.controller("gamma").mu, 1e10);
    EXPECT_EQ(c.box.y_hi(0), kInfinity);
    EXPECT_EQ(c.box.u_lo(0), -2.0);
    const ControllerSpec spec = c.controller_spec(c.controller("c_gamma"));
    EXPECT_EQ(spec.kind, ControllerKind::CausalGammaDdpc);
    EXPECT_EQ(spec.cost.input_weight(0, 0), 0.05);
}

TEST(Config, RejectsBadInput) {
    EXPECT_EQ(parse_error(std::string(kSmall) + "[extra]\ntypo = 1\n"), ErrorKind::Config);
    std::string s = kSmall;
    EXPECT_EQ(parse_error(s.replace(s.find("seeds = 3"), 9, "seeds = 0")), ErrorKind::Config);
    s = kSmall;
    EXPECT_EQ(parse_error(s.replace(s.find("c_gamma, gamma"), 14, "c_gamma, deepc")), ErrorKind::InvalidArgument);
    s = kSmall;
    EXPECT_EQ(parse_error(s.replace(s.find("model = siso"), 12, "model = furnace")), ErrorKind::Config);
}

TEST(Config, TuneGrid) {
    TuneSpec t;
    t.grid_lo = 1e-5;
    t.grid_hi = 1e5;
    t.points = 11;
    const std::vector<double> g = t.grid();
    ASSERT_EQ(g.size(), 11u);
    for (int i = 0; i < 11; ++i) EXPECT_NEAR(std::log10(g[i]), -5 + i, 1e-12);
    t.points = 1;
    EXPECT_EQ(t.grid(), std::vector<double>{1e5});
}

TEST(Sweep, SingleRecord) {
    ExperimentConfig c = small();
    c.n_d = {80};
    c.sigma_e = {0.1};
    c.seeds = 1;
    c.controllers.resize(1);
    EXPECT_EQ(run_sweep(c).size(), 1u);
}

TEST(Sweep, PairedDatasetsAndOrdering) {
    const ExperimentConfig c = small();
    const std::vector<RunRecord> r = run_sweep(c);
    ASSERT_EQ(r.size(), 2u * 2 * 3 * 4);
    for (std::size_t i = 0; i < r.size(); i += 4) {
        std::set<std::uint64_t> hashes;
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_EQ(r[i + j].controller, c.controllers[j].id());
            EXPECT_EQ(r[i + j].seed, r[i].seed);
            EXPECT_EQ(r[i + j].point, r[i].point);
            hashes.insert(r[i + j].dataset_hash);
        }
        EXPECT_EQ(hashes.size(), 1u);
    }
    // Different seeds give different data once there is noise.
    std::set<std::uint64_t> noisy;
    for (const RunRecord& rec : r)
        if (rec.point.sigma_e > 0.0 && rec.point.n_d == 80) noisy.insert(rec.dataset_hash);
    EXPECT_EQ(noisy.size(), 3u);
    for (const RunRecord& rec : r) {
        EXPECT_TRUE(rec.completed()) << rec.status;
        EXPECT_NEAR(rec.cost, rec.output_cost + rec.input_cost, 1e-9 * rec.cost);
        EXPECT_TRUE(std::isnan(rec.wall_ms));
    }
}

TEST(Sweep, NoiseFreeControllersAgree) {
    ExperimentConfig c = small();
    c.sigma_e = {0.0};
    c.n_d = {120};
    const std::vector<RunRecord> r = run_sweep(c);
    for (std::size_t i = 0; i < r.size(); i += 4)
        for (std::size_t j = 1; j < 4; ++j) EXPECT_NEAR(r[i + j].cost / r[i].cost, 1.0, 1e-6) << r[i + j].controller;
}

TEST(Sweep, ThreadCountDoesNotChangeResults) {
    ExperimentConfig c = small();
    c.threads = 1;
    std::ostringstream a, b;
    write_records_csv(a, run_sweep(c));
    c.threads = 3;
    write_records_csv(b, run_sweep(c));
    EXPECT_EQ(a.str(), b.str());
}

TEST(Sweep, FailuresAreRecorded) {
    ExperimentConfig c = small();
    c.n_d = {20};  // too few columns for the factorization
    c.sigma_e = {0.2};
    c.seeds = 1;
    const std::vector<RunRecord> r = run_sweep(c);
    ASSERT_EQ(r.size(), 4u);
    for (const RunRecord& rec : r) {
        EXPECT_EQ(rec.status, "RankDeficient");
        EXPECT_FALSE(rec.completed());
        EXPECT_TRUE(std::isnan(rec.cost));
    }
    EXPECT_THROW(normalize_costs(r, "c_gamma"), Error);
}

TEST(Tune, SinglePointAndTieRule) {
    ExperimentConfig c = small();
    const GridPoint pt{80, 0.2, 0.0};
    const std::vector<std::uint64_t> seeds{100, 101};
    ControllerEntry e{ControllerKind::RegGammaDdpc, 1.0, 1.0, true};
    EXPECT_EQ(tune(c, e, pt, {3.0}, seeds).mu, 3.0);
    // C-gamma-DDPC ignores mu, so every candidate ties and the largest wins.
    ControllerEntry flat{ControllerKind::CausalGammaDdpc, 1.0, 1.0, true};
    const TunedParameters t = tune(c, flat, pt, {1e-3, 1.0, 1e3}, seeds);
    EXPECT_EQ(t.mu, 1e3);
    ControllerEntry rc{ControllerKind::RegCausalGammaDdpc, 1.0, 1.0, true};
    const TunedParameters two = tune(c, rc, pt, {1e-1, 1e1}, seeds);
    EXPECT_TRUE(two.lambda == 1e-1 || two.lambda == 1e1);
    EXPECT_TRUE(std::isfinite(two.mean_cost));
}

TEST(Tune, TunedWeightsFeedTheSweep) {
    ExperimentConfig c = small();
    c.controllers.push_back({ControllerKind::RegGammaDdpc, 1.0, 1.0, true});
    c.n_d = {80};
    c.sigma_e = {0.2};
    EXPECT_THROW(run_sweep(c), Error);  // no tuned entry
    const std::vector<TunedParameters> tuned = tune_all(c);
    ASSERT_EQ(tuned.size(), 1u);
    EXPECT_EQ(tuned[0].controller, "r_gamma");
    EXPECT_EQ(run_sweep(c, tuned).size(), 3u * 5);
}

TEST(Normalize, RatiosAndMedians) {
    std::vector<RunRecord> r;
    const GridPoint pt{200, 0.3, 0.0};
    for (double j : {1.0, 2.0, 6.0}) r.push_back({"base", pt, 0, j, 0, 0, NAN, 0, "Solved", 0});
    for (double j : {2.0, 4.0}) r.push_back({"other", pt, 0, j, 0, 0, NAN, 0, "Solved", 0});
    r.push_back({"other", pt, 0, NAN, 0, 0, NAN, 0, "PrimalInfeasible", 0});
    for (double j : {1.0, 2.0, 6.0}) r.push_back({"twin", pt, 0, j, 0, 0, NAN, 0, "Solved", 0});
    const std::vector<NormalizedRow> rows = normalize_costs(r, "base");
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].controller, "base");
    EXPECT_EQ(rows[0].ratio, 1.0);
    EXPECT_EQ(rows[0].median_cost, 2.0);
    EXPECT_EQ(rows[1].failed, 1);
    EXPECT_EQ(rows[1].mean_cost, 3.0);
    EXPECT_EQ(rows[1].median_cost, 4.0);  // the failure counts as +inf
    EXPECT_EQ(rows[1].ratio, 1.0);
    EXPECT_EQ(rows[2].ratio, 1.0);
    EXPECT_THROW(normalize_costs(r, "missing"), Error);
}

TEST(Median, EvenOddAndInfinity) {
    EXPECT_EQ(median({3, 1, 2}), 2.0);
    EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
    EXPECT_EQ(median({1, kInfinity, kInfinity}), kInfinity);
}

TEST(RecordsCsv, HeaderAndRoundTrip) {
    ExperimentConfig c = small();
    c.seeds = 1;
    c.n_d = {80};
    const std::vector<RunRecord> r = run_sweep(c);
    std::stringstream ss;
    write_records_csv(ss, r);
    std::string header;
    std::getline(std::istringstream(ss.str()) >> std::ws, header);
    EXPECT_EQ(header, "controller,N_d,sigma_e,eps,seed,J,J_y,J_u,wall_ms,qp_iters,status,dataset_hash");
    const std::vector<RunRecord> back = read_records_csv(ss);
    ASSERT_EQ(back.size(), r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        EXPECT_EQ(back[i].controller, r[i].controller);
        EXPECT_EQ(back[i].cost, r[i].cost);
        EXPECT_EQ(back[i].dataset_hash, r[i].dataset_hash);
        EXPECT_EQ(back[i].point, r[i].point);
        EXPECT_TRUE(std::isnan(back[i].wall_ms));
    }
    std::ostringstream norm;
    write_normalized_csv(norm, normalize_costs(r, "c_gamma"));
    EXPECT_EQ(norm.str().substr(0, norm.str().find('\n')),
              "controller,N_d,sigma_e,eps,runs,failed,mean_J,median_J,ratio,median_ratio");
}

TEST(Dataset, ExcitationKinds) {
    ExperimentConfig c = small("");
    const GridPoint pt{100, 0.1, 0.0};
    EXPECT_EQ(collect_dataset(c, pt, 1).length(), 100);
    c.excitation.kind = ExcitationSpec::Kind::Uniform;
    c.excitation.amplitude = 1.0;
    c.excitation.hold = 2;
    const Trajectory u = collect_dataset(c, pt, 1);
    EXPECT_LE(u.inputs().cwiseAbs().maxCoeff(), 1.0);
    for (int t = 0; t < 100; t += 2) EXPECT_EQ(u.inputs()(0, t), u.inputs()(0, t + 1));
    EXPECT_NE(dataset_hash(u), dataset_hash(collect_dataset(c, pt, 2)));
    EXPECT_EQ(dataset_hash(u), dataset_hash(collect_dataset(c, pt, 1)));
}

TEST(ParallelFor, CoversEveryIndexOnce) {
    std::vector<int> hits(1000, 0);
    parallel_for(1000, 4, [&](int i) { ++hits[i]; });
    for (int h : hits) EXPECT_EQ(h, 1);
    parallel_for(0, 4, [&](int) { FAIL(); });
}
