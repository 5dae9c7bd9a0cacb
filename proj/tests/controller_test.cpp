#include <gtest/gtest.h>

#include <memory>
#include <random>
#include <sstream>

#include "cddpc/controller.hpp"
#include "cddpc/linalg.hpp"
#include "support.hpp"

using namespace cddpc;
using fixtures::Problem;
using fixtures::ProblemOptions;

namespace {

double max_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).lpNorm<Eigen::Infinity>(); }

void expect_same(const StepResult& a, const StepResult& b, double tol, const std::string& what) {
    ASSERT_EQ(a.status, QpStatus::Solved) << what;
    ASSERT_EQ(b.status, QpStatus::Solved) << what;
    EXPECT_LE(max_diff(a.u_f, b.u_f), tol) << what;
    EXPECT_LE(max_diff(a.y_hat, b.y_hat), tol) << what;
}

ControllerSpec with(ControllerSpec spec, double mu, double lambda = 1e10) {
    spec.mu = mu;
    spec.lambda = lambda;
    return spec;
}

bool bound_active(const StepResult& s, double bound) {
    return (s.u_f.cwiseAbs().array() >= bound - 1e-6).any();
}

// Noise-free benchmark data with the closed-loop settings of the numerical study.
struct NoiseFree {
    HankelPartition part;
    LqBlocks blocks;
    ControllerSpec spec;
};

NoiseFree noise_free(int nd = 300) {
    NoiseFree nf;
    const HorizonSpec h(15, 30);
    nf.part = partition(collect_open_loop(StateSpaceModel::benchmark_siso(), square_wave(200, 3.0, nd), 0.0, 0), h);
    nf.blocks = factorize(nf.part, RankPolicy::CompressPast);
    nf.spec.horizon = h;
    nf.spec.cost = CostSpec::diagonal(1, 1, 1.0, 0.05);
    nf.spec.box = BoxConstraints::symmetric(1, 1, 2.0, 2.0);
    return nf;
}

}  // namespace

TEST(Spec, Validation) {
    ControllerSpec spec;
    spec.horizon = HorizonSpec(2, 2);
    spec.cost = CostSpec::diagonal(1, 1, 1.0, 0.0);
    spec.box = BoxConstraints::unbounded(1, 1);
    EXPECT_THROW(spec.validate(), Error);  // R must be positive definite
    spec.cost = CostSpec::diagonal(1, 1, -1.0, 1.0);
    EXPECT_THROW(spec.validate(), Error);  // Q must be PSD
    spec.cost = CostSpec::diagonal(1, 1, 0.0, 1.0);
    spec.validate();
    spec.mu = -1;
    EXPECT_THROW(spec.validate(), Error);
    spec.mu = 1;
    spec.box.u_lo(0) = 3;
    spec.box.u_hi(0) = 2;
    EXPECT_THROW(spec.validate(), Error);
}

TEST(Ids, RoundTrip) {
    for (ControllerKind k : {ControllerKind::Spc, ControllerKind::CausalSpc, ControllerKind::GammaDdpc,
                             ControllerKind::GammaDdpcHard, ControllerKind::CausalGammaDdpc,
                             ControllerKind::RegGammaDdpc, ControllerKind::RegCausalGammaDdpc,
                             ControllerKind::ProjRegDdpc, ControllerKind::KfMpc})
        EXPECT_EQ(controller_kind_from_id(controller_id(k)), k);
    EXPECT_THROW(controller_kind_from_id("deepc"), Error);
}

TEST(Condense, DecisionSizes) {
    const Problem pr = fixtures::random_problem(1);
    const int m = pr.part.m, p = pr.part.p, lf = pr.part.horizon.future;
    EXPECT_EQ(causal_gamma_formulation(pr.blocks, pr.split).decision_size(), m * lf);
    EXPECT_EQ(gamma_formulation(pr.blocks, 1.0).decision_size(), m * lf + p * lf);
    EXPECT_EQ(gamma_hard_formulation(pr.blocks).decision_size(), m * lf);
    EXPECT_EQ(reg_causal_gamma_formulation(pr.blocks, pr.split, 1.0, 1.0).decision_size(), 2 * m * lf + p * lf);
    EXPECT_EQ(projreg_formulation(pr.part, 1.0).decision_size(), pr.part.columns());
}

TEST(Condense, HessianIsPsdAndObjectiveMatches) {
    const Problem pr = fixtures::random_problem(2);
    const Formulation f = reg_causal_gamma_formulation(pr.blocks, pr.split, 0.3, 2.0);
    const CondensedQp c = condense(f, pr.z_p, pr.r_f, pr.spec.cost, pr.spec.box, pr.spec.horizon.future);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(c.qp.P).eigenvalues().minCoeff(), -1e-9);
    EXPECT_EQ(c.qp.A.rows(), pr.part.m * pr.spec.horizon.future);  // output bounds are infinite

    const Eigen::VectorXd x = Eigen::VectorXd::Random(f.decision_size());
    const Eigen::VectorXd u = f.u_gain * x + f.u_context * pr.z_p;
    const Eigen::VectorXd y = f.y_gain * x + f.y_context * pr.z_p;
    const int lf = pr.spec.horizon.future;
    const double j = (y - pr.r_f).dot(pr.spec.cost.horizon_output_weight(lf) * (y - pr.r_f)) +
                     u.dot(pr.spec.cost.horizon_input_weight(lf) * u) + x.dot(f.regularizer * x);
    EXPECT_NEAR(c.qp.objective(x) + c.constant, j, 1e-9 * std::max(1.0, j));
}

TEST(ZeroSolution, AtRest) {
    Problem pr = fixtures::random_problem(3);
    const Eigen::VectorXd z = Eigen::VectorXd::Zero(pr.z_p.size());
    const Eigen::VectorXd r = Eigen::VectorXd::Zero(pr.r_f.size());
    const std::vector<StepResult> all = {
        solve_spc(pr.blocks, z, r, pr.spec),
        solve_causal_spc(pr.blocks, z, r, pr.spec),
        solve_gamma(pr.blocks, z, r, with(pr.spec, 1.0)),
        solve_gamma_hard(pr.blocks, z, r, pr.spec),
        solve_causal_gamma(pr.blocks, pr.split, z, r, pr.spec),
        solve_reg_causal_gamma(pr.blocks, pr.split, z, r, with(pr.spec, 1.0, 1.0)),
    };
    for (const StepResult& s : all) {
        EXPECT_EQ(s.status, QpStatus::Solved);
        EXPECT_LT(s.u_f.lpNorm<Eigen::Infinity>(), 1e-9);
        EXPECT_LT(s.y_hat.lpNorm<Eigen::Infinity>(), 1e-9);
        EXPECT_EQ(s.u_applied.size(), pr.part.m);
    }
}

TEST(Spc, UnconstrainedMatchesNormalEquations) {
    ProblemOptions o;
    o.u_bound = kInfinity;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Problem pr = fixtures::random_problem(seed, o);
        const Predictor k = fit_spc(pr.blocks);
        const int lf = pr.spec.horizon.future;
        const Eigen::MatrixXd q = pr.spec.cost.horizon_output_weight(lf);
        const Eigen::MatrixXd r = pr.spec.cost.horizon_input_weight(lf);
        const Eigen::MatrixXd h = k.future_gain.transpose() * q * k.future_gain + r;
        const Eigen::VectorXd u = h.ldlt().solve(-k.future_gain.transpose() * q * (k.past_gain * pr.z_p - pr.r_f));
        const StepResult s = solve_spc(pr.blocks, pr.z_p, pr.r_f, pr.spec);
        EXPECT_LT(max_diff(s.u_f, u), 1e-7) << seed;
    }
}

TEST(Equivalence, GammaLimitIsSpc) {
    int active = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Problem pr = fixtures::random_problem(seed);
        const StepResult spc = solve_spc(pr.blocks, pr.z_p, pr.r_f, pr.spec);
        expect_same(solve_gamma(pr.blocks, pr.z_p, pr.r_f, with(pr.spec, 1e10)), spc, 1e-4, "gamma");
        expect_same(solve_gamma_hard(pr.blocks, pr.z_p, pr.r_f, pr.spec), spc, 1e-6, "gamma_hard");
        active += bound_active(spc, 0.6);
    }
    EXPECT_GE(active, 5);
}

TEST(Equivalence, CausalGammaIsCausalSpc) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Problem pr = fixtures::random_problem(seed);
        expect_same(solve_causal_gamma(pr.blocks, pr.split, pr.z_p, pr.r_f, pr.spec),
                    solve_causal_spc(pr.blocks, pr.z_p, pr.r_f, pr.spec), 1e-6, std::to_string(seed));
    }
}

TEST(Equivalence, ProjectionRegularizedMatchesGamma) {
    ProblemOptions o;
    o.max_columns = 150;
    o.max_past = 5;
    o.max_future = 6;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const Problem pr = fixtures::random_problem(seed, o);
        ASSERT_LE(pr.part.columns(), 300);
        for (double mu : {0.1, 1.0, 10.0}) {
            const ControllerSpec spec = with(pr.spec, mu);
            expect_same(solve_gamma(pr.blocks, pr.z_p, pr.r_f, spec), solve_projreg_g(pr.part, pr.z_p, pr.r_f, spec),
                        1e-5, std::to_string(seed) + "/" + std::to_string(mu));
        }
        // Large mu approaches SPC. Beyond ~1e6 the projected Hessian is too
        // ill-conditioned for the QP to converge, so only the trend is checked.
        const StepResult spc = solve_spc(pr.blocks, pr.z_p, pr.r_f, pr.spec);
        const double gap4 = max_diff(solve_projreg_g(pr.part, pr.z_p, pr.r_f, with(pr.spec, 1e4)).u_f, spc.u_f);
        const double gap6 = max_diff(solve_projreg_g(pr.part, pr.z_p, pr.r_f, with(pr.spec, 1e6)).u_f, spc.u_f);
        EXPECT_LE(gap6, gap4 + 1e-9) << seed;
        EXPECT_LT(gap6, 1e-4) << seed;
    }
}

TEST(Equivalence, ProjectorIsIdempotent) {
    ProblemOptions o;
    o.max_columns = 120;
    const Problem pr = fixtures::random_problem(9, o);
    const Eigen::MatrixXd pi = row_space_projector(pr.part);
    EXPECT_LT((pi * pi - pi).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((pi - pi.transpose()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Equivalence, RegularizedCausalLimits) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const Problem pr = fixtures::random_problem(seed);
        expect_same(solve_reg_causal_gamma(pr.blocks, pr.split, pr.z_p, pr.r_f, with(pr.spec, 1e10, 1e10)),
                    solve_causal_gamma(pr.blocks, pr.split, pr.z_p, pr.r_f, pr.spec), 1e-4, "lambda, mu -> inf");
        // With the full L32 as the causal part, the formulation is gamma-DDPC for any lambda.
        const CausalSplit whole{pr.blocks.l32, Eigen::MatrixXd::Zero(pr.blocks.l32.rows(), pr.blocks.l32.cols())};
        for (double mu : {0.5, 5.0}) {
            const StepResult g = solve_gamma(pr.blocks, pr.z_p, pr.r_f, with(pr.spec, mu));
            for (double lambda : {0.0, 1.0})
                expect_same(solve_reg_causal_gamma(pr.blocks, whole, pr.z_p, pr.r_f, with(pr.spec, mu, lambda)), g,
                            1e-6, "whole L32");
            // A free gamma2' can copy gamma2, so lambda = 0 is never worse than gamma-DDPC.
            const StepResult rc = solve_reg_causal_gamma(pr.blocks, pr.split, pr.z_p, pr.r_f, with(pr.spec, mu, 0.0));
            EXPECT_LE(rc.objective, g.objective + 1e-6 * std::max(1.0, g.objective)) << seed;
        }
    }
}

TEST(Equivalence, NoiseFreeVariantsCoincide) {
    const NoiseFree nf = noise_free();
    const CausalSplit split = causal_split(nf.blocks);
    const Trajectory fresh = collect_open_loop(StateSpaceModel::benchmark_siso(), square_wave(40, 1.0, 15), 0.0, 0);
    const Eigen::VectorXd z = stack_past(fresh.inputs(), fresh.outputs());
    const Eigen::VectorXd r = Reference::sine(1, 1.0, 60).preview(1, 30);
    const StepResult c = solve_causal_gamma(nf.blocks, split, z, r, nf.spec);
    expect_same(c, solve_gamma(nf.blocks, z, r, with(nf.spec, 1e10)), 1e-6, "gamma");
    expect_same(c, solve_spc(nf.blocks, z, r, nf.spec), 1e-6, "spc");
    expect_same(c, solve_causal_spc(nf.blocks, z, r, nf.spec), 1e-6, "c_spc");
}

TEST(Regularization, Gamma3ShrinksWithMu) {
    const Problem pr = fixtures::random_problem(4);
    const int tail = pr.part.p * pr.spec.horizon.future;
    double previous = kInfinity;
    for (double mu : {1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0, 1e4}) {
        const StepResult s = solve_gamma(pr.blocks, pr.z_p, pr.r_f, with(pr.spec, mu));
        ASSERT_EQ(s.status, QpStatus::Solved);
        const double norm = s.decision.tail(tail).norm();
        EXPECT_LE(norm, previous * (1 + 1e-6) + 1e-9) << mu;
        previous = norm;
    }
}

TEST(KfMpc, PredictionMatricesMatchRollout) {
    std::mt19937_64 rng(21);
    const StateSpaceModel model = fixtures::random_model(rng, 3, 2, 2);
    const int lf = 6;
    const PredictionMatrices pm = prediction_matrices(model, lf);
    for (int trial = 0; trial < 5; ++trial) {
        const Eigen::VectorXd x0 = fixtures::random_matrix(rng, 3, 1);
        const Eigen::VectorXd u = fixtures::random_matrix(rng, 2 * lf, 1);
        Eigen::VectorXd x = x0, y(2 * lf);
        for (int t = 0; t < lf; ++t) {
            const PlantStep s = step_lti(model, x, u.segment(2 * t, 2), Eigen::VectorXd::Zero(2));
            y.segment(2 * t, 2) = s.y;
            x = s.x_next;
        }
        EXPECT_LT(max_diff(pm.observability * x0 + pm.toeplitz * u, y), 1e-10);
    }
}

TEST(KfMpc, ZeroStateGivesZeroInput) {
    StateSpaceModel model = StateSpaceModel::benchmark_siso();
    model.D.setZero();
    ControllerSpec spec;
    spec.horizon = HorizonSpec(1, 10);
    spec.cost = CostSpec::diagonal(1, 1, 1.0, 0.05);
    spec.box = BoxConstraints::symmetric(1, 1, 2.0, 2.0);
    const StepResult s = solve_kf_mpc(model, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(10), spec);
    EXPECT_EQ(s.status, QpStatus::Solved);
    EXPECT_LT(s.u_f.lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(KfUpdate, ZeroInnovationAndOpenLoop) {
    StateSpaceModel model = StateSpaceModel::benchmark_siso();
    const Eigen::Vector2d x(0.3, -0.7);
    const Eigen::VectorXd u = Eigen::VectorXd::Constant(1, 0.4);
    const Eigen::VectorXd y = model.C * x + model.D * u;
    EXPECT_LT(max_diff(kf_update(model, x, u, y), model.A * x + model.B * u), 1e-15);
    model.K.setZero();
    EXPECT_LT(max_diff(kf_update(model, x, u, y.array() + 5.0), model.A * x + model.B * u), 1e-15);
    EXPECT_THROW(kf_update(model, x, Eigen::VectorXd::Zero(2), y), Error);
}

TEST(KfUpdate, InnovationsAreWhite) {
    const StateSpaceModel model = StateSpaceModel::benchmark_siso();
    const int n = 4000;
    const Trajectory data = fixtures::white_dataset(model, n, 0.5, 77);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(2), innov(n);
    for (int t = 0; t < n; ++t) {
        innov(t) = (data.outputs().col(t) - model.C * x - model.D * data.inputs().col(t))(0);
        x = kf_update(model, x, data.inputs().col(t), data.outputs().col(t));
    }
    const double c0 = innov.squaredNorm();
    for (int lag = 1; lag <= 5; ++lag) {
        const double c = innov.head(n - lag).dot(innov.tail(n - lag)) / c0;
        EXPECT_LT(std::abs(c), 3.0 / std::sqrt(n)) << lag;
    }
}

TEST(Reference, SinePreview) {
    const Reference r = Reference::sine(2, 1.5, 60);
    const Eigen::VectorXd v = r.preview(3, 4);
    ASSERT_EQ(v.size(), 8);
    for (int k = 0; k < 4; ++k) {
        EXPECT_DOUBLE_EQ(v(2 * k), 1.5 * std::sin(2 * M_PI * (3 + k) / 60.0));
        EXPECT_DOUBLE_EQ(v(2 * k + 1), v(2 * k));
    }
    EXPECT_EQ(Reference::zero(3).at(17), Eigen::VectorXd::Zero(3));
}

TEST(ClosedLoop, ZeroCostAtRest) {
    const NoiseFree nf = noise_free();
    ControllerData data;
    data.blocks = std::make_shared<const LqBlocks>(nf.blocks);
    data.model = StateSpaceModel::benchmark_siso();
    RecedingHorizonOptions opt;
    opt.reference = Reference::zero(1);
    for (ControllerKind kind : {ControllerKind::CausalGammaDdpc, ControllerKind::KfMpc}) {
        ControllerSpec spec = nf.spec;
        spec.kind = kind;
        Controller c = make_controller(spec, data);
        const ClosedLoopRun run = run_receding_horizon(StateSpaceModel::benchmark_siso(), c, opt);
        EXPECT_FALSE(run.aborted);
        EXPECT_LT(run.cost, 1e-14) << to_string(kind);
    }
}

TEST(ClosedLoop, RespectsInputBoxAndIsDeterministic) {
    const NoiseFree nf = noise_free();
    ControllerData data;
    data.blocks = std::make_shared<const LqBlocks>(nf.blocks);
    ControllerSpec spec = nf.spec;
    spec.box = BoxConstraints::symmetric(1, 1, 0.5, kInfinity);
    RecedingHorizonOptions opt;
    opt.reference = Reference::sine(1, 1.0, 60);
    opt.noise_std = 0.1;
    opt.seed = 4;
    Controller a = make_controller(spec, data);
    Controller b = make_controller(spec, data);
    const ClosedLoopRun ra = run_receding_horizon(StateSpaceModel::benchmark_siso(), a, opt);
    const ClosedLoopRun rb = run_receding_horizon(StateSpaceModel::benchmark_siso(), b, opt);
    ASSERT_FALSE(ra.aborted);
    EXPECT_LE(ra.trajectory.inputs().cwiseAbs().maxCoeff(), 0.5 + 1e-7);
    EXPECT_EQ(ra.trajectory.inputs(), rb.trajectory.inputs());
    EXPECT_EQ(ra.trajectory.outputs(), rb.trajectory.outputs());
    EXPECT_EQ(ra.cost, rb.cost);
    EXPECT_NEAR(ra.cost, ra.output_cost + ra.input_cost, 1e-12);
    for (const StepResult& s : ra.steps) EXPECT_EQ(s.u_applied, s.u_f.head(1));
}

TEST(ClosedLoop, CachedSolverMatchesOneShot) {
    const Problem pr = fixtures::random_problem(6);
    ControllerData data;
    data.blocks = std::make_shared<const LqBlocks>(pr.blocks);
    ControllerSpec spec = pr.spec;
    spec.kind = ControllerKind::CausalGammaDdpc;
    Controller c = make_controller(spec, data);
    c.step(pr.z_p * 0.5, pr.r_f);  // leaves a warm start behind
    const StepResult cached = c.step(pr.z_p, pr.r_f);
    expect_same(cached, solve_causal_gamma(pr.blocks, pr.split, pr.z_p, pr.r_f, spec), 1e-6, "warm");
}

TEST(ClosedLoop, RelaxesInfeasibleOutputBounds) {
    const NoiseFree nf = noise_free();
    ControllerData data;
    data.blocks = std::make_shared<const LqBlocks>(nf.blocks);
    ControllerSpec spec = nf.spec;
    spec.box = BoxConstraints::symmetric(1, 1, 0.01, 0.05);
    RecedingHorizonOptions opt;
    opt.reference = Reference::sine(1, 1.0, 60);
    opt.warmup_inputs = Eigen::MatrixXd::Constant(1, 15, 3.0);  // leaves y far outside +-0.05

    Controller strict = make_controller(spec, data);
    const ClosedLoopRun a = run_receding_horizon(StateSpaceModel::benchmark_siso(), strict, opt);
    EXPECT_TRUE(a.aborted);
    EXPECT_EQ(a.status, QpStatus::PrimalInfeasible);

    spec.relax_output_bounds = true;
    Controller relaxed = make_controller(spec, data);
    const ClosedLoopRun b = run_receding_horizon(StateSpaceModel::benchmark_siso(), relaxed, opt);
    EXPECT_FALSE(b.aborted);
    EXPECT_GT(b.relaxed_steps, 0);
    EXPECT_EQ(b.trajectory.length(), 60);
}

TEST(RunCsv, HeaderAndRows) {
    const NoiseFree nf = noise_free();
    ControllerData data;
    data.blocks = std::make_shared<const LqBlocks>(nf.blocks);
    Controller c = make_controller(nf.spec, data);
    RecedingHorizonOptions opt;
    opt.steps = 3;
    opt.reference = Reference::sine(1, 1.0, 60);
    std::ostringstream out;
    write_run_csv(out, run_receding_horizon(StateSpaceModel::benchmark_siso(), c, opt));
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "t,u1,y1,r1,J_cum,qp_iters,qp_status");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 3);
}
