#include <doctest.h>

#include "test_util.hpp"
#include "textdiff/metrics.hpp"
#include "textdiff/sampler.hpp"

#include <cmath>
#include <sstream>

using namespace textdiff;

namespace {

std::vector<SolverNode> schedule_nodes(const NoiseSchedule& sched, int steps) {
    std::vector<SolverNode> nodes;
    for (int t : respace(sched, steps).steps) nodes.push_back(node_at(sched, t));
    return nodes;
}

// Predictor that ignores its input and returns the embeddings of a packed row.
Predictor oracle(const EmbeddingTable& table, const PackedRow& row) {
    const Mat target = embed(table, row.ids);
    return [target](const Mat&, const SolverNode&, const SequenceMasks&) { return target; };
}

struct Fixture {
    Vocab vocab = testing::small_vocab(8);
    NoiseSchedule sched = build_sqrt_schedule(40);
    EmbeddingTable table;
    Fixture() : table(vocab.size(), 4) {
        Rng rng(1);
        table = EmbeddingTable(vocab.size(), 4, rng, 1.0);
    }
};

}  // namespace

TEST_CASE("solver is exact for constant and affine predictors") {
    const auto sched = build_sqrt_schedule(200);
    for (int steps : {2, 10, 50}) {
        const auto nodes = schedule_nodes(sched, steps);
        const double c = 1.7;
        const double e_const = testing::ode_relative_error(
            nodes, [&](double) { return c; }, [&](double l) { return c * std::exp(l); });
        const double a = 0.4, b = -0.3;
        const double e_affine = testing::ode_relative_error(
            nodes, [&](double l) { return a + b * l; }, [&](double l) { return std::exp(l) * (a + b * l - b); });
        CAPTURE(steps);
        CHECK(e_const <= 1e-10);
        CHECK(e_affine <= 1e-10);
    }
}

TEST_CASE("solver has global order two") {
    std::vector<double> err;
    for (int n : {8, 16, 32, 64, 128}) err.push_back(testing::sin_solution_error(n, -3.0, 3.0));
    for (std::size_t k = 1; k < err.size(); ++k) {
        const double ratio = err[k - 1] / err[k];
        CAPTURE(ratio);
        CHECK(ratio >= 3.0);
        CHECK(ratio <= 5.0);
    }
}

TEST_CASE("midpoint variant is exact for a constant predictor") {
    const auto sched = build_sqrt_schedule(200);
    LatentState state;
    state.z = Mat::Constant(1, 1, 0.3);
    state.masks = {Mask{0}, Mask{1}};
    state.absorbed = {0};
    Predictor pred = [](const Mat& z, const SolverNode&, const SequenceMasks&) {
        return Mat(Mat::Constant(z.rows(), z.cols(), 2.0));
    };
    const auto nodes = schedule_nodes(sched, 10);
    dpm_solver_2m(pred, state, nodes, SolverVariant::midpoint, {}, {});
    const auto& a = nodes.front();
    const auto& e = nodes.back();
    const double exact = e.sigma / a.sigma * 0.3 + 2.0 * (e.alpha - e.sigma * a.alpha / a.sigma);
    CHECK(state.z(0, 0) == doctest::Approx(exact).epsilon(1e-12));
}

TEST_CASE("solver rejects bad node lists") {
    LatentState state;
    state.z = Mat::Zero(1, 1);
    state.masks = {Mask{0}, Mask{1}};
    Predictor pred = [](const Mat& z, const SolverNode&, const SequenceMasks&) { return z; };
    std::vector<SolverNode> one{testing::vp_node(1, 0.0)};
    CHECK_THROWS(dpm_solver_2m(pred, state, one, SolverVariant::phi, {}, {}));
    std::vector<SolverNode> flat{testing::vp_node(1, 0.0), testing::vp_node(0, 0.0)};
    CHECK_THROWS(dpm_solver_2m(pred, state, flat, SolverVariant::phi, {}, {}));
}

TEST_CASE("init_latent statistics") {
    Fixture f;
    std::vector<TokenId> src{3, 4, 5};
    Rng a(2), b(2);
    auto s = init_latent(f.table, src, 10, a);
    CHECK(s.z == init_latent(f.table, src, 10, b).z);
    const Mat e = embed(f.table, std::vector<TokenId>{3, 4, 5, Vocab::kSep});
    CHECK(s.z.topRows(4) == e);
    CHECK_THROWS(init_latent(f.table, src, 3, a));

    Rng rng(3);
    double sum = 0.0, sq = 0.0;
    long n = 0;
    while (n < 100000) {
        auto st = init_latent(f.table, src, 10, rng);
        for (int i = 4; i < 10; ++i)
            for (int k = 0; k < 4; ++k) {
                sum += st.z(i, k);
                sq += st.z(i, k) * st.z(i, k);
                ++n;
            }
    }
    const double mean = sum / n;
    CHECK(testing::z_score(mean, 0.0, 1.0, n) < 4.0);
    CHECK(testing::z_score(sq / n - mean * mean, 1.0, std::sqrt(2.0), n) < 4.0);
}

TEST_CASE("ancestral sampling with a perfect denoiser approaches z0") {
    Fixture f;
    const PackedRow row = pack({{3, 4}, {5, 6, 7}}, 8);
    const Mat z0 = embed(f.table, row.ids);
    Rng rng(4);
    LatentState state = init_latent(f.table, std::vector<TokenId>{3, 4}, 8, rng);
    state.t = f.sched.steps();
    StepFlags flags;
    flags.inject_mask = false;
    auto rms = [&](const LatentState& s) { return std::sqrt((s.z - z0).bottomRows(5).squaredNorm() / 20.0); };
    const double start = rms(state);
    SampleTrace trace;
    const Mat x0 = ancestral_sample(oracle(f.table, row), f.table, f.sched, state, respace(f.sched, 40), flags, rng,
                                    &trace);
    CHECK(state.t == 0);
    CHECK(rms(state) < 0.1 * start);
    CHECK(rms(state) < 0.2);
    CHECK(x0 == z0);
    CHECK(trace.nfe == 40);
    CHECK(trace.steps.size() == 40);
}

TEST_CASE("oracle denoiser decodes the reference exactly") {
    Fixture f;
    const std::vector<TokenId> src{3, 9, 4};
    const std::vector<TokenId> trg{7, 8, 5, 10};
    const PackedRow row = pack({src, trg}, 12);
    for (auto mode : {SamplerMode::ancestral, SamplerMode::respaced, SamplerMode::dpm2m}) {
        for (bool clamp : {false, true}) {
            SamplerConfig cfg;
            cfg.mode = mode;
            cfg.steps = 5;
            cfg.use_clamp = clamp;
            auto gen = generate(oracle(f.table, row), f.table, f.sched, f.vocab, src, 12, cfg, Rng(5));
            CHECK(gen.selected == f.vocab.decode(trg));
            CHECK(gen.candidate_ids[0] == trg);
        }
    }
}

TEST_CASE("nfe and trace bookkeeping") {
    Fixture f;
    const std::vector<TokenId> src{3, 4};
    const PackedRow row = pack({src, {5}}, 6);
    SamplerConfig cfg;
    cfg.mode = SamplerMode::dpm2m;
    cfg.steps = 2;
    auto gen = generate(oracle(f.table, row), f.table, f.sched, f.vocab, src, 6, cfg, Rng(1));
    CHECK(gen.nfe == 2);
    CHECK(cfg.function_evaluations(f.sched) == 2);
    REQUIRE(gen.trace.steps.size() == 3);
    CHECK(gen.trace.steps[0].t == 40);
    CHECK(gen.trace.steps[1].t == 20);
    CHECK(gen.trace.steps[2].t == 0);
    CHECK(gen.trace.clamp_calls == 0);

    cfg.mode = SamplerMode::ancestral;
    cfg.use_clamp = true;
    gen = generate(oracle(f.table, row), f.table, f.sched, f.vocab, src, 6, cfg, Rng(1));
    CHECK(gen.nfe == 40);
    CHECK(cfg.function_evaluations(f.sched) == 40);
    CHECK(gen.trace.clamp_calls == 40);
    CHECK(gen.trace.steps.size() == 41);

    std::ostringstream os;
    gen.trace.write_csv(os);
    CHECK(os.str().rfind("step,t,lambda,absorbed\n", 0) == 0);
}

TEST_CASE("mask injection is visible in the trace") {
    Fixture f;
    const std::vector<TokenId> src{3};
    const PackedRow row = pack({src, {5}}, 30);
    SamplerConfig cfg;
    cfg.mode = SamplerMode::respaced;
    cfg.steps = 40;
    cfg.gamma = 1.0;
    auto gen = generate(oracle(f.table, row), f.table, f.sched, f.vocab, src, 30, cfg, Rng(2));
    CHECK(gen.trace.steps.front().absorbed > 10);  // beta_T is almost one
    CHECK(gen.trace.steps.back().absorbed == 0);   // nothing injected at t = 0
    cfg.inject_mask = false;
    gen = generate(oracle(f.table, row), f.table, f.sched, f.vocab, src, 30, cfg, Rng(2));
    for (const auto& s : gen.trace.steps) CHECK(s.absorbed == 0);
}

TEST_CASE("candidates and validation") {
    Fixture f;
    const std::vector<TokenId> src{3, 4};
    const PackedRow row = pack({src, {5, 6}}, 6);
    SamplerConfig cfg;
    cfg.mbr_candidates = 10;
    auto gen = generate(oracle(f.table, row), f.table, f.sched, f.vocab, src, 6, cfg, Rng(1));
    CHECK(gen.candidates.size() == 10);
    CHECK(gen.nfe == 100);
    cfg.mbr_candidates = 1;
    gen = generate(oracle(f.table, row), f.table, f.sched, f.vocab, src, 6, cfg, Rng(1));
    CHECK(gen.candidates.size() == 1);
    CHECK(gen.selected_index == 0);

    cfg.steps = 41;
    CHECK_THROWS(cfg.validate(f.sched));
    cfg.steps = 10;
    cfg.mbr_candidates = 0;
    CHECK_THROWS(cfg.validate(f.sched));
    CHECK(parse_sampler_mode("dpm2m") == SamplerMode::dpm2m);
    CHECK_THROWS(parse_sampler_mode("ddim"));
}

TEST_CASE("mbr selection examples") {
    CHECK(mbr_select({"a b", "a b", "c d"}) == "a b");
    CHECK(mbr_select({"x y z", "x y z", "x y z"}) == "x y z");
    CHECK(mbr_select({"only"}) == "only");
    CHECK_THROWS(mbr_select({}));
    // ties go to the first index
    CHECK(mbr_select_index({"a b", "c d"}) == 0);

    // hand-built pool: pairwise table computed explicitly
    const std::vector<std::string> pool{"a b c d", "a b c e", "x b c d"};
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < pool.size(); ++j)
            if (i != j) s += bleu(pool[i], pool[j]);
        if (s > best) {
            best = s;
            arg = i;
        }
    }
    CHECK(arg == 0);
    CHECK(mbr_select_index(pool) == arg);
}
