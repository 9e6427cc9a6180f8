#include <doctest.h>

#include "test_util.hpp"
#include "textdiff/diffusion.hpp"

#include <cmath>

using namespace textdiff;
using testing::z_score;

namespace {

PackedRow one_target_row(int target_len, int L) {
    std::vector<TokenId> trg(target_len, 4);
    return pack({{3}, trg}, L);
}

}  // namespace

TEST_CASE("mask probability") {
    auto s = build_sqrt_schedule(200);
    CHECK(mask_probability(s, 10, 0.5) == doctest::Approx(0.5 * s.beta(10)));
    CHECK(mask_probability(s, 10, 0.5, MaskRate::cumulative) == doctest::Approx(0.5 * (1 - s.alpha_bar(10))));
    CHECK(mask_probability(s, 200, 1.0) <= 1.0);
    CHECK(mask_probability(s, 200, 0.0) == 0.0);
}

TEST_CASE("sample_z0 perturbs targets only") {
    const auto vocab = testing::small_vocab(4);
    Rng init(1);
    EmbeddingTable table(vocab.size(), 4, init, 1.0);
    auto sched = build_sqrt_schedule(200);
    const auto row = one_target_row(3, 8);
    Rng a(9), b(9);
    auto z = sample_z0(table, row, sched, a);
    CHECK(z.z == sample_z0(table, row, sched, b).z);
    const Mat e = embed(table, row.ids);
    for (int i = 0; i < 2; ++i) CHECK(z.z.row(i) == e.row(i));
    CHECK(z.z.row(2) != e.row(2));
    CHECK(z.t == 0);

    // std of the perturbation
    Rng rng(10);
    double sum = 0.0, sq = 0.0;
    long n = 0;
    while (n < 100000) {
        auto s = sample_z0(table, row, sched, rng);
        for (int i = 2; i < 8; ++i)
            for (int k = 0; k < 4; ++k) {
                const double d = s.z(i, k) - e(i, k);
                sum += d;
                sq += d * d;
                ++n;
            }
    }
    const double var = sq / n - (sum / n) * (sum / n);
    CHECK(z_score(var, 0.01, 0.01 * std::sqrt(2.0), n) < 4.0);
    CHECK(std::sqrt(var) == doctest::Approx(0.1).epsilon(0.01));
}

TEST_CASE("forward marginal scalar example") {
    auto sched = build_sqrt_schedule(200);
    // find the closed form with an explicit epsilon on a level with alpha_bar = a
    LatentState z0;
    z0.z = Mat::Constant(2, 1, 2.0);
    z0.masks = {{1, 0}, {1, 1}};
    z0.absorbed = {0, 0};
    const int t = 50;
    const Mat eps = Mat::Constant(2, 1, 1.0);
    auto zt = forward_marginal(z0, t, sched, eps);
    CHECK(zt.z(0, 0) == 2.0);
    CHECK(zt.z(1, 0) == doctest::Approx(sched.alpha_hat(t) * 2.0 + sched.sigma(t)).epsilon(1e-14));
    CHECK(zt.t == t);
    // alpha_bar = 0.25, z0 = 2, eps = 1
    CHECK(0.5 * 2.0 + std::sqrt(0.75) == doctest::Approx(1.8660).epsilon(1e-4));
    CHECK_THROWS(forward_marginal(z0, 0, sched, eps));
    CHECK_THROWS(forward_marginal(z0, t, sched, Mat::Zero(3, 1)));
}

TEST_CASE("forward marginal statistics") {
    auto sched = build_sqrt_schedule(200);
    LatentState z0;
    z0.z = Mat::Constant(1000, 1, 1.5);
    z0.masks = {Mask(1000, 0), Mask(1000, 1)};
    z0.absorbed.assign(1000, 0);
    Rng rng(4);
    const int t = 30;
    double sum = 0.0;
    const int reps = 100;
    for (int r = 0; r < reps; ++r) sum += forward_marginal(z0, t, sched, rng).z.sum();
    const double n = 1000.0 * reps;
    CHECK(z_score(sum / n, sched.alpha_hat(t) * 1.5, sched.sigma(t), n) < 4.0);
}

TEST_CASE("absorbing replacement rate") {
    const auto vocab = testing::small_vocab(4);
    Rng init(2);
    EmbeddingTable table(vocab.size(), 2, init, 1.0);
    auto sched = build_sqrt_schedule(200);
    LatentState s;
    const int L = 1000;
    s.z = Mat::Zero(L, 2);
    s.masks = {Mask(L, 0), Mask(L, 1)};
    s.masks.condition[0] = 1;
    s.t = 150;
    Rng rng(3);
    const double p = 0.5 * sched.beta(150);
    long hits = 0, n = 0;
    for (int r = 0; r < 100; ++r) {
        auto out = apply_absorbing(s, 0.5, table, sched, rng);
        CHECK(out.absorbed[0] == 0);
        for (int i = 1; i < L; ++i) {
            hits += out.absorbed[i];
            ++n;
            if (out.absorbed[i]) CHECK(out.z.row(i) == table.absorbing().row(0));
        }
    }
    CHECK(z_score(double(hits) / n, p, std::sqrt(p * (1 - p)), n) < 4.0);

    auto none = apply_absorbing(s, 0.0, table, sched, rng);
    CHECK(none.z == s.z);
    CHECK_THROWS(apply_absorbing(s, 1.5, table, sched, rng));
}

TEST_CASE("loss terms against a hand computation") {
    // Zero-parameter denoiser outputs zero, so mse = mean ||z0||^2 over targets.
    const auto vocab = testing::small_vocab(4);
    Rng init(5);
    EmbeddingTable table(vocab.size(), 3, init, 1.0);
    Denoiser net(testing::tiny_denoiser(3));
    auto sched = build_sqrt_schedule(10);
    PackedBatch batch{one_target_row(2, 5)};
    LossConfig cfg;
    cfg.fixed_t = 4;
    cfg.gamma = 0.0;
    const Rng rng(77);
    auto rep = training_loss(net, table, sched, batch, cfg, rng);

    Rng replay = rng.split(0);
    auto z0 = sample_z0(table, batch[0], sched, replay, true);
    double sq = 0.0;
    for (int i = 2; i < 5; ++i) sq += z0.z.row(i).squaredNorm();
    CHECK(rep.mse_term == doctest::Approx(sq / 3).epsilon(1e-12));
    CHECK(rep.anchor_term == 0.0);
    CHECK(rep.z0_norm_term == doctest::Approx(sched.alpha_bar(10) * sq / 3).epsilon(1e-12));

    const Mat logits = rounding_logits(table, z0.z);
    double ce = 0.0;
    for (int i = 0; i < 5; ++i) {
        const double lse = std::log(logits.row(i).array().exp().sum());
        ce += lse - logits(i, batch[0].ids[i]);
    }
    CHECK(rep.rounding_term == doctest::Approx(ce / 5).epsilon(1e-10));
    CHECK(rep.total == doctest::Approx(rep.mse_term + rep.rounding_term + rep.z0_norm_term));
}

TEST_CASE("anchor term vanishes for an exact prediction") {
    const auto vocab = testing::small_vocab(4);
    EmbeddingTable table(vocab.size(), 3);  // all rows zero
    Denoiser net(testing::tiny_denoiser(3));
    auto sched = build_sqrt_schedule(10);
    LossConfig cfg;
    cfg.fixed_t = 1;
    auto rep = training_loss(net, table, sched, {one_target_row(2, 5)}, cfg, Rng(1));
    CHECK(rep.anchor_term == 0.0);
    CHECK(rep.mse_term == 0.0);
}

TEST_CASE("timesteps are uniform on 1..T") {
    const auto vocab = testing::small_vocab(4);
    Rng init(6);
    EmbeddingTable table(vocab.size(), 3, init);
    Denoiser net(testing::tiny_denoiser(3), init);
    auto sched = build_sqrt_schedule(8);
    PackedBatch batch(400, one_target_row(2, 5));
    std::vector<int> counts(9, 0);
    for (int r = 0; r < 20; ++r) {
        auto rep = training_loss(net, table, sched, batch, {}, Rng(100 + r));
        for (int t : rep.t_sampled) ++counts.at(t);
    }
    CHECK(counts[0] == 0);
    double chi2 = 0.0;
    const double expected = 8000.0 / 8;
    for (int t = 1; t <= 8; ++t) chi2 += (counts[t] - expected) * (counts[t] - expected) / expected;
    CHECK(chi2 < 24.3);  // 7 dof, p = 0.001
}

TEST_CASE("loss is deterministic per rng") {
    const auto vocab = testing::small_vocab(4);
    Rng init(8);
    EmbeddingTable table(vocab.size(), 3, init);
    Denoiser net(testing::tiny_denoiser(3), init);
    auto sched = build_sqrt_schedule(50);
    PackedBatch batch{one_target_row(3, 6), one_target_row(1, 6)};
    auto a = training_loss(net, table, sched, batch, {}, Rng(3));
    auto b = training_loss(net, table, sched, batch, {}, Rng(3));
    CHECK(a.total == b.total);
    CHECK(a.t_sampled == b.t_sampled);
    CHECK_THROWS(training_loss(net, table, sched, {}, {}, Rng(3)));
}

TEST_CASE("full loss gradients match central differences") {
    const auto res = testing::full_loss_grad_check();
    INFO("worst " << res.worst_index << " analytic " << res.worst_analytic << " numeric " << res.worst_numeric);
    CHECK(res.max_rel_error <= 1e-3);
    CHECK(res.checked > 0);
}

TEST_CASE("absorbing vector receives gradient") {
    const auto vocab = testing::small_vocab(4);
    Rng init(12);
    EmbeddingTable table(vocab.size(), 3, init, 0.5);
    Denoiser net(testing::tiny_denoiser(3), init);
    auto sched = build_sqrt_schedule(8);
    LossConfig cfg;
    cfg.gamma = 1.0;
    cfg.fixed_t = 8;
    table.params().zero_grad();
    auto rep = training_loss(net, table, sched, {one_target_row(3, 6)}, cfg, Rng(2), true);
    CHECK(rep.absorbed > 0);
    CHECK(table.absorbing_grad().norm() > 0.0);

    cfg.gamma = 0.0;
    table.params().zero_grad();
    rep = training_loss(net, table, sched, {one_target_row(3, 6)}, cfg, Rng(2), true);
    CHECK(rep.absorbed == 0);
    CHECK(table.absorbing_grad().norm() == 0.0);
}
