#include "textdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace textdiff {

double mask_probability(const NoiseSchedule& sched, int t, double gamma, MaskRate rate) {
    const double level = rate == MaskRate::per_step ? sched.beta(t) : 1.0 - sched.alpha_bar(t);
    return std::min(level * gamma, 1.0);
}

LatentState sample_z0(const EmbeddingTable& table, const PackedRow& row, const NoiseSchedule& sched, Rng& rng,
                      bool pad_as_target) {
    LatentState s;
    s.masks = diffusion_masks(row, pad_as_target);
    s.z = embed(table, row.ids);
    s.absorbed.assign(row.ids.size(), 0);
    s.t = 0;
    const double std0 = sched.sigma(0);
    for (Eigen::Index i = 0; i < s.z.rows(); ++i) {
        if (!s.masks.is_target(i)) continue;
        for (Eigen::Index k = 0; k < s.z.cols(); ++k) s.z(i, k) += std0 * rng.normal();
    }
    return s;
}

LatentState forward_marginal(const LatentState& z0, int t, const NoiseSchedule& sched, const Mat& eps) {
    if (t < 1 || t > sched.steps()) throw std::out_of_range("forward_marginal: t must lie in [1, T]");
    if (eps.rows() != z0.z.rows() || eps.cols() != z0.z.cols())
        throw std::invalid_argument("forward_marginal: noise shape mismatch");
    LatentState s = z0;
    s.t = t;
    const double a = sched.alpha_hat(t), sg = sched.sigma(t);
    for (Eigen::Index i = 0; i < s.z.rows(); ++i)
        if (s.masks.is_target(i)) s.z.row(i) = a * z0.z.row(i) + sg * eps.row(i);
    return s;
}

LatentState forward_marginal(const LatentState& z0, int t, const NoiseSchedule& sched, Rng& rng) {
    Mat eps(z0.z.rows(), z0.z.cols());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
    return forward_marginal(z0, t, sched, eps);
}

LatentState apply_absorbing(const LatentState& state, double gamma, const EmbeddingTable& table,
                            const NoiseSchedule& sched, Rng& rng, MaskRate rate) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("apply_absorbing: gamma must lie in [0, 1]");
    LatentState s = state;
    if (s.absorbed.size() != s.length()) s.absorbed.assign(s.length(), 0);
    const double p = mask_probability(sched, state.t, gamma, rate);
    const auto m = table.absorbing();
    for (std::size_t i = 0; i < s.length(); ++i) {
        if (!s.masks.is_target(i)) continue;
        // one draw per target position keeps the stream layout independent of p
        if (rng.uniform() < p) {
            s.z.row(static_cast<Eigen::Index>(i)) = m.row(0);
            s.absorbed[i] = 1;
        }
    }
    return s;
}

LossReport training_loss(Denoiser& denoiser, EmbeddingTable& table, const NoiseSchedule& sched,
                         const PackedBatch& batch, const LossConfig& cfg, const Rng& rng, bool accumulate_grads) {
    if (batch.empty()) throw std::invalid_argument("training_loss: empty batch");
    const int T = sched.steps();
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const double a_T2 = sched.alpha_bar(T);
    const auto E = table.rows();
    const int K = table.vocab_size();

    LossReport rep;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const PackedRow& row = batch[b];
        Rng row_rng = rng.split(b);
        const int t = cfg.fixed_t ? *cfg.fixed_t : static_cast<int>(row_rng.integer(1, T));
        if (t < 1 || t > T) throw std::out_of_range("training_loss: t outside [1, T]");
        rep.t_sampled.push_back(t);

        const LatentState z0 = sample_z0(table, row, sched, row_rng, cfg.pad_as_target);
        const LatentState zt = forward_marginal(z0, t, sched, row_rng);
        const LatentState z_hat = apply_absorbing(zt, cfg.gamma, table, sched, row_rng, cfg.mask_rate);
        const auto& masks = z0.masks;
        const Eigen::Index L = z0.z.rows();

        Denoiser::Cache cache;
        const Mat pred = denoiser.forward(z_hat.z, t, masks, accumulate_grads ? &cache : nullptr);

        int n_trg = 0, n_valid = 0;
        for (Eigen::Index i = 0; i < L; ++i) {
            n_trg += masks.is_target(i);
            n_valid += masks.valid[i] != 0;
            rep.absorbed += z_hat.absorbed[i] != 0;
        }
        if (n_trg == 0) throw std::invalid_argument("training_loss: row without target positions");

        // denoising term against y_0, or against Emb(w^y) at t = 1
        Mat d_pred = Mat::Zero(L, pred.cols());
        double denoise = 0.0;
        for (Eigen::Index i = 0; i < L; ++i) {
            if (!masks.is_target(i)) continue;
            const RowVec diff = t >= 2 ? RowVec(pred.row(i) - z0.z.row(i)) : RowVec(pred.row(i) - E.row(row.ids[i]));
            denoise += diff.squaredNorm();
            d_pred.row(i) = (cfg.w_denoise * inv_b * 2.0 / n_trg) * diff;
        }
        denoise /= n_trg;
        (t >= 2 ? rep.mse_term : rep.anchor_term) += denoise * inv_b;

        // rounding cross-entropy over valid positions
        const Mat logits = rounding_logits(table, z0.z);
        double ce = 0.0;
        Mat probs(L, K);
        for (Eigen::Index i = 0; i < L; ++i) {
            if (!masks.valid[i]) continue;
            const double mx = logits.row(i).maxCoeff();
            const RowVec ex = (logits.row(i).array() - mx).exp().matrix();
            const double sum = ex.sum();
            probs.row(i) = ex / sum;
            ce += -(logits(i, row.ids[i]) - mx - std::log(sum));
        }
        ce /= n_valid;
        rep.rounding_term += ce * inv_b;

        double norm = 0.0;
        for (Eigen::Index i = 0; i < L; ++i)
            if (masks.is_target(i)) norm += a_T2 * z0.z.row(i).squaredNorm();
        norm /= n_trg;
        rep.z0_norm_term += norm * inv_b;

        if (!accumulate_grads) continue;

        const Mat d_zhat = denoiser.backward(cache, d_pred);
        auto dE = table.rows_grad();
        auto dm = table.absorbing_grad();
        Mat dz0 = Mat::Zero(L, z0.z.cols());
        const double a_t = sched.alpha_hat(t);
        for (Eigen::Index i = 0; i < L; ++i) {
            if (z_hat.absorbed[i]) {
                dm.row(0) += d_zhat.row(i);
            } else if (masks.is_target(i)) {
                dz0.row(i) += a_t * d_zhat.row(i);
            } else {
                dz0.row(i) += d_zhat.row(i);
            }
            if (!masks.is_target(i)) continue;
            if (t >= 2) {
                dz0.row(i) -= d_pred.row(i);
            } else {
                dE.row(row.ids[i]) -= d_pred.row(i);
            }
            dz0.row(i) += (cfg.w_norm * inv_b * 2.0 * a_T2 / n_trg) * z0.z.row(i);
        }
        const double ce_scale = cfg.w_rounding * inv_b / n_valid;
        for (Eigen::Index i = 0; i < L; ++i) {
            if (!masks.valid[i]) continue;
            for (int k = 0; k < K; ++k) {
                const double g = ce_scale * (probs(i, k) - (k == row.ids[i] ? 1.0 : 0.0));
                const RowVec diff = z0.z.row(i) - E.row(k);
                dz0.row(i) -= 2.0 * g * diff;
                dE.row(k) += 2.0 * g * diff;
            }
        }
        for (Eigen::Index i = 0; i < L; ++i) dE.row(row.ids[i]) += dz0.row(i);
    }

    rep.total = cfg.w_denoise * (rep.mse_term + rep.anchor_term) + cfg.w_rounding * rep.rounding_term +
                cfg.w_norm * rep.z0_norm_term;
    if (!std::isfinite(rep.total)) throw std::runtime_error("training_loss: non-finite loss");
    return rep;
}

}  // namespace textdiff
