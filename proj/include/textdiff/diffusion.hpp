#pragma once

#include "textdiff/corpus.hpp"
#include "textdiff/denoiser.hpp"
#include "textdiff/latent.hpp"
#include "textdiff/rng.hpp"
#include "textdiff/schedule.hpp"

#include <optional>
#include <vector>

namespace textdiff {

// Per-step replacement probability for the soft absorbing state.
enum class MaskRate {
    per_step,    // beta_t * gamma
    cumulative,  // (1 - alpha_bar_t) * gamma
};

double mask_probability(const NoiseSchedule& sched, int t, double gamma, MaskRate rate = MaskRate::per_step);

// One corrupted sequence z_t = x_t (+) y_t.
struct LatentState {
    Mat z;                // L x d
    SequenceMasks masks;  // condition + valid
    Mask absorbed;        // positions currently holding m
    int t = 0;

    std::size_t length() const { return masks.size(); }
};

// z_0 = Emb(ids) plus sqrt(1 - alpha_bar_0) Gaussian noise on target
// positions; condition and invalid positions hold their embeddings exactly.
LatentState sample_z0(const EmbeddingTable& table, const PackedRow& row, const NoiseSchedule& sched, Rng& rng,
                      bool pad_as_target = true);

// Target positions become alpha_hat_t z_0 + sigma_t eps; all others unchanged.
LatentState forward_marginal(const LatentState& z0, int t, const NoiseSchedule& sched, Rng& rng);
LatentState forward_marginal(const LatentState& z0, int t, const NoiseSchedule& sched, const Mat& eps);

// Each target position is replaced by m with probability mask_probability().
LatentState apply_absorbing(const LatentState& state, double gamma, const EmbeddingTable& table,
                            const NoiseSchedule& sched, Rng& rng, MaskRate rate = MaskRate::per_step);

struct LossConfig {
    double gamma = 0.5;
    double w_denoise = 1.0;  // weight of the mse / anchor term
    double w_rounding = 1.0;
    double w_norm = 1.0;
    MaskRate mask_rate = MaskRate::per_step;
    bool pad_as_target = true;
    std::optional<int> fixed_t;  // draw t uniformly on {1..T} when empty
};

struct LossReport {
    double mse_term = 0.0;
    double anchor_term = 0.0;
    double rounding_term = 0.0;
    double z0_norm_term = 0.0;
    double total = 0.0;
    std::vector<int> t_sampled;
    int absorbed = 0;
};

// Joint denoising objective on a batch: denoising error of the clean target
// latent (anchored to the embeddings at t = 1), rounding cross-entropy on z_0,
// and the alpha_hat_T-scaled norm of z_0. Row b draws from rng.split(b).
// With accumulate_grads, gradients of `total` are added to the denoiser and
// embedding-table parameter gradients. Throws on a non-finite loss.
LossReport training_loss(Denoiser& denoiser, EmbeddingTable& table, const NoiseSchedule& sched,
                         const PackedBatch& batch, const LossConfig& config, const Rng& rng,
                         bool accumulate_grads = false);

}  // namespace textdiff
