#pragma once

#include "textdiff/corpus.hpp"
#include "textdiff/denoiser.hpp"
#include "textdiff/diffusion.hpp"
#include "textdiff/latent.hpp"
#include "textdiff/schedule.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace textdiff {

enum class SamplerMode { ancestral, respaced, dpm2m };
SamplerMode parse_sampler_mode(std::string_view name);
std::string_view to_string(SamplerMode mode);

// phi: exponential-integrator weight exact for x0 affine in lambda.
// midpoint: D = (1 + 1/2r) x_s - (1/2r) x_prev.
enum class SolverVariant { phi, midpoint };

struct SamplerConfig {
    SamplerMode mode = SamplerMode::dpm2m;
    int steps = 10;  // ignored by ancestral, which always walks every level
    bool use_clamp = false;
    bool inject_mask = true;
    double gamma = 0.5;
    int mbr_candidates = 1;
    std::uint64_t seed = 0;
    MaskRate mask_rate = MaskRate::per_step;
    Spacing spacing = Spacing::even;
    SolverVariant solver = SolverVariant::phi;
    RoundingMetric rounding = RoundingMetric::l2;
    bool keep_snapshots = false;

    void validate(const NoiseSchedule& sched) const;
    int function_evaluations(const NoiseSchedule& sched) const;
};

// Noise level at which the network is evaluated.
struct SolverNode {
    double t;
    double alpha;   // alpha_hat
    double sigma;
    double lambda;  // ln(alpha / sigma)
};
SolverNode node_at(const NoiseSchedule& sched, int t);

// Clean-latent predictor f(z_hat, level) -> x0_hat.
using Predictor = std::function<Mat(const Mat& z_hat, const SolverNode& at, const SequenceMasks& masks)>;
Predictor make_predictor(const Denoiser& denoiser);

struct TraceStep {
    double t;
    double lambda;
    int absorbed;
    std::optional<Mat> snapshot;
};

// Initial state followed by one entry per sampler step.
struct SampleTrace {
    std::vector<TraceStep> steps;
    bool keep_snapshots = false;
    int nfe = 0;
    int clamp_calls = 0;

    void write_csv(std::ostream& os) const;
};

// Condition positions hold embed(src) and [SEP]; every later position is a
// target drawn from N(0, I).
LatentState init_latent(const EmbeddingTable& table, std::span<const TokenId> src_ids, int L, Rng& rng);

struct StepFlags {
    bool use_clamp = false;
    bool inject_mask = true;
    double gamma = 0.5;
    MaskRate mask_rate = MaskRate::per_step;
    RoundingMetric rounding = RoundingMetric::l2;
};
StepFlags step_flags(const SamplerConfig& config);

// One posterior step from state.t down to t_next (t_next = state.t - 1 for
// plain ancestral sampling). Returns the new state; writes x0_hat if asked.
LatentState ancestral_step(const Predictor& predictor, const EmbeddingTable& table, const NoiseSchedule& sched,
                           const LatentState& state, int t_next, const StepFlags& flags, Rng& rng,
                           SampleTrace* trace = nullptr, Mat* x0_out = nullptr);

// Runs posterior steps over grid (first element must equal state.t).
// Returns the last x0_hat.
Mat ancestral_sample(const Predictor& predictor, const EmbeddingTable& table, const NoiseSchedule& sched,
                     LatentState& state, const TimestepGrid& grid, const StepFlags& flags, Rng& rng,
                     SampleTrace* trace = nullptr);

// Second-order multistep solver of the diffusion ODE in data-prediction form
// over an arbitrary decreasing-noise node list. The phi variant folds the
// missing second-order term of the first step into the second one, so it is
// exact for x0 affine in lambda on any grid of two or more steps.
// `after_step` runs after each update (the grid sampler uses it for absorbing
// re-injection). Updates touch target positions only. Returns the last x0_hat.
using StepHook = std::function<void(LatentState&, const SolverNode&)>;
Mat dpm_solver_2m(const Predictor& predictor, LatentState& state, std::span<const SolverNode> nodes,
                  SolverVariant variant, const std::function<Mat(const Mat&)>& clamp, const StepHook& after_step,
                  SampleTrace* trace = nullptr);

Mat dpm_pp_2m_sample(const Predictor& predictor, const EmbeddingTable& table, const NoiseSchedule& sched,
                     LatentState& state, const TimestepGrid& grid, const StepFlags& flags, Rng& rng,
                     SolverVariant variant = SolverVariant::phi, SampleTrace* trace = nullptr);

struct Generation {
    std::vector<std::vector<TokenId>> candidate_ids;
    std::vector<std::string> candidates;
    std::size_t selected_index = 0;
    std::string selected;
    SampleTrace trace;  // of the first candidate
    int nfe = 0;        // summed over candidates
};

Generation generate(const Predictor& predictor, const EmbeddingTable& table, const NoiseSchedule& sched,
                    const Vocab& vocab, std::span<const TokenId> src_ids, int L, const SamplerConfig& config,
                    const Rng& rng);

// Target tokens of a decoded row: rounding of x0_hat after [SEP], cut at the
// first [PAD] / [SEP].
std::vector<TokenId> decode_target(const EmbeddingTable& table, const Mat& x0_hat, const SequenceMasks& masks,
                                   RoundingMetric metric = RoundingMetric::l2);

// Candidate with the largest mean BLEU against the others (first on ties).
std::size_t mbr_select_index(const std::vector<std::string>& candidates);
std::string mbr_select(const std::vector<std::string>& candidates);

}  // namespace textdiff
