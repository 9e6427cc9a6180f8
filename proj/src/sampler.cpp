#include "textdiff/sampler.hpp"

#include "textdiff/metrics.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

namespace textdiff {

SamplerMode parse_sampler_mode(std::string_view name) {
    if (name == "ancestral") return SamplerMode::ancestral;
    if (name == "respaced") return SamplerMode::respaced;
    if (name == "dpm2m") return SamplerMode::dpm2m;
    throw std::invalid_argument("unknown sampler mode '" + std::string(name) + "'");
}

std::string_view to_string(SamplerMode mode) {
    switch (mode) {
        case SamplerMode::ancestral: return "ancestral";
        case SamplerMode::respaced: return "respaced";
        case SamplerMode::dpm2m: return "dpm2m";
    }
    return "?";
}

void SamplerConfig::validate(const NoiseSchedule& sched) const {
    if (steps < 1 || steps > sched.steps())
        throw std::invalid_argument("sampler: steps must lie in [1, T=" + std::to_string(sched.steps()) + "]");
    if (mbr_candidates < 1) throw std::invalid_argument("sampler: mbr_candidates must be >= 1");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("sampler: gamma must lie in [0, 1]");
}

int SamplerConfig::function_evaluations(const NoiseSchedule& sched) const {
    return mode == SamplerMode::ancestral ? sched.steps() : steps;
}

SolverNode node_at(const NoiseSchedule& sched, int t) {
    return {static_cast<double>(t), sched.alpha_hat(t), sched.sigma(t), sched.lambda(t)};
}

Predictor make_predictor(const Denoiser& denoiser) {
    return [&denoiser](const Mat& z, const SolverNode& at, const SequenceMasks& masks) {
        return denoiser.forward(z, at.t, masks);
    };
}

void SampleTrace::write_csv(std::ostream& os) const {
    os << "step,t,lambda,absorbed\n";
    os.precision(17);
    for (std::size_t i = 0; i < steps.size(); ++i)
        os << i << ',' << steps[i].t << ',' << steps[i].lambda << ',' << steps[i].absorbed << '\n';
}

LatentState init_latent(const EmbeddingTable& table, std::span<const TokenId> src_ids, int L, Rng& rng) {
    const PackedRow row = pack_source(std::vector<TokenId>(src_ids.begin(), src_ids.end()), L);
    LatentState s;
    s.masks = diffusion_masks(row, /*pad_as_target=*/true);
    s.z = embed(table, row.ids);
    s.absorbed.assign(row.ids.size(), 0);
    for (Eigen::Index i = 0; i < s.z.rows(); ++i) {
        if (!s.masks.is_target(i)) continue;
        for (Eigen::Index k = 0; k < s.z.cols(); ++k) s.z(i, k) = rng.normal();
    }
    return s;
}

StepFlags step_flags(const SamplerConfig& c) {
    return {c.use_clamp, c.inject_mask, c.gamma, c.mask_rate, c.rounding};
}

namespace {

Mat target_clamp(const EmbeddingTable& table, const Mat& x0, const SequenceMasks& masks, RoundingMetric metric,
                 SampleTrace* trace) {
    Mask target(masks.size());
    for (std::size_t i = 0; i < masks.size(); ++i) target[i] = masks.is_target(i);
    if (trace) ++trace->clamp_calls;
    return clamp_latent(table, x0, target, metric);
}

void record(SampleTrace* trace, const LatentState& s, double t, double lambda) {
    if (!trace) return;
    int absorbed = 0;
    for (auto a : s.absorbed) absorbed += a != 0;
    trace->steps.push_back({t, lambda, absorbed, trace->keep_snapshots ? std::optional<Mat>(s.z) : std::nullopt});
}

void clear_absorbed(LatentState& s) { std::fill(s.absorbed.begin(), s.absorbed.end(), 0); }

}  // namespace

LatentState ancestral_step(const Predictor& predictor, const EmbeddingTable& table, const NoiseSchedule& sched,
                           const LatentState& state, int t_next, const StepFlags& flags, Rng& rng,
                           SampleTrace* trace, Mat* x0_out) {
    const int t = state.t;
    if (t < 1) throw std::invalid_argument("ancestral_step: state is already at t=0");
    const auto coeffs = sched.posterior_between(t, t_next);
    const SolverNode at = node_at(sched, t);

    Mat x0 = predictor(state.z, at, state.masks);
    if (trace) ++trace->nfe;
    if (flags.use_clamp) x0 = target_clamp(table, x0, state.masks, flags.rounding, trace);

    LatentState next = state;
    next.t = t_next;
    clear_absorbed(next);
    const double noise_std = t_next > 0 ? std::sqrt(coeffs.var) : 0.0;
    for (Eigen::Index i = 0; i < next.z.rows(); ++i) {
        if (!next.masks.is_target(i)) continue;
        next.z.row(i) = coeffs.c_zt * state.z.row(i) + coeffs.c_z0 * x0.row(i);
        if (noise_std > 0.0)
            for (Eigen::Index k = 0; k < next.z.cols(); ++k) next.z(i, k) += noise_std * rng.normal();
    }
    if (flags.inject_mask && t_next >= 1)
        next = apply_absorbing(next, flags.gamma, table, sched, rng, flags.mask_rate);
    record(trace, next, t_next, sched.lambda(t_next));
    if (x0_out) *x0_out = std::move(x0);
    return next;
}

Mat ancestral_sample(const Predictor& predictor, const EmbeddingTable& table, const NoiseSchedule& sched,
                     LatentState& state, const TimestepGrid& grid, const StepFlags& flags, Rng& rng,
                     SampleTrace* trace) {
    if (grid.steps.size() < 2) throw std::invalid_argument("ancestral_sample: grid needs at least 2 points");
    if (grid.steps.front() != state.t) throw std::invalid_argument("ancestral_sample: grid must start at state.t");
    Mat x0;
    for (std::size_t k = 1; k < grid.steps.size(); ++k)
        state = ancestral_step(predictor, table, sched, state, grid.steps[k], flags, rng, trace, &x0);
    return x0;
}

Mat dpm_solver_2m(const Predictor& predictor, LatentState& state, std::span<const SolverNode> nodes,
                  SolverVariant variant, const std::function<Mat(const Mat&)>& clamp, const StepHook& after_step,
                  SampleTrace* trace) {
    if (nodes.size() < 2) throw std::invalid_argument("dpm_solver_2m: need at least 2 nodes");
    Mat x_prev, x_s;
    double h_prev = 0.0;
    for (std::size_t i = 1; i < nodes.size(); ++i) {
        const SolverNode& s = nodes[i - 1];
        const SolverNode& t = nodes[i];
        const double h = t.lambda - s.lambda;
        if (!(h > 0.0)) throw std::invalid_argument("dpm_solver_2m: lambda must strictly increase along the nodes");

        x_s = predictor(state.z, s, state.masks);
        if (trace) ++trace->nfe;
        if (clamp) x_s = clamp(x_s);

        // The first step had no slope; now that one exists, add its missing
        // second-order term to z_s (rows replaced by m meanwhile are skipped).
        if (i == 2 && variant == SolverVariant::phi) {
            const double c = s.alpha * (h_prev + std::expm1(-h_prev)) / h_prev;
            for (Eigen::Index k = 0; k < state.z.rows(); ++k)
                if (state.masks.is_target(k) && (state.absorbed.empty() || !state.absorbed[k]))
                    state.z.row(k) += c * (x_s.row(k) - x_prev.row(k));
        }

        const double ratio = t.sigma / s.sigma;
        const double w0 = -t.alpha * std::expm1(-h);  // alpha_t (1 - e^{-h})
        Mat update;
        if (i == 1) {
            update = w0 * x_s;
        } else if (variant == SolverVariant::phi) {
            const double w1 = t.alpha * (h + std::expm1(-h)) / h_prev;  // alpha_t (h - 1 + e^{-h}) / h_prev
            update = w0 * x_s + w1 * (x_s - x_prev);
        } else {
            const double r = h_prev / h;
            update = w0 * ((1.0 + 0.5 / r) * x_s - (0.5 / r) * x_prev);
        }
        for (Eigen::Index k = 0; k < state.z.rows(); ++k)
            if (state.masks.is_target(k)) state.z.row(k) = ratio * state.z.row(k) + update.row(k);
        state.t = static_cast<int>(std::lround(t.t));
        clear_absorbed(state);
        if (after_step) after_step(state, t);
        record(trace, state, t.t, t.lambda);
        x_prev = x_s;
        h_prev = h;
    }
    return x_s;
}

Mat dpm_pp_2m_sample(const Predictor& predictor, const EmbeddingTable& table, const NoiseSchedule& sched,
                     LatentState& state, const TimestepGrid& grid, const StepFlags& flags, Rng& rng,
                     SolverVariant variant, SampleTrace* trace) {
    if (grid.steps.size() < 2) throw std::invalid_argument("dpm_pp_2m_sample: grid needs at least 2 points");
    if (grid.steps.front() != state.t) throw std::invalid_argument("dpm_pp_2m_sample: grid must start at state.t");
    std::vector<SolverNode> nodes;
    nodes.reserve(grid.steps.size());
    for (int t : grid.steps) nodes.push_back(node_at(sched, t));

    std::function<Mat(const Mat&)> clamp;
    if (flags.use_clamp) {
        clamp = [&](const Mat& x0) { return target_clamp(table, x0, state.masks, flags.rounding, trace); };
    }
    StepHook hook = [&](LatentState& s, const SolverNode& at) {
        const int t = static_cast<int>(std::lround(at.t));
        if (flags.inject_mask && t >= 1) s = apply_absorbing(s, flags.gamma, table, sched, rng, flags.mask_rate);
    };
    return dpm_solver_2m(predictor, state, nodes, variant, clamp, hook, trace);
}

std::vector<TokenId> decode_target(const EmbeddingTable& table, const Mat& x0_hat, const SequenceMasks& masks,
                                   RoundingMetric metric) {
    const auto ids = round_to_tokens(table, x0_hat, metric);
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!masks.is_target(i)) continue;
        if (ids[i] == Vocab::kPad || ids[i] == Vocab::kSep) break;
        out.push_back(ids[i]);
    }
    return out;
}

Generation generate(const Predictor& predictor, const EmbeddingTable& table, const NoiseSchedule& sched,
                    const Vocab& vocab, std::span<const TokenId> src_ids, int L, const SamplerConfig& config,
                    const Rng& rng) {
    config.validate(sched);
    const StepFlags flags = step_flags(config);
    const TimestepGrid grid = config.mode == SamplerMode::ancestral ? respace(sched, sched.steps(), Spacing::even)
                                                                    : respace(sched, config.steps, config.spacing);
    Generation gen;
    for (int c = 0; c < config.mbr_candidates; ++c) {
        Rng cand_rng = rng.split(static_cast<std::uint64_t>(c));
        SampleTrace trace;
        trace.keep_snapshots = config.keep_snapshots;
        LatentState state = init_latent(table, src_ids, L, cand_rng);
        state.t = sched.steps();
        if (flags.inject_mask) state = apply_absorbing(state, flags.gamma, table, sched, cand_rng, flags.mask_rate);
        record(&trace, state, state.t, sched.lambda(state.t));

        const Mat x0 = config.mode == SamplerMode::dpm2m
                           ? dpm_pp_2m_sample(predictor, table, sched, state, grid, flags, cand_rng, config.solver, &trace)
                           : ancestral_sample(predictor, table, sched, state, grid, flags, cand_rng, &trace);
        auto ids = decode_target(table, x0, state.masks, config.rounding);
        gen.candidates.push_back(vocab.decode(ids));
        gen.candidate_ids.push_back(std::move(ids));
        gen.nfe += trace.nfe;
        if (c == 0) gen.trace = std::move(trace);
    }
    gen.selected_index = mbr_select_index(gen.candidates);
    gen.selected = gen.candidates[gen.selected_index];
    return gen;
}

std::size_t mbr_select_index(const std::vector<std::string>& candidates) {
    if (candidates.empty()) throw std::invalid_argument("mbr_select: no candidates");
    if (candidates.size() == 1) return 0;
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < candidates.size(); ++j)
            if (j != i) sum += consensus_bleu(candidates[i], candidates[j]);
        const double score = sum / static_cast<double>(candidates.size() - 1);
        if (score > best_score) {
            best_score = score;
            best = i;
        }
    }
    return best;
}

std::string mbr_select(const std::vector<std::string>& candidates) { return candidates[mbr_select_index(candidates)]; }

}  // namespace textdiff
