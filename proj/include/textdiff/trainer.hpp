#pragma once

#include "textdiff/corpus.hpp"
#include "textdiff/denoiser.hpp"
#include "textdiff/diffusion.hpp"
#include "textdiff/latent.hpp"
#include "textdiff/schedule.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace textdiff {

struct TrainConfig {
    int steps = 2000;
    int batch_size = 32;
    double learning_rate = 1e-3;
    int warmup_steps = 100;
    std::uint64_t seed = 0;
    double gamma = 0.5;
    int eval_every = 0;        // 0 disables periodic evaluation
    int checkpoint_every = 0;  // 0 writes only the final checkpoint
    std::string checkpoint_path;
    double grad_clip = 1.0;  // global norm; <= 0 disables
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double w_denoise = 1.0;
    double w_rounding = 1.0;
    double w_norm = 1.0;
    MaskRate mask_rate = MaskRate::per_step;
    bool pad_as_target = true;

    void validate() const;
    LossConfig loss() const;
};

struct ScheduleParams {
    int T = 200;
    double s = 1e-4;
    double beta_clip_max = 0.999;
    NoiseSchedule build() const { return build_sqrt_schedule(T, s, beta_clip_max); }
};

// Everything needed to sample: vocabulary, schedule, embeddings and network.
struct Model {
    Vocab vocab;
    ScheduleParams schedule_params;
    NoiseSchedule schedule;
    EmbeddingTable table;
    Denoiser denoiser;
    int seq_len;  // L of packed rows

    Model(Vocab vocab, const ScheduleParams& sp, const DenoiserConfig& dc, int seq_len, Rng& rng);
    Model(Vocab vocab, const ScheduleParams& sp, const DenoiserConfig& dc, int seq_len);  // zero parameters

    std::vector<Parameters*> parameter_sets() { return {&table.params(), &denoiser.params()}; }
};

struct LogRecord {
    int step = 0;
    double mse = 0.0;
    double anchor = 0.0;
    double rounding = 0.0;
    double z0_norm = 0.0;
    double total = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
    double wall_seconds = 0.0;
    std::optional<double> eval_bleu;
    std::string to_json() const;
};

class Adam {
public:
    Adam() = default;
    Adam(std::size_t n, double beta1, double beta2, double eps);
    // One update of `values` from `grads` at learning rate lr.
    void step(std::span<double> values, std::span<const double> grads, double lr);
    std::int64_t steps_taken() const { return t_; }

    std::vector<double> m, v;

private:
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::int64_t t_ = 0;
    friend struct Checkpoint;
};

// Model plus optimizer state, step counter and metric history.
struct TrainingState {
    Model model;
    TrainConfig config;
    Adam optimizer;
    int step = 0;
    std::vector<LogRecord> history;
};

TrainingState init_training(Vocab vocab, const ScheduleParams& sp, const DenoiserConfig& dc, int seq_len,
                            const TrainConfig& config);

using LogSink = std::function<void(const LogRecord&)>;
using Evaluator = std::function<double(const Model&)>;

// Runs optimization steps until state.step == state.config.steps. Batch rows
// and noise for step k depend only on (seed, k), so a resumed run follows the
// same trajectory. Throws on a non-finite loss, naming the step.
void train(TrainingState& state, const std::vector<PairedExample>& dataset, const LogSink& sink = {},
           const Evaluator& evaluator = {});

// Single optimizer update on a packed batch; returns the loss report.
LossReport train_step(TrainingState& state, const PackedBatch& batch, const Rng& rng, double* grad_norm = nullptr);

double learning_rate_at(const TrainConfig& config, int step);

// Self-describing container: magic, manifest length, JSON manifest (configs,
// vocab, schedule, history, block shapes), then the float64 payload.
struct Checkpoint {
    static void save(const TrainingState& state, const std::filesystem::path& path);
    static TrainingState load(const std::filesystem::path& path);
};
void save_checkpoint(const TrainingState& state, const std::filesystem::path& path);
TrainingState load_checkpoint(const std::filesystem::path& path);

}  // namespace textdiff
