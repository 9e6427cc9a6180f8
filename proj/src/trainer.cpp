#include "textdiff/trainer.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace textdiff {

using nlohmann::json;

void TrainConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");
    if (warmup_steps < 0) throw std::invalid_argument("train: warmup_steps must be >= 0");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("train: gamma must lie in [0, 1]");
    if (eval_every < 0 || checkpoint_every < 0) throw std::invalid_argument("train: intervals must be >= 0");
}

LossConfig TrainConfig::loss() const {
    LossConfig c;
    c.gamma = gamma;
    c.w_denoise = w_denoise;
    c.w_rounding = w_rounding;
    c.w_norm = w_norm;
    c.mask_rate = mask_rate;
    c.pad_as_target = pad_as_target;
    return c;
}

Model::Model(Vocab v, const ScheduleParams& sp, const DenoiserConfig& dc, int L, Rng& rng)
    : vocab(std::move(v)),
      schedule_params(sp),
      schedule(sp.build()),
      table(vocab.size(), dc.latent_dim, rng),
      denoiser(dc, rng),
      seq_len(L) {
    if (L > dc.max_len) throw std::invalid_argument("model: seq_len exceeds denoiser max_len");
}

Model::Model(Vocab v, const ScheduleParams& sp, const DenoiserConfig& dc, int L)
    : vocab(std::move(v)), schedule_params(sp), schedule(sp.build()), table(vocab.size(), dc.latent_dim), denoiser(dc),
      seq_len(L) {
    if (L > dc.max_len) throw std::invalid_argument("model: seq_len exceeds denoiser max_len");
}

std::string LogRecord::to_json() const {
    json j{{"step", step},       {"mse", mse},   {"anchor", anchor},         {"rounding", rounding},
           {"z0_norm", z0_norm}, {"total", total}, {"lr", lr},               {"grad_norm", grad_norm},
           {"wall_seconds", wall_seconds}};
    if (eval_bleu) j["eval_bleu"] = *eval_bleu;
    return j.dump();
}

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : m(n, 0.0), v(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::span<double> values, std::span<const double> grads, double lr) {
    if (values.size() != m.size() || grads.size() != m.size()) throw std::invalid_argument("adam: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < values.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * grads[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * grads[i] * grads[i];
        values[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
}

namespace {

std::size_t total_parameters(Model& model) {
    std::size_t n = 0;
    for (auto* p : model.parameter_sets()) n += p->size();
    return n;
}

}  // namespace

TrainingState init_training(Vocab vocab, const ScheduleParams& sp, const DenoiserConfig& dc, int seq_len,
                            const TrainConfig& config) {
    config.validate();
    Rng rng = Rng(config.seed).split(0xC0FFEE);
    TrainingState state{Model(std::move(vocab), sp, dc, seq_len, rng), config, Adam(), 0, {}};
    state.optimizer = Adam(total_parameters(state.model), config.adam_beta1, config.adam_beta2, config.adam_eps);
    return state;
}

double learning_rate_at(const TrainConfig& config, int step) {
    if (config.warmup_steps <= 0) return config.learning_rate;
    return config.learning_rate * std::min(1.0, static_cast<double>(step + 1) / config.warmup_steps);
}

LossReport train_step(TrainingState& state, const PackedBatch& batch, const Rng& rng, double* grad_norm) {
    Model& model = state.model;
    auto sets = model.parameter_sets();
    for (auto* p : sets) p->zero_grad();
    const LossReport rep = training_loss(model.denoiser, model.table, model.schedule, batch, state.config.loss(), rng,
                                         /*accumulate_grads=*/true);

    // flatten into one view for clipping and the optimizer
    std::vector<double> values, grads;
    values.reserve(state.optimizer.m.size());
    grads.reserve(state.optimizer.m.size());
    for (auto* p : sets) {
        values.insert(values.end(), p->values().begin(), p->values().end());
        grads.insert(grads.end(), p->grads().begin(), p->grads().end());
    }
    double norm = 0.0;
    for (double g : grads) norm += g * g;
    norm = std::sqrt(norm);
    if (!std::isfinite(norm)) throw std::runtime_error("non-finite gradient");
    if (state.config.grad_clip > 0.0 && norm > state.config.grad_clip) {
        const double scale = state.config.grad_clip / norm;
        for (double& g : grads) g *= scale;
    }
    if (grad_norm) *grad_norm = norm;

    const double lr = learning_rate_at(state.config, state.step);
    state.optimizer.step(values, grads, lr);
    std::size_t off = 0;
    for (auto* p : sets) {
        auto dst = p->values();
        std::copy(values.begin() + off, values.begin() + off + dst.size(), dst.begin());
        off += dst.size();
    }
    ++state.step;
    return rep;
}

void train(TrainingState& state, const std::vector<PairedExample>& dataset, const LogSink& sink,
           const Evaluator& evaluator) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    state.config.validate();
    const auto start = std::chrono::steady_clock::now();
    const double wall_offset = state.history.empty() ? 0.0 : state.history.back().wall_seconds;
    const Rng root(state.config.seed);

    while (state.step < state.config.steps) {
        const int step = state.step;
        Rng step_rng = root.split(static_cast<std::uint64_t>(step) + 1);
        PackedBatch batch;
        batch.reserve(state.config.batch_size);
        for (int b = 0; b < state.config.batch_size; ++b) {
            const auto idx = static_cast<std::size_t>(step_rng.integer(0, static_cast<std::int64_t>(dataset.size()) - 1));
            batch.push_back(pack(dataset[idx], state.model.seq_len));
        }
        LogRecord rec;
        rec.step = step;
        rec.lr = learning_rate_at(state.config, step);
        LossReport rep;
        try {
            rep = train_step(state, batch, step_rng.split(0xBA7C), &rec.grad_norm);
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("training diverged at step " + std::to_string(step) + ": " + e.what());
        } catch (const std::domain_error& e) {  // non-finite latents
            throw std::runtime_error("training diverged at step " + std::to_string(step) + ": " + e.what());
        }
        rec.mse = rep.mse_term;
        rec.anchor = rep.anchor_term;
        rec.rounding = rep.rounding_term;
        rec.z0_norm = rep.z0_norm_term;
        rec.total = rep.total;
        rec.wall_seconds =
            wall_offset + std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (evaluator && state.config.eval_every > 0 && state.step % state.config.eval_every == 0)
            rec.eval_bleu = evaluator(state.model);
        state.history.push_back(rec);
        if (sink) sink(rec);
        if (state.config.checkpoint_every > 0 && !state.config.checkpoint_path.empty() &&
            state.step % state.config.checkpoint_every == 0)
            save_checkpoint(state, state.config.checkpoint_path);
    }
    if (!state.config.checkpoint_path.empty()) save_checkpoint(state, state.config.checkpoint_path);
}

// ---------------------------------------------------------------------------
// checkpoint container

namespace {

constexpr char kMagic[8] = {'T', 'D', 'I', 'F', 'F', 'C', 'K', '1'};

json train_config_json(const TrainConfig& c) {
    return {{"steps", c.steps},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"warmup_steps", c.warmup_steps},
            {"seed", c.seed},
            {"gamma", c.gamma},
            {"eval_every", c.eval_every},
            {"checkpoint_every", c.checkpoint_every},
            {"checkpoint_path", c.checkpoint_path},
            {"grad_clip", c.grad_clip},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_eps", c.adam_eps},
            {"w_denoise", c.w_denoise},
            {"w_rounding", c.w_rounding},
            {"w_norm", c.w_norm},
            {"mask_rate", c.mask_rate == MaskRate::per_step ? "per_step" : "cumulative"},
            {"pad_as_target", c.pad_as_target}};
}

TrainConfig train_config_from(const json& j) {
    TrainConfig c;
    c.steps = j.at("steps");
    c.batch_size = j.at("batch_size");
    c.learning_rate = j.at("learning_rate");
    c.warmup_steps = j.at("warmup_steps");
    c.seed = j.at("seed");
    c.gamma = j.at("gamma");
    c.eval_every = j.at("eval_every");
    c.checkpoint_every = j.at("checkpoint_every");
    c.checkpoint_path = j.at("checkpoint_path");
    c.grad_clip = j.at("grad_clip");
    c.adam_beta1 = j.at("adam_beta1");
    c.adam_beta2 = j.at("adam_beta2");
    c.adam_eps = j.at("adam_eps");
    c.w_denoise = j.at("w_denoise");
    c.w_rounding = j.at("w_rounding");
    c.w_norm = j.at("w_norm");
    c.mask_rate = j.at("mask_rate") == "per_step" ? MaskRate::per_step : MaskRate::cumulative;
    c.pad_as_target = j.at("pad_as_target");
    return c;
}

json denoiser_config_json(const DenoiserConfig& c) {
    return {{"latent_dim", c.latent_dim}, {"d_model", c.d_model},   {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},       {"d_ff", c.d_ff},         {"max_len", c.max_len},
            {"time_embed_dim", c.time_embed_dim}};
}

DenoiserConfig denoiser_config_from(const json& j) {
    DenoiserConfig c;
    c.latent_dim = j.at("latent_dim");
    c.d_model = j.at("d_model");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.d_ff = j.at("d_ff");
    c.max_len = j.at("max_len");
    c.time_embed_dim = j.at("time_embed_dim");
    return c;
}

LogRecord log_record_from(const json& j) {
    LogRecord r;
    r.step = j.at("step");
    r.mse = j.at("mse");
    r.anchor = j.at("anchor");
    r.rounding = j.at("rounding");
    r.z0_norm = j.at("z0_norm");
    r.total = j.at("total");
    r.lr = j.at("lr");
    r.grad_norm = j.at("grad_norm");
    r.wall_seconds = j.at("wall_seconds");
    if (j.contains("eval_bleu")) r.eval_bleu = j.at("eval_bleu").get<double>();
    return r;
}

}  // namespace

void Checkpoint::save(const TrainingState& state, const std::filesystem::path& path) {
    const Model& model = state.model;
    json manifest;
    manifest["format"] = "textdiff-checkpoint/1";
    manifest["step"] = state.step;
    manifest["train"] = train_config_json(state.config);
    manifest["denoiser"] = denoiser_config_json(model.denoiser.config());
    manifest["schedule"] = {{"T", model.schedule_params.T},
                            {"s", model.schedule_params.s},
                            {"beta_clip_max", model.schedule_params.beta_clip_max}};
    manifest["seq_len"] = model.seq_len;
    manifest["vocab"] = model.vocab.tokens();
    manifest["adam_t"] = state.optimizer.t_;
    json hist = json::array();
    for (const auto& r : state.history) hist.push_back(json::parse(r.to_json()));
    manifest["history"] = hist;

    std::vector<double> payload;
    json blocks = json::array();
    auto add_set = [&](const std::string& set, const Parameters& p) {
        for (const auto& b : p.blocks()) blocks.push_back({{"set", set}, {"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
        payload.insert(payload.end(), p.values().begin(), p.values().end());
    };
    add_set("table", model.table.params());
    add_set("denoiser", model.denoiser.params());
    blocks.push_back({{"set", "adam"}, {"name", "m"}, {"rows", 1}, {"cols", state.optimizer.m.size()}});
    blocks.push_back({{"set", "adam"}, {"name", "v"}, {"rows", 1}, {"cols", state.optimizer.v.size()}});
    payload.insert(payload.end(), state.optimizer.m.begin(), state.optimizer.m.end());
    payload.insert(payload.end(), state.optimizer.v.begin(), state.optimizer.v.end());
    manifest["blocks"] = blocks;
    manifest["payload_doubles"] = payload.size();

    const std::string text = manifest.dump();
    const std::uint64_t len = text.size();
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
        out.write(kMagic, sizeof kMagic);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.write(reinterpret_cast<const char*>(payload.data()),
                  static_cast<std::streamsize>(payload.size() * sizeof(double)));
        if (!out) throw std::runtime_error("checkpoint write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

TrainingState Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    const std::string where = "checkpoint " + path.string() + ": ";
    char magic[sizeof kMagic];
    std::uint64_t len = 0;
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw std::runtime_error(where + "bad magic");
    if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1ULL << 32))
        throw std::runtime_error(where + "truncated header");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw std::runtime_error(where + "truncated manifest");
    json manifest;
    try {
        manifest = json::parse(text);
    } catch (const json::exception& e) {
        throw std::runtime_error(where + "corrupt manifest: " + e.what());
    }

    try {
        const std::size_t n = manifest.at("payload_doubles");
        std::vector<double> payload(n);
        if (!in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(n * sizeof(double))))
            throw std::runtime_error(where + "payload shorter than declared " + std::to_string(n) + " values");
        if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error(where + "trailing bytes after payload");

        ScheduleParams sp;
        sp.T = manifest.at("schedule").at("T");
        sp.s = manifest.at("schedule").at("s");
        sp.beta_clip_max = manifest.at("schedule").at("beta_clip_max");
        auto tokens = manifest.at("vocab").get<std::vector<std::string>>();
        if (tokens.size() < Vocab::kReserved) throw std::runtime_error(where + "vocab lacks reserved tokens");
        Vocab vocab(std::vector<std::string>(tokens.begin() + Vocab::kReserved, tokens.end()));
        if (vocab.tokens() != tokens) throw std::runtime_error(where + "vocab reserved tokens mismatch");

        TrainingState state{Model(std::move(vocab), sp, denoiser_config_from(manifest.at("denoiser")),
                                  manifest.at("seq_len")),
                            train_config_from(manifest.at("train")), Adam(), manifest.at("step"), {}};
        std::size_t total = 0;
        for (auto* p : state.model.parameter_sets()) total += p->size();
        state.optimizer = Adam(total, state.config.adam_beta1, state.config.adam_beta2, state.config.adam_eps);
        state.optimizer.t_ = manifest.at("adam_t");

        // block list must match the architecture implied by the configs
        const auto& blocks = manifest.at("blocks");
        std::size_t off = 0, bi = 0;
        auto take = [&](const std::string& set, const std::string& name, std::size_t rows, std::size_t cols,
                        std::span<double> dst) {
            if (bi >= blocks.size()) throw std::runtime_error(where + "missing block " + set + "/" + name);
            const auto& b = blocks[bi++];
            if (b.at("set") != set || b.at("name") != name || b.at("rows").get<std::size_t>() != rows ||
                b.at("cols").get<std::size_t>() != cols)
                throw std::runtime_error(where + "block " + set + "/" + name + " shape mismatch");
            if (off + dst.size() > payload.size()) throw std::runtime_error(where + "payload too short");
            std::copy(payload.begin() + off, payload.begin() + off + dst.size(), dst.begin());
            off += dst.size();
        };
        auto take_set = [&](const std::string& set, Parameters& p) {
            for (std::size_t k = 0; k < p.blocks().size(); ++k) {
                const auto& b = p.blocks()[k];
                take(set, b.name, b.rows, b.cols, p.values().subspan(b.offset, b.size()));
            }
        };
        take_set("table", state.model.table.params());
        take_set("denoiser", state.model.denoiser.params());
        take("adam", "m", 1, total, state.optimizer.m);
        take("adam", "v", 1, total, state.optimizer.v);
        if (off != payload.size() || bi != blocks.size())
            throw std::runtime_error(where + "payload length does not match declared blocks");
        for (const auto& r : manifest.at("history")) state.history.push_back(log_record_from(r));
        return state;
    } catch (const json::exception& e) {
        throw std::runtime_error(where + "corrupt manifest: " + e.what());
    }
}

void save_checkpoint(const TrainingState& state, const std::filesystem::path& path) { Checkpoint::save(state, path); }

TrainingState load_checkpoint(const std::filesystem::path& path) { return Checkpoint::load(path); }

}  // namespace textdiff
