#include "textdiff/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace textdiff {

const std::vector<RunConfig::Key>& RunConfig::keys() {
    using K = RunConfig::Kind;
    static const std::vector<Key> k = {
        // schedule
        {"T", K::integer, "200", "number of diffusion steps"},
        {"s", K::real, "1e-4", "sqrt schedule offset"},
        {"beta_clip_max", K::real, "0.999", "upper clip for per-step beta"},
        // data
        {"train_path", K::text, "data/train.jsonl", "training pairs (JSONL with src/trg)"},
        {"valid_path", K::text, "", "validation pairs used for periodic BLEU (optional)"},
        {"max_src_len", K::integer, "12", "source truncation length"},
        {"max_trg_len", K::integer, "12", "target truncation length"},
        {"min_freq", K::integer, "1", "minimum token frequency for the vocabulary"},
        // model
        {"latent_dim", K::integer, "16", "embedding dimension d"},
        {"d_model", K::integer, "64", "transformer width"},
        {"n_layers", K::integer, "2", "transformer layers"},
        {"n_heads", K::integer, "4", "attention heads"},
        {"d_ff", K::integer, "128", "feed-forward width"},
        {"max_len", K::integer, "48", "maximum packed sequence length"},
        {"time_embed_dim", K::integer, "32", "sinusoidal timestep features"},
        // training
        {"steps", K::integer, "2000", "optimizer steps"},
        {"batch_size", K::integer, "32", "rows per step"},
        {"learning_rate", K::real, "1e-3", "peak Adam learning rate"},
        {"warmup_steps", K::integer, "100", "linear warmup length"},
        {"seed", K::integer, "0", "master seed"},
        {"gamma", K::real, "0.5", "absorbing-state ratio (training and sampling)"},
        {"eval_every", K::integer, "0", "steps between validation BLEU evaluations (0 = off)"},
        {"eval_examples", K::integer, "50", "validation examples per evaluation"},
        {"checkpoint_every", K::integer, "0", "steps between checkpoints (0 = final only)"},
        {"checkpoint_path", K::text, "model.ckpt", "checkpoint file"},
        {"log_path", K::text, "train_log.jsonl", "line-delimited training log"},
        {"grad_clip", K::real, "1.0", "global gradient-norm clip (<= 0 disables)"},
        {"w_denoise", K::real, "1.0", "weight of the denoising term"},
        {"w_rounding", K::real, "1.0", "weight of the rounding cross-entropy"},
        {"w_norm", K::real, "1.0", "weight of the z_0 norm term"},
        {"mask_rate", K::text, "per_step", "absorbing probability: per_step (beta_t*gamma) or cumulative"},
        {"pad_as_target", K::boolean, "true", "generate trailing [PAD] positions as targets"},
        // sampler
        {"mode", K::text, "dpm2m", "sampler: ancestral | respaced | dpm2m"},
        {"sample_steps", K::integer, "10", "steps for respaced / dpm2m"},
        {"clamp", K::boolean, "false", "clamp x0 predictions to embeddings"},
        {"inject_mask", K::boolean, "true", "re-inject absorbing noise while sampling"},
        {"mbr", K::integer, "1", "MBR candidates per source"},
        {"spacing", K::text, "even", "grid spacing: even | lambda"},
        {"solver", K::text, "phi", "2M update: phi | midpoint"},
        {"rounding", K::text, "l2", "rounding metric: l2 | dot"},
        // metrics
        {"external_scorer", K::text, "", "command printing an extra score for a generations file"},
    };
    return k;
}

RunConfig::RunConfig() {
    for (const auto& k : keys()) values_[k.name] = k.default_value;
}

const RunConfig::Key& RunConfig::key(const std::string& name) const {
    for (const auto& k : keys())
        if (k.name == name) return k;
    throw std::invalid_argument("unknown config key '" + name + "'");
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, bool& out) {
    std::string l = v;
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
    if (l == "true" || l == "1" || l == "yes" || l == "on") return out = true, true;
    if (l == "false" || l == "0" || l == "no" || l == "off") return out = false, true;
    return false;
}

}  // namespace

void RunConfig::set(const std::string& name, const std::string& raw) {
    const Key& k = key(name);
    const std::string value = trim(raw);
    std::size_t pos = 0;
    try {
        switch (k.kind) {
            case Kind::integer: (void)std::stoll(value, &pos); break;
            case Kind::real: (void)std::stod(value, &pos); break;
            case Kind::boolean: {
                bool b;
                if (!parse_bool(value, b)) pos = std::string::npos;
                else pos = value.size();
                break;
            }
            case Kind::text: pos = value.size(); break;
        }
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != value.size()) throw std::invalid_argument("config key '" + name + "': invalid value '" + value + "'");
    values_[name] = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        if (trim(line).empty()) continue;
        try {
            set_assignment(line);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

const std::string& RunConfig::get(const std::string& name) const {
    key(name);
    return values_.at(name);
}

int RunConfig::get_int(const std::string& name) const { return static_cast<int>(std::stoll(get(name))); }

double RunConfig::get_double(const std::string& name) const { return std::stod(get(name)); }

bool RunConfig::get_bool(const std::string& name) const {
    bool b = false;
    parse_bool(get(name), b);
    return b;
}

std::string RunConfig::dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
}

ScheduleParams RunConfig::schedule() const { return {get_int("T"), get_double("s"), get_double("beta_clip_max")}; }

DenoiserConfig RunConfig::denoiser() const {
    DenoiserConfig c;
    c.latent_dim = get_int("latent_dim");
    c.d_model = get_int("d_model");
    c.n_layers = get_int("n_layers");
    c.n_heads = get_int("n_heads");
    c.d_ff = get_int("d_ff");
    c.max_len = get_int("max_len");
    c.time_embed_dim = get_int("time_embed_dim");
    c.validate();
    return c;
}

TrainConfig RunConfig::train() const {
    TrainConfig c;
    c.steps = get_int("steps");
    c.batch_size = get_int("batch_size");
    c.learning_rate = get_double("learning_rate");
    c.warmup_steps = get_int("warmup_steps");
    c.seed = static_cast<std::uint64_t>(std::stoull(get("seed")));
    c.gamma = get_double("gamma");
    c.eval_every = get_int("eval_every");
    c.checkpoint_every = get_int("checkpoint_every");
    c.checkpoint_path = get("checkpoint_path");
    c.grad_clip = get_double("grad_clip");
    c.w_denoise = get_double("w_denoise");
    c.w_rounding = get_double("w_rounding");
    c.w_norm = get_double("w_norm");
    const auto& rate = get("mask_rate");
    if (rate != "per_step" && rate != "cumulative") throw std::invalid_argument("mask_rate must be per_step or cumulative");
    c.mask_rate = rate == "per_step" ? MaskRate::per_step : MaskRate::cumulative;
    c.pad_as_target = get_bool("pad_as_target");
    return c;
}

SamplerConfig RunConfig::sampler() const {
    SamplerConfig c;
    c.mode = parse_sampler_mode(get("mode"));
    c.steps = get_int("sample_steps");
    c.use_clamp = get_bool("clamp");
    c.inject_mask = get_bool("inject_mask");
    c.gamma = get_double("gamma");
    c.mbr_candidates = get_int("mbr");
    c.seed = static_cast<std::uint64_t>(std::stoull(get("seed")));
    c.mask_rate = get("mask_rate") == "cumulative" ? MaskRate::cumulative : MaskRate::per_step;
    const auto& spacing = get("spacing");
    if (spacing != "even" && spacing != "lambda") throw std::invalid_argument("spacing must be even or lambda");
    c.spacing = spacing == "even" ? Spacing::even : Spacing::lambda;
    const auto& solver = get("solver");
    if (solver != "phi" && solver != "midpoint") throw std::invalid_argument("solver must be phi or midpoint");
    c.solver = solver == "phi" ? SolverVariant::phi : SolverVariant::midpoint;
    const auto& rounding = get("rounding");
    if (rounding != "l2" && rounding != "dot") throw std::invalid_argument("rounding must be l2 or dot");
    c.rounding = rounding == "l2" ? RoundingMetric::l2 : RoundingMetric::dot;
    return c;
}

}  // namespace textdiff
