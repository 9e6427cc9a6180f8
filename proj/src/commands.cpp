#include "textdiff/commands.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace textdiff {

using nlohmann::json;

SplitSizes cmd_make_toy_data(const ToyDataSpec& spec, const std::filesystem::path& out_dir) {
    const ToyDataset ds = make_toy_dataset(spec.task, spec.vocab_size, {spec.min_len, spec.max_len}, spec.n, spec.seed);
    const int n_valid = static_cast<int>(std::floor(spec.n * spec.valid_fraction));
    const int n_test = static_cast<int>(std::floor(spec.n * spec.test_fraction));
    const int n_train = spec.n - n_valid - n_test;
    if (n_train < 1) throw std::invalid_argument("make-toy-data: no room left for the training split");

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());

    auto slice = [&](int from, int count) {
        return std::vector<TextPair>(ds.pairs.begin() + from, ds.pairs.begin() + from + count);
    };
    write_text_pairs(out_dir / "train.jsonl", slice(0, n_train));
    write_text_pairs(out_dir / "valid.jsonl", slice(n_train, n_valid));
    write_text_pairs(out_dir / "test.jsonl", slice(n_train + n_valid, n_test));

    json manifest{{"task", std::string(to_string(spec.task))},
                  {"vocab_size", spec.vocab_size},
                  {"min_len", spec.min_len},
                  {"max_len", spec.max_len},
                  {"n", spec.n},
                  {"seed", spec.seed},
                  {"permutation", ds.permutation},
                  {"splits", {{"train", n_train}, {"valid", n_valid}, {"test", n_test}}}};
    std::ofstream out(out_dir / "manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest in " + out_dir.string());
    out << manifest.dump(2) << '\n';
    return {n_train, n_valid, n_test};
}

double sample_bleu(const Model& model, const std::vector<PairedExample>& examples, const SamplerConfig& config,
                   int limit) {
    const auto pred = make_predictor(model.denoiser);
    const std::size_t n = limit > 0 ? std::min<std::size_t>(limit, examples.size()) : examples.size();
    if (n == 0) throw std::invalid_argument("sample_bleu: no examples");
    const Rng root(config.seed);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto gen = generate(pred, model.table, model.schedule, model.vocab, examples[i].src_ids, model.seq_len,
                                  config, root.split(i));
        sum += bleu(tokenize(gen.selected), tokenize(model.vocab.decode(examples[i].trg_ids)));
    }
    return sum / static_cast<double>(n);
}

TrainingState cmd_train(const RunConfig& config, std::ostream& progress) {
    const auto pairs = read_text_pairs(config.get("train_path"));
    if (pairs.empty()) throw std::runtime_error("no training pairs in " + config.get("train_path"));
    Vocab vocab = build_vocab(pairs, config.get_int("min_freq"));
    const auto data = encode_pairs(pairs, vocab, config.max_src_len(), config.max_trg_len());

    std::vector<PairedExample> valid;
    if (!config.get("valid_path").empty())
        valid = load_jsonl(config.get("valid_path"), vocab, config.max_src_len(), config.max_trg_len());

    TrainConfig tc = config.train();
    TrainingState state = init_training(std::move(vocab), config.schedule(), config.denoiser(), config.seq_len(), tc);

    const std::filesystem::path ckpt = tc.checkpoint_path;
    if (ckpt.has_parent_path()) std::filesystem::create_directories(ckpt.parent_path());
    {
        std::ofstream echo(ckpt.string() + ".config");
        echo << config.dump();
    }
    std::ofstream log(config.get("log_path"));
    if (!log) throw std::runtime_error("cannot write log " + config.get("log_path"));
    log << json{{"event", "start"}, {"gamma", tc.gamma}, {"steps", tc.steps}, {"seed", tc.seed}}.dump() << '\n';

    const SamplerConfig sc = config.sampler();
    const int eval_examples = config.get_int("eval_examples");
    Evaluator evaluator;
    if (!valid.empty()) evaluator = [&](const Model& m) { return sample_bleu(m, valid, sc, eval_examples); };
    const int report_every = std::max(1, tc.steps / 20);
    train(
        state, data,
        [&](const LogRecord& r) {
            log << r.to_json() << '\n';
            if (r.step % report_every == 0 || r.eval_bleu || r.step + 1 == tc.steps) {
                progress << "step " << r.step << " loss " << r.total << " (mse " << r.mse << ", rounding "
                         << r.rounding << ")";
                if (r.eval_bleu) progress << " valid BLEU " << *r.eval_bleu;
                progress << '\n';
            }
        },
        evaluator);
    return state;
}

int cmd_sample(const Model& model, const std::filesystem::path& input, const std::filesystem::path& output,
               const SampleOptions& options) {
    const auto pairs = read_text_pairs(input);
    const SamplerConfig& sc = options.sampler;
    sc.validate(model.schedule);
    const auto pred = make_predictor(model.denoiser);
    const Rng root(sc.seed);
    std::ofstream out(output);
    if (!out) throw std::runtime_error("cannot write " + output.string());
    const int max_src = model.seq_len - 2;
    int written = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (options.limit > 0 && written >= options.limit) break;
        std::vector<TokenId> src;
        for (const auto& tok : tokenize(pairs[i].src)) {
            if (!model.vocab.contains(tok))
                throw std::runtime_error(input.string() + ":" + std::to_string(i + 1) + ": token '" + tok +
                                         "' not in the checkpoint vocabulary");
            src.push_back(model.vocab.id(tok));
        }
        if (src.empty()) throw std::runtime_error(input.string() + ":" + std::to_string(i + 1) + ": empty source");
        if (static_cast<int>(src.size()) > max_src) src.resize(max_src);
        const auto gen = generate(pred, model.table, model.schedule, model.vocab, src, model.seq_len, sc, root.split(i));
        out << json{{"source", pairs[i].src},
                    {"reference", pairs[i].trg},
                    {"candidates", gen.candidates},
                    {"selected", gen.selected}}
                   .dump()
            << '\n';
        if (i == 0 && options.trace_path) {
            std::ofstream trace(*options.trace_path);
            gen.trace.write_csv(trace);
        }
        ++written;
    }
    return written;
}

EvalReport cmd_eval(const std::filesystem::path& generations) { return evaluate_file(generations); }

std::string BenchResult::to_json() const {
    return json{{"sequences_per_second", sequences_per_second},
                {"nfe_per_sequence", nfe_per_sequence},
                {"seconds", seconds},
                {"sequences", sequences}}
        .dump();
}

BenchResult cmd_bench(const Model& model, int batch_size, const SamplerConfig& config, int repeats) {
    if (batch_size < 1 || repeats < 1) throw std::invalid_argument("bench: batch_size and repeats must be >= 1");
    config.validate(model.schedule);
    const auto pred = make_predictor(model.denoiser);
    Rng rng(config.seed);
    const int src_len = std::max(1, (model.seq_len - 1) / 2);
    std::vector<std::vector<TokenId>> sources(batch_size);
    for (auto& s : sources)
        for (int i = 0; i < src_len; ++i)
            s.push_back(static_cast<TokenId>(rng.integer(Vocab::kReserved, model.vocab.size() - 1)));

    SamplerConfig single = config;
    single.mbr_candidates = 1;
    auto run_batch = [&](std::uint64_t key) {
        long nfe = 0;
        for (int b = 0; b < batch_size; ++b)
            nfe += generate(pred, model.table, model.schedule, model.vocab, sources[b], model.seq_len, single,
                            rng.split(key * 1000003ULL + b))
                       .nfe;
        return nfe;
    };
    run_batch(0);  // warmup
    long nfe = 0;
    const auto start = std::chrono::steady_clock::now();
    for (int r = 0; r < repeats; ++r) nfe += run_batch(r + 1);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    BenchResult res;
    res.sequences = batch_size * repeats;
    res.seconds = secs;
    res.sequences_per_second = res.sequences / std::max(secs, 1e-12);
    res.nfe_per_sequence = static_cast<double>(nfe) / res.sequences;
    return res;
}

}  // namespace textdiff
