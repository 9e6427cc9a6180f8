#pragma once

#include "textdiff/config.hpp"
#include "textdiff/corpus.hpp"
#include "textdiff/metrics.hpp"
#include "textdiff/sampler.hpp"
#include "textdiff/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace textdiff {

struct ToyDataSpec {
    ToyTask task = ToyTask::bijection;
    int vocab_size = 30;
    int min_len = 8;
    int max_len = 12;
    int n = 6250;  // 5000 / 625 / 625 with the default fractions
    std::uint64_t seed = 0;
    double valid_fraction = 0.1;
    double test_fraction = 0.1;
};

struct SplitSizes {
    int train;
    int valid;
    int test;
};

// Writes train/valid/test JSONL plus manifest.json (task, seed, lengths,
// permutation, split sizes).
SplitSizes cmd_make_toy_data(const ToyDataSpec& spec, const std::filesystem::path& out_dir);

// Mean BLEU of generate() over the first `limit` examples.
double sample_bleu(const Model& model, const std::vector<PairedExample>& examples, const SamplerConfig& config,
                   int limit);

// Trains from config (train_path, valid_path, ...), writing the checkpoint,
// the JSONL log and a resolved-config echo next to the checkpoint.
TrainingState cmd_train(const RunConfig& config, std::ostream& progress);

struct SampleOptions {
    SamplerConfig sampler;
    std::optional<std::filesystem::path> trace_path;  // SampleTrace CSV of the first example
    int limit = 0;                                    // 0 = all records
};

// Reads {"src","trg"} JSONL and writes {"source","reference","candidates","selected"}.
// Source tokens missing from the checkpoint vocabulary are an error.
int cmd_sample(const Model& model, const std::filesystem::path& input, const std::filesystem::path& output,
               const SampleOptions& options);

EvalReport cmd_eval(const std::filesystem::path& generations);

struct BenchResult {
    double sequences_per_second = 0.0;
    double nfe_per_sequence = 0.0;
    double seconds = 0.0;
    int sequences = 0;
    std::string to_json() const;
};

// One warmup batch, then `repeats` timed batches of random sources.
BenchResult cmd_bench(const Model& model, int batch_size, const SamplerConfig& config, int repeats);

}  // namespace textdiff
