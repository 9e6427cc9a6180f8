#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace textdiff {

using Tokens = std::vector<std::string>;

// Sentence BLEU: clipped n-gram precision up to order 4 (or the hypothesis
// length if shorter), zero match counts replaced by 1e-9, brevity penalty
// exp(1 - r/c) when c < r. Throws on an empty reference.
double bleu(const Tokens& hypothesis, const Tokens& reference);
double bleu(const std::string& hypothesis, const std::string& reference);

// F-measure over the longest common subsequence. Throws on empty input.
double rouge_l(const Tokens& hypothesis, const Tokens& reference);
double rouge_l(const std::string& hypothesis, const std::string& reference);

std::size_t lcs_length(const Tokens& a, const Tokens& b);

// Mean BLEU over ordered pairs (i, j), i != j. Needs at least two samples.
double self_bleu(const std::vector<std::string>& samples);

// BLEU used inside consensus scoring, defined for empty strings as well:
// empty reference scores 1 against an empty hypothesis and 0 otherwise.
double consensus_bleu(const std::string& hypothesis, const std::string& reference);

struct ExampleScore {
    std::string source;
    std::string reference;
    std::string selected;
    double bleu;
    double rouge_l;
    std::optional<double> self_bleu;
};

struct EvalReport {
    double bleu = 0.0;
    double rouge_l = 0.0;
    std::optional<double> self_bleu;  // only when examples carry >= 2 candidates
    int n_examples = 0;
    std::vector<ExampleScore> examples;

    std::string to_json() const;
    void print_table(std::ostream& os) const;
};

EvalReport evaluate_records(std::vector<ExampleScore> records);
// Reads sampler output JSONL ({"source","reference","candidates","selected"}).
EvalReport evaluate_file(const std::filesystem::path& generations);

// Optional external scorer slot (e.g. an embedding-based metric). Returns
// nullopt when no command is configured.
std::optional<double> external_score(const std::string& command, const std::filesystem::path& generations);

}  // namespace textdiff
