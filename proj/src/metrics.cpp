#include "textdiff/metrics.hpp"

#include "textdiff/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <stdexcept>

namespace textdiff {

namespace {

constexpr int kMaxOrder = 4;
constexpr double kZeroCount = 1e-9;

std::map<Tokens, int> ngram_counts(const Tokens& toks, int n) {
    std::map<Tokens, int> counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[Tokens(toks.begin() + i, toks.begin() + i + n)];
    return counts;
}

}  // namespace

double bleu(const Tokens& hypothesis, const Tokens& reference) {
    if (reference.empty()) throw std::invalid_argument("bleu: empty reference");
    if (hypothesis.empty()) return 0.0;
    const int order = std::min<int>(kMaxOrder, static_cast<int>(hypothesis.size()));
    double log_sum = 0.0;
    for (int n = 1; n <= order; ++n) {
        const auto hyp = ngram_counts(hypothesis, n);
        const auto ref = ngram_counts(reference, n);
        int matches = 0;
        int total = 0;
        for (const auto& [gram, count] : hyp) {
            total += count;
            auto it = ref.find(gram);
            if (it != ref.end()) matches += std::min(count, it->second);
        }
        const double num = matches > 0 ? static_cast<double>(matches) : kZeroCount;
        log_sum += std::log(num / total);
    }
    const double c = static_cast<double>(hypothesis.size());
    const double r = static_cast<double>(reference.size());
    const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
    return std::clamp(bp * std::exp(log_sum / order), 0.0, 1.0);
}

double bleu(const std::string& hypothesis, const std::string& reference) {
    return bleu(tokenize(hypothesis), tokenize(reference));
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(const Tokens& hypothesis, const Tokens& reference) {
    if (hypothesis.empty() || reference.empty()) throw std::invalid_argument("rouge_l: empty input");
    const double lcs = static_cast<double>(lcs_length(hypothesis, reference));
    if (lcs == 0.0) return 0.0;
    const double p = lcs / hypothesis.size();
    const double r = lcs / reference.size();
    return 2.0 * p * r / (p + r);
}

double rouge_l(const std::string& hypothesis, const std::string& reference) {
    return rouge_l(tokenize(hypothesis), tokenize(reference));
}

double self_bleu(const std::vector<std::string>& samples) {
    if (samples.size() < 2) throw std::invalid_argument("self_bleu: needs at least two samples");
    double sum = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (std::size_t j = 0; j < samples.size(); ++j) {
            if (i == j) continue;
            sum += consensus_bleu(samples[i], samples[j]);
            ++pairs;
        }
    return sum / pairs;
}

double consensus_bleu(const std::string& hypothesis, const std::string& reference) {
    const auto ref = tokenize(reference);
    if (ref.empty()) return tokenize(hypothesis).empty() ? 1.0 : 0.0;
    return bleu(tokenize(hypothesis), ref);
}

EvalReport evaluate_records(std::vector<ExampleScore> records) {
    if (records.empty()) throw std::invalid_argument("evaluate: no examples");
    EvalReport report;
    double self_sum = 0.0;
    int self_n = 0;
    for (const auto& r : records) {
        report.bleu += r.bleu;
        report.rouge_l += r.rouge_l;
        if (r.self_bleu) {
            self_sum += *r.self_bleu;
            ++self_n;
        }
    }
    report.n_examples = static_cast<int>(records.size());
    report.bleu /= report.n_examples;
    report.rouge_l /= report.n_examples;
    if (self_n > 0) report.self_bleu = self_sum / self_n;
    report.examples = std::move(records);
    return report;
}

EvalReport evaluate_file(const std::filesystem::path& generations) {
    std::ifstream in(generations);
    if (!in) throw std::runtime_error("cannot open " + generations.string());
    std::vector<ExampleScore> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = generations.string() + ":" + std::to_string(line_no);
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::runtime_error(where + ": malformed record: " + e.what());
        }
        if (!rec.is_object() || !rec.contains("reference") || !rec["reference"].is_string() ||
            !rec.contains("selected") || !rec["selected"].is_string())
            throw std::runtime_error(where + ": record needs string fields \"reference\" and \"selected\"");
        ExampleScore s;
        s.source = rec.value("source", "");
        s.reference = rec["reference"].get<std::string>();
        s.selected = rec["selected"].get<std::string>();
        const auto hyp = tokenize(s.selected);
        const auto ref = tokenize(s.reference);
        if (ref.empty()) throw std::runtime_error(where + ": empty reference");
        s.bleu = bleu(hyp, ref);
        s.rouge_l = hyp.empty() ? 0.0 : rouge_l(hyp, ref);
        if (rec.contains("candidates")) {
            if (!rec["candidates"].is_array()) throw std::runtime_error(where + ": \"candidates\" must be an array");
            const auto cands = rec["candidates"].get<std::vector<std::string>>();
            if (cands.size() >= 2) s.self_bleu = self_bleu(cands);
        }
        records.push_back(std::move(s));
    }
    if (records.empty()) throw std::runtime_error(generations.string() + ": no records");
    return evaluate_records(std::move(records));
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["bleu"] = bleu;
    j["rouge_l"] = rouge_l;
    j["self_bleu"] = self_bleu ? nlohmann::json(*self_bleu) : nlohmann::json(nullptr);
    j["n_examples"] = n_examples;
    auto& arr = j["examples"] = nlohmann::json::array();
    for (const auto& e : examples) {
        arr.push_back({{"source", e.source},
                       {"reference", e.reference},
                       {"selected", e.selected},
                       {"bleu", e.bleu},
                       {"rouge_l", e.rouge_l},
                       {"self_bleu", e.self_bleu ? nlohmann::json(*e.self_bleu) : nlohmann::json(nullptr)}});
    }
    return j.dump(2);
}

void EvalReport::print_table(std::ostream& os) const {
    os << std::fixed << std::setprecision(4);
    os << "metric      value\n";
    os << "BLEU        " << bleu << '\n';
    os << "ROUGE-L     " << rouge_l << '\n';
    if (self_bleu) os << "self-BLEU   " << *self_bleu << '\n';
    os << "examples    " << n_examples << '\n';
    os.unsetf(std::ios::floatfield);
}

std::optional<double> external_score(const std::string& command, const std::filesystem::path& generations) {
    if (command.empty()) return std::nullopt;
    const std::string cmd = command + " '" + generations.string() + "'";
    std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
    if (!pipe) throw std::runtime_error("external scorer failed to start: " + command);
    std::array<char, 256> buf{};
    std::string out;
    while (fgets(buf.data(), buf.size(), pipe.get())) out += buf.data();
    try {
        return std::stod(out);
    } catch (const std::exception&) {
        throw std::runtime_error("external scorer printed no number: " + out);
    }
}

}  // namespace textdiff
