#include "textdiff/corpus.hpp"

#include "textdiff/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace textdiff {

namespace {
const char* const kReservedTokens[] = {"[PAD]", "[UNK]", "[SEP]"};
}

Vocab::Vocab() {
    for (const char* tok : kReservedTokens) add(tok);
}

Vocab::Vocab(const std::vector<std::string>& tokens) : Vocab() {
    for (const auto& tok : tokens) {
        if (contains(tok)) throw std::invalid_argument("vocab: duplicate token '" + tok + "'");
        add(tok);
    }
}

TokenId Vocab::add(const std::string& token) {
    const auto id = static_cast<TokenId>(id_to_token_.size());
    token_to_id_.emplace(token, id);
    id_to_token_.push_back(token);
    return id;
}

TokenId Vocab::id(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return token_to_id_.count(std::string(token)) > 0; }

const std::string& Vocab::token(TokenId id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
    return id_to_token_[id];
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (const auto& tok : tokenize(text)) ids.push_back(id(tok));
    return ids;
}

std::string Vocab::decode(const std::vector<TokenId>& ids) const {
    std::vector<std::string> toks;
    for (TokenId id : ids) {
        if (id == kPad || id == kSep) break;
        toks.push_back(token(id));
    }
    return detokenize(toks);
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream is{std::string(text)};
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

Vocab build_vocab(const std::vector<TextPair>& corpus, int min_freq) {
    if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
    std::map<std::string, int> freq;
    for (const auto& pair : corpus) {
        for (const auto& tok : tokenize(pair.src)) ++freq[tok];
        for (const auto& tok : tokenize(pair.trg)) ++freq[tok];
    }
    std::vector<std::pair<std::string, int>> kept;
    for (const auto& [tok, n] : freq) {
        if (n >= min_freq && tok != kReservedTokens[0] && tok != kReservedTokens[1] && tok != kReservedTokens[2])
            kept.emplace_back(tok, n);
    }
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens;
    tokens.reserve(kept.size());
    for (auto& [tok, n] : kept) tokens.push_back(tok);
    return Vocab(tokens);
}

std::vector<TextPair> read_text_pairs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<TextPair> pairs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::runtime_error(where + ": malformed record: " + e.what());
        }
        if (!rec.is_object()) throw std::runtime_error(where + ": record is not an object");
        for (const char* key : {"src", "trg"}) {
            if (!rec.contains(key) || !rec[key].is_string())
                throw std::runtime_error(where + ": missing string field \"" + key + "\"");
        }
        pairs.push_back({rec["src"].get<std::string>(), rec["trg"].get<std::string>()});
    }
    return pairs;
}

void write_text_pairs(const std::filesystem::path& path, const std::vector<TextPair>& pairs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& p : pairs) out << nlohmann::json{{"src", p.src}, {"trg", p.trg}}.dump() << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<PairedExample> encode_pairs(const std::vector<TextPair>& pairs, const Vocab& vocab, int max_src_len,
                                        int max_trg_len) {
    if (max_src_len < 1 || max_trg_len < 1) throw std::invalid_argument("encode_pairs: max lengths must be >= 1");
    std::vector<PairedExample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        PairedExample ex{vocab.encode(p.src), vocab.encode(p.trg)};
        if (ex.src_ids.size() > static_cast<std::size_t>(max_src_len)) ex.src_ids.resize(max_src_len);
        if (ex.trg_ids.size() > static_cast<std::size_t>(max_trg_len)) ex.trg_ids.resize(max_trg_len);
        if (ex.src_ids.empty() || ex.trg_ids.empty()) throw std::invalid_argument("encode_pairs: empty side in pair");
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<PairedExample> load_jsonl(const std::filesystem::path& path, const Vocab& vocab, int max_src_len,
                                      int max_trg_len) {
    return encode_pairs(read_text_pairs(path), vocab, max_src_len, max_trg_len);
}

ToyTask parse_toy_task(std::string_view name) {
    if (name == "copy") return ToyTask::copy;
    if (name == "reverse") return ToyTask::reverse;
    if (name == "bijection") return ToyTask::bijection;
    throw std::invalid_argument("unknown toy task '" + std::string(name) + "'");
}

std::string_view to_string(ToyTask task) {
    switch (task) {
        case ToyTask::copy: return "copy";
        case ToyTask::reverse: return "reverse";
        case ToyTask::bijection: return "bijection";
    }
    return "?";
}

std::string toy_symbol(int k) { return "t" + std::to_string(k); }

ToyDataset make_toy_dataset(ToyTask task, int vocab_size, std::pair<int, int> seq_len_range, int n,
                            std::uint64_t seed) {
    if (vocab_size < 5) throw std::invalid_argument("toy data: vocab_size must be >= 5");
    if (n < 1) throw std::invalid_argument("toy data: n must be >= 1");
    auto [lo, hi] = seq_len_range;
    if (lo < 1 || hi < lo) throw std::invalid_argument("toy data: bad length range");

    ToyDataset ds{task, vocab_size, lo, hi, seed, {}, {}};
    ds.permutation.resize(vocab_size);
    std::iota(ds.permutation.begin(), ds.permutation.end(), 0);
    Rng root(seed);
    if (task == ToyTask::bijection) {
        Rng perm_rng = root.split(0);
        // Fisher-Yates with our own integer draws so the table is platform independent.
        for (int i = vocab_size - 1; i > 0; --i) {
            const auto j = static_cast<int>(perm_rng.integer(0, i));
            std::swap(ds.permutation[i], ds.permutation[j]);
        }
    }

    Rng data_rng = root.split(1);
    ds.pairs.reserve(n);
    for (int e = 0; e < n; ++e) {
        const auto len = static_cast<int>(data_rng.integer(lo, hi));
        std::vector<int> src(len);
        for (auto& s : src) s = static_cast<int>(data_rng.integer(0, vocab_size - 1));
        std::vector<int> trg = src;
        if (task == ToyTask::reverse) std::reverse(trg.begin(), trg.end());
        if (task == ToyTask::bijection)
            for (auto& s : trg) s = ds.permutation[s];
        std::vector<std::string> src_tok, trg_tok;
        for (int s : src) src_tok.push_back(toy_symbol(s));
        for (int s : trg) trg_tok.push_back(toy_symbol(s));
        ds.pairs.push_back({detokenize(src_tok), detokenize(trg_tok)});
    }
    return ds;
}

PackedRow pack(const PairedExample& example, int L) {
    const std::size_t need = example.src_ids.size() + example.trg_ids.size() + 1;
    if (example.src_ids.empty() || example.trg_ids.empty()) throw std::invalid_argument("pack: empty side");
    if (need > static_cast<std::size_t>(L))
        throw std::invalid_argument("pack: sequence of length " + std::to_string(need) + " exceeds L=" +
                                    std::to_string(L));
    PackedRow row;
    row.ids.assign(L, Vocab::kPad);
    row.condition_mask.assign(L, 0);
    row.pad_mask.assign(L, 0);
    std::size_t i = 0;
    for (TokenId id : example.src_ids) {
        row.ids[i] = id;
        row.condition_mask[i] = row.pad_mask[i] = 1;
        ++i;
    }
    row.ids[i] = Vocab::kSep;
    row.condition_mask[i] = row.pad_mask[i] = 1;
    ++i;
    for (TokenId id : example.trg_ids) {
        row.ids[i] = id;
        row.pad_mask[i] = 1;
        ++i;
    }
    return row;
}

PackedRow pack_source(const std::vector<TokenId>& src_ids, int L) {
    if (src_ids.empty()) throw std::invalid_argument("pack_source: empty source");
    if (src_ids.size() + 2 > static_cast<std::size_t>(L))
        throw std::invalid_argument("pack_source: source of length " + std::to_string(src_ids.size()) +
                                    " leaves no target room in L=" + std::to_string(L));
    PackedRow row;
    row.ids.assign(L, Vocab::kPad);
    row.condition_mask.assign(L, 0);
    row.pad_mask.assign(L, 0);
    for (std::size_t i = 0; i < src_ids.size(); ++i) {
        row.ids[i] = src_ids[i];
        row.condition_mask[i] = row.pad_mask[i] = 1;
    }
    row.ids[src_ids.size()] = Vocab::kSep;
    row.condition_mask[src_ids.size()] = row.pad_mask[src_ids.size()] = 1;
    return row;
}

SequenceMasks diffusion_masks(const PackedRow& row, bool pad_as_target) {
    SequenceMasks m;
    m.condition = row.condition_mask;
    m.valid = pad_as_target ? Mask(row.ids.size(), 1) : row.pad_mask;
    return m;
}

}  // namespace textdiff
