#pragma once

#include "textdiff/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace textdiff {

using TokenId = std::int32_t;

class Vocab {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kUnk = 1;
    static constexpr TokenId kSep = 2;
    static constexpr int kReserved = 3;

    Vocab();
    // Reserved tokens followed by `tokens` in the given order.
    explicit Vocab(const std::vector<std::string>& tokens);

    int size() const { return static_cast<int>(id_to_token_.size()); }
    TokenId id(std::string_view token) const;  // [UNK] when absent
    bool contains(std::string_view token) const;
    const std::string& token(TokenId id) const;
    const std::vector<std::string>& tokens() const { return id_to_token_; }

    std::vector<TokenId> encode(std::string_view text) const;
    // Joins tokens with single spaces, stopping at the first [PAD] or [SEP].
    std::string decode(const std::vector<TokenId>& ids) const;

    bool operator==(const Vocab& other) const { return id_to_token_ == other.id_to_token_; }

private:
    TokenId add(const std::string& token);

    std::unordered_map<std::string, TokenId> token_to_id_;
    std::vector<std::string> id_to_token_;
};

std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(const std::vector<std::string>& tokens);

struct TextPair {
    std::string src;
    std::string trg;
};

struct PairedExample {
    std::vector<TokenId> src_ids;
    std::vector<TokenId> trg_ids;
};

// Tokens with frequency >= min_freq, ordered by descending frequency then
// lexicographically.
Vocab build_vocab(const std::vector<TextPair>& corpus, int min_freq = 1);

std::vector<TextPair> read_text_pairs(const std::filesystem::path& path);
void write_text_pairs(const std::filesystem::path& path, const std::vector<TextPair>& pairs);

std::vector<PairedExample> encode_pairs(const std::vector<TextPair>& pairs, const Vocab& vocab, int max_src_len,
                                        int max_trg_len);
std::vector<PairedExample> load_jsonl(const std::filesystem::path& path, const Vocab& vocab, int max_src_len,
                                      int max_trg_len);

enum class ToyTask { copy, reverse, bijection };
ToyTask parse_toy_task(std::string_view name);
std::string_view to_string(ToyTask task);

struct ToyDataset {
    ToyTask task;
    int vocab_size;
    int min_len;
    int max_len;
    std::uint64_t seed;
    // symbol k maps to symbol permutation[k] (identity unless bijection)
    std::vector<int> permutation;
    std::vector<TextPair> pairs;
};

std::string toy_symbol(int k);
ToyDataset make_toy_dataset(ToyTask task, int vocab_size, std::pair<int, int> seq_len_range, int n, std::uint64_t seed);

// One packed row: [src..., SEP, trg..., PAD...].
struct PackedRow {
    std::vector<TokenId> ids;
    Mask condition_mask;
    Mask pad_mask;  // true on real (non-PAD) tokens
};

PackedRow pack(const PairedExample& example, int L);
// Condition part only; everything after [SEP] is PAD.
PackedRow pack_source(const std::vector<TokenId>& src_ids, int L);

// Masks used by the diffusion process for a packed row. When `pad_as_target`
// is set the trailing PAD positions after [SEP] are generated like any other
// target token (the sampler has to produce them to end the sequence).
using PackedBatch = std::vector<PackedRow>;

SequenceMasks diffusion_masks(const PackedRow& row, bool pad_as_target);

}  // namespace textdiff
