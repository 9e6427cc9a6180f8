#pragma once

#include "textdiff/corpus.hpp"
#include "textdiff/params.hpp"
#include "textdiff/rng.hpp"
#include "textdiff/types.hpp"

#include <span>
#include <vector>

namespace textdiff {

enum class RoundingMetric { l2, dot };

// Token embeddings plus the learned soft absorbing vector m. m has no token
// id and is never a rounding candidate.
class EmbeddingTable {
public:
    EmbeddingTable(int vocab_size, int dim);
    // Rows and m drawn from N(0, init_std^2).
    EmbeddingTable(int vocab_size, int dim, Rng& rng, double init_std = 0.02);

    int vocab_size() const { return K_; }
    int dim() const { return d_; }

    MatMap rows() { return params_.value(emb_); }
    ConstMatMap rows() const { return params_.value(emb_); }
    MatMap absorbing() { return params_.value(absorb_); }  // 1 x d
    ConstMatMap absorbing() const { return params_.value(absorb_); }

    MatMap rows_grad() { return params_.grad(emb_); }
    MatMap absorbing_grad() { return params_.grad(absorb_); }

    Parameters& params() { return params_; }
    const Parameters& params() const { return params_; }

private:
    int K_;
    int d_;
    Parameters params_;
    int emb_;
    int absorb_;
};

// L x d matrix with row i = E[ids[i]].
Mat embed(const EmbeddingTable& table, std::span<const TokenId> ids);

// Nearest embedding row per position (smallest id on ties).
std::vector<TokenId> round_to_tokens(const EmbeddingTable& table, const Mat& z,
                                     RoundingMetric metric = RoundingMetric::l2);

// Masked positions snapped to their nearest embedding row; others untouched.
Mat clamp_latent(const EmbeddingTable& table, const Mat& z, std::span<const std::uint8_t> mask,
                 RoundingMetric metric = RoundingMetric::l2);

// score(i, k) = -||z_i - E_k||^2
Mat rounding_logits(const EmbeddingTable& table, const Mat& z);

}  // namespace textdiff
