#include "textdiff/latent.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace textdiff {

EmbeddingTable::EmbeddingTable(int vocab_size, int dim) : K_(vocab_size), d_(dim) {
    if (vocab_size < 4) throw std::invalid_argument("embedding: vocabulary must hold at least 4 tokens");
    if (dim < 1) throw std::invalid_argument("embedding: dim must be >= 1");
    emb_ = params_.add("embedding", K_, d_);
    absorb_ = params_.add("absorbing", 1, d_);
}

EmbeddingTable::EmbeddingTable(int vocab_size, int dim, Rng& rng, double init_std) : EmbeddingTable(vocab_size, dim) {
    for (double& v : params_.values()) v = init_std * rng.normal();
}

Mat embed(const EmbeddingTable& table, std::span<const TokenId> ids) {
    Mat out(static_cast<Eigen::Index>(ids.size()), table.dim());
    const auto E = table.rows();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.vocab_size())
            throw std::out_of_range("embed: token id " + std::to_string(ids[i]) + " outside vocabulary");
        out.row(static_cast<Eigen::Index>(i)) = E.row(ids[i]);
    }
    return out;
}

namespace {

void check_latent(const EmbeddingTable& table, const Mat& z) {
    if (z.cols() != table.dim()) throw std::invalid_argument("latent width does not match embedding dim");
    if (!z.allFinite()) throw std::domain_error("latent contains non-finite values");
}

// Squared distance of each row of z to each embedding row, L x K.
Mat squared_distances(const EmbeddingTable& table, const Mat& z) {
    const auto E = table.rows();
    Mat d(z.rows(), E.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index k = 0; k < E.rows(); ++k) d(i, k) = (z.row(i) - E.row(k)).squaredNorm();
    return d;
}

}  // namespace

std::vector<TokenId> round_to_tokens(const EmbeddingTable& table, const Mat& z, RoundingMetric metric) {
    check_latent(table, z);
    const Mat score = metric == RoundingMetric::l2 ? Mat(-squared_distances(table, z)) : Mat(z * table.rows().transpose());
    std::vector<TokenId> ids(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        TokenId best = 0;
        for (Eigen::Index k = 1; k < score.cols(); ++k)
            if (score(i, k) > score(i, best)) best = static_cast<TokenId>(k);
        ids[i] = best;
    }
    return ids;
}

Mat clamp_latent(const EmbeddingTable& table, const Mat& z, std::span<const std::uint8_t> mask, RoundingMetric metric) {
    if (mask.size() != static_cast<std::size_t>(z.rows())) throw std::invalid_argument("clamp: mask length mismatch");
    const auto ids = round_to_tokens(table, z, metric);
    Mat out = z;
    const auto E = table.rows();
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        if (mask[i]) out.row(i) = E.row(ids[i]);
    return out;
}

Mat rounding_logits(const EmbeddingTable& table, const Mat& z) {
    check_latent(table, z);
    return -squared_distances(table, z);
}

}  // namespace textdiff
