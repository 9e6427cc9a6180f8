#pragma once

#include "textdiff/params.hpp"
#include "textdiff/rng.hpp"
#include "textdiff/types.hpp"

#include <functional>
#include <span>
#include <vector>

namespace textdiff {

struct DenoiserConfig {
    int latent_dim = 16;  // d, width of the embedding space
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 128;
    int max_len = 48;
    int time_embed_dim = 32;

    void validate() const;
};

// Bidirectional pre-LN transformer predicting the clean latent z_0 from a
// corrupted sequence. Positions are encoded sinusoidally by their index inside
// their own segment (condition or target) plus a learned segment vector, and
// the timestep enters through a sinusoid -> linear -> SiLU -> linear projection
// added to every position. Invalid positions are masked out as attention keys.
class Denoiser {
public:
    // Activations kept by forward() for backward().
    struct LayerCache {
        Mat h_in;
        Mat ln1_hat;
        Eigen::VectorXd ln1_rstd;
        Mat x1;
        Mat qkv;
        std::vector<Mat> attn;  // per head, L x L
        Mat heads_out;
        Mat h_mid;
        Mat ln2_hat;
        Eigen::VectorXd ln2_rstd;
        Mat x2;
        Mat ff_pre;
        Mat ff_act;
    };
    struct Cache {
        Mat z;
        Mask condition;
        RowVec time_features;
        RowVec time_pre;
        RowVec time_act;
        std::vector<LayerCache> layers;
        Mat h_final;
        Mat lnf_hat;
        Eigen::VectorXd lnf_rstd;
        Mat xf;
    };

    explicit Denoiser(const DenoiserConfig& config);  // zero parameters
    Denoiser(const DenoiserConfig& config, Rng& rng);

    const DenoiserConfig& config() const { return cfg_; }
    Parameters& params() { return params_; }
    const Parameters& params() const { return params_; }

    // z_hat is L x latent_dim; returns the L x latent_dim prediction of z_0.
    Mat forward(const Mat& z_hat, double t, const SequenceMasks& masks, Cache* cache = nullptr) const;
    // Accumulates parameter gradients into params().grads() and returns dLoss/dz_hat.
    Mat backward(const Cache& cache, const Mat& d_out);

    static std::size_t parameter_count(const DenoiserConfig& config);

private:
    struct LayerIds {
        int ln1_g, ln1_b, qkv_w, qkv_b, o_w, o_b, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
    };

    void build();
    Mat position_encoding(const Mask& condition) const;

    DenoiserConfig cfg_;
    Parameters params_;
    int in_w_, in_b_, seg_, t1_w_, t1_b_, t2_w_, t2_b_, lnf_g_, lnf_b_, out_w_, out_b_;
    std::vector<LayerIds> layers_;
};

// Batched prediction; rows are independent.
std::vector<Mat> predict_z0(const Denoiser& denoiser, const std::vector<Mat>& z_hat, std::span<const double> t,
                            const std::vector<SequenceMasks>& masks);

// Central-difference check of analytic gradients over every parameter.
// `loss_and_grad` must zero and refill the gradients of every listed
// parameter set and return the loss.
// Relative error per entry is |a - n| / max(|a|, |n|, floor).
struct GradCheckResult {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
};
GradCheckResult grad_check(const std::vector<Parameters*>& params, const std::function<double()>& loss_and_grad, double eps = 1e-5,
                           double floor = 1e-5);

}  // namespace textdiff
