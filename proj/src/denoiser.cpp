#include "textdiff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace textdiff {

void DenoiserConfig::validate() const {
    if (latent_dim < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 || max_len < 1 || time_embed_dim < 2)
        throw std::invalid_argument("denoiser: all dimensions must be positive (time_embed_dim >= 2)");
    if (d_model % n_heads != 0)
        throw std::invalid_argument("denoiser: d_model=" + std::to_string(d_model) + " not divisible by n_heads=" +
                                    std::to_string(n_heads));
    if (time_embed_dim % 2 != 0) throw std::invalid_argument("denoiser: time_embed_dim must be even");
}

namespace {

constexpr double kLnEps = 1e-5;

void layer_norm(const Mat& x, ConstMatMap gain, ConstMatMap bias, Mat& x_hat, Eigen::VectorXd& rstd, Mat& y) {
    const Eigen::Index n = x.cols();
    x_hat.resize(x.rows(), n);
    rstd.resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().sum() / n;
        rstd(i) = 1.0 / std::sqrt(var + kLnEps);
        x_hat.row(i) = (x.row(i).array() - mean) * rstd(i);
    }
    y = (x_hat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

// Returns dL/dx and accumulates gain/bias gradients.
Mat layer_norm_backward(const Mat& dy, const Mat& x_hat, const Eigen::VectorXd& rstd, const Eigen::Ref<const Mat>& gain,
                        MatMap d_gain, MatMap d_bias) {
    d_gain.row(0) += (dy.array() * x_hat.array()).colwise().sum().matrix();
    d_bias.row(0) += dy.colwise().sum();
    const Mat dx_hat = dy.array().rowwise() * gain.row(0).array();
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double m1 = dx_hat.row(i).mean();
        const double m2 = (dx_hat.row(i).array() * x_hat.row(i).array()).mean();
        dx.row(i) = rstd(i) * (dx_hat.row(i).array() - m1 - x_hat.row(i).array() * m2);
    }
    return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u))); }

double gelu_grad(double u) {
    const double th = std::tanh(kGeluC * (u + kGeluA * u * u * u));
    return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

double silu(double a) { return a / (1.0 + std::exp(-a)); }

double silu_grad(double a) {
    const double s = 1.0 / (1.0 + std::exp(-a));
    return s * (1.0 + a * (1.0 - s));
}

RowVec time_features(double t, int dim) {
    const int half = dim / 2;
    RowVec f(dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        f(i) = std::sin(t * freq);
        f(half + i) = std::cos(t * freq);
    }
    return f;
}

void fill_normal(MatMap m, Rng& rng, double std) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
}

}  // namespace

Denoiser::Denoiser(const DenoiserConfig& config) : cfg_(config) {
    cfg_.validate();
    build();
}

Denoiser::Denoiser(const DenoiserConfig& config, Rng& rng) : Denoiser(config) {
    const int D = cfg_.d_model;
    auto linear = [&](int w) {
        auto m = params_.value(w);
        fill_normal(m, rng, 1.0 / std::sqrt(static_cast<double>(m.rows())));
    };
    linear(in_w_);
    fill_normal(params_.value(seg_), rng, 0.02);
    linear(t1_w_);
    linear(t2_w_);
    for (const auto& l : layers_) {
        params_.value(l.ln1_g).setOnes();
        params_.value(l.ln2_g).setOnes();
        linear(l.qkv_w);
        linear(l.ff1_w);
        // residual branches start small so the stack begins near identity
        fill_normal(params_.value(l.o_w), rng, 1.0 / std::sqrt(static_cast<double>(D * 2 * cfg_.n_layers)));
        fill_normal(params_.value(l.ff2_w), rng, 1.0 / std::sqrt(static_cast<double>(cfg_.d_ff * 2 * cfg_.n_layers)));
    }
    params_.value(lnf_g_).setOnes();
    linear(out_w_);
}

void Denoiser::build() {
    const int d = cfg_.latent_dim, D = cfg_.d_model, F = cfg_.d_ff, te = cfg_.time_embed_dim;
    in_w_ = params_.add("in.w", d, D);
    in_b_ = params_.add("in.b", 1, D);
    seg_ = params_.add("segment", 2, D);
    t1_w_ = params_.add("time1.w", te, D);
    t1_b_ = params_.add("time1.b", 1, D);
    t2_w_ = params_.add("time2.w", D, D);
    t2_b_ = params_.add("time2.b", 1, D);
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerIds ids{};
        ids.ln1_g = params_.add(p + "ln1.g", 1, D);
        ids.ln1_b = params_.add(p + "ln1.b", 1, D);
        ids.qkv_w = params_.add(p + "qkv.w", D, 3 * D);
        ids.qkv_b = params_.add(p + "qkv.b", 1, 3 * D);
        ids.o_w = params_.add(p + "attn_out.w", D, D);
        ids.o_b = params_.add(p + "attn_out.b", 1, D);
        ids.ln2_g = params_.add(p + "ln2.g", 1, D);
        ids.ln2_b = params_.add(p + "ln2.b", 1, D);
        ids.ff1_w = params_.add(p + "ff1.w", D, F);
        ids.ff1_b = params_.add(p + "ff1.b", 1, F);
        ids.ff2_w = params_.add(p + "ff2.w", F, D);
        ids.ff2_b = params_.add(p + "ff2.b", 1, D);
        layers_.push_back(ids);
    }
    lnf_g_ = params_.add("lnf.g", 1, D);
    lnf_b_ = params_.add("lnf.b", 1, D);
    out_w_ = params_.add("out.w", D, d);
    out_b_ = params_.add("out.b", 1, d);
}

std::size_t Denoiser::parameter_count(const DenoiserConfig& c) {
    const std::size_t d = c.latent_dim, D = c.d_model, F = c.d_ff, te = c.time_embed_dim;
    const std::size_t per_layer = 2 * D + (D * 3 * D + 3 * D) + (D * D + D) + 2 * D + (D * F + F) + (F * D + D);
    return (d * D + D) + 2 * D + (te * D + D) + (D * D + D) + c.n_layers * per_layer + 2 * D + (D * d + d);
}

Mat Denoiser::position_encoding(const Mask& condition) const {
    const int D = cfg_.d_model;
    const auto L = static_cast<Eigen::Index>(condition.size());
    Mat pe(L, D);
    int cond_idx = 0, trg_idx = 0;
    for (Eigen::Index i = 0; i < L; ++i) {
        const double p = condition[i] ? cond_idx++ : trg_idx++;
        for (int k = 0; k < D; k += 2) {
            const double freq = std::exp(-std::log(10000.0) * k / D);
            pe(i, k) = std::sin(p * freq);
            if (k + 1 < D) pe(i, k + 1) = std::cos(p * freq);
        }
    }
    return pe;
}

Mat Denoiser::forward(const Mat& z_hat, double t, const SequenceMasks& masks, Cache* cache) const {
    const int D = cfg_.d_model, H = cfg_.n_heads, dh = D / H;
    const Eigen::Index L = z_hat.rows();
    if (z_hat.cols() != cfg_.latent_dim) throw std::invalid_argument("denoiser: latent width mismatch");
    if (masks.condition.size() != static_cast<std::size_t>(L) || masks.valid.size() != static_cast<std::size_t>(L))
        throw std::invalid_argument("denoiser: mask length does not match sequence length");
    if (L > cfg_.max_len)
        throw std::invalid_argument("denoiser: sequence length " + std::to_string(L) + " exceeds max_len");

    Cache local;
    Cache& c = cache ? *cache : local;
    c.z = z_hat;
    c.condition = masks.condition;

    c.time_features = time_features(t, cfg_.time_embed_dim);
    c.time_pre = c.time_features * params_.value(t1_w_) + params_.value(t1_b_);
    c.time_act = c.time_pre.unaryExpr(&silu);
    const RowVec temb = c.time_act * params_.value(t2_w_) + params_.value(t2_b_);

    const auto seg = params_.value(seg_);
    Mat h = z_hat * params_.value(in_w_);
    h.rowwise() += params_.value(in_b_).row(0) + temb;
    h += position_encoding(masks.condition);
    for (Eigen::Index i = 0; i < L; ++i) h.row(i) += seg.row(masks.condition[i] ? 0 : 1);

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    c.layers.resize(cfg_.n_layers);
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const auto& ids = layers_[l];
        auto& lc = c.layers[l];
        lc.h_in = h;
        layer_norm(h, params_.value(ids.ln1_g), params_.value(ids.ln1_b), lc.ln1_hat, lc.ln1_rstd, lc.x1);
        lc.qkv = lc.x1 * params_.value(ids.qkv_w);
        lc.qkv.rowwise() += params_.value(ids.qkv_b).row(0);
        lc.heads_out.resize(L, D);
        lc.attn.resize(H);
        for (int hd = 0; hd < H; ++hd) {
            const auto Q = lc.qkv.middleCols(hd * dh, dh);
            const auto K = lc.qkv.middleCols(D + hd * dh, dh);
            const auto V = lc.qkv.middleCols(2 * D + hd * dh, dh);
            Mat S = (Q * K.transpose()) * scale;
            for (Eigen::Index i = 0; i < L; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (Eigen::Index j = 0; j < L; ++j)
                    if (masks.valid[j]) mx = std::max(mx, S(i, j));
                double sum = 0.0;
                for (Eigen::Index j = 0; j < L; ++j) {
                    S(i, j) = masks.valid[j] ? std::exp(S(i, j) - mx) : 0.0;
                    sum += S(i, j);
                }
                if (sum > 0.0) S.row(i) /= sum;
            }
            lc.heads_out.middleCols(hd * dh, dh) = S * V;
            lc.attn[hd] = std::move(S);
        }
        Mat attn_out = lc.heads_out * params_.value(ids.o_w);
        attn_out.rowwise() += params_.value(ids.o_b).row(0);
        h += attn_out;
        lc.h_mid = h;

        layer_norm(h, params_.value(ids.ln2_g), params_.value(ids.ln2_b), lc.ln2_hat, lc.ln2_rstd, lc.x2);
        lc.ff_pre = lc.x2 * params_.value(ids.ff1_w);
        lc.ff_pre.rowwise() += params_.value(ids.ff1_b).row(0);
        lc.ff_act = lc.ff_pre.unaryExpr(&gelu);
        Mat ff_out = lc.ff_act * params_.value(ids.ff2_w);
        ff_out.rowwise() += params_.value(ids.ff2_b).row(0);
        h += ff_out;
    }
    c.h_final = h;
    layer_norm(h, params_.value(lnf_g_), params_.value(lnf_b_), c.lnf_hat, c.lnf_rstd, c.xf);
    Mat out = c.xf * params_.value(out_w_);
    out.rowwise() += params_.value(out_b_).row(0);
    return out;
}

Mat Denoiser::backward(const Cache& c, const Mat& d_out) {
    const int D = cfg_.d_model, H = cfg_.n_heads, dh = D / H;
    const Eigen::Index L = c.z.rows();
    auto& P = params_;

    P.grad(out_w_).noalias() += c.xf.transpose() * d_out;
    P.grad(out_b_).row(0) += d_out.colwise().sum();
    Mat dh_ = layer_norm_backward(d_out * P.value(out_w_).transpose(), c.lnf_hat, c.lnf_rstd, P.value(lnf_g_),
                                  P.grad(lnf_g_), P.grad(lnf_b_));

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = cfg_.n_layers - 1; l >= 0; --l) {
        const auto& ids = layers_[l];
        const auto& lc = c.layers[l];

        // feed-forward branch
        P.grad(ids.ff2_w).noalias() += lc.ff_act.transpose() * dh_;
        P.grad(ids.ff2_b).row(0) += dh_.colwise().sum();
        Mat d_pre = dh_ * P.value(ids.ff2_w).transpose();
        d_pre.array() *= lc.ff_pre.unaryExpr(&gelu_grad).array();
        P.grad(ids.ff1_w).noalias() += lc.x2.transpose() * d_pre;
        P.grad(ids.ff1_b).row(0) += d_pre.colwise().sum();
        dh_ += layer_norm_backward(d_pre * P.value(ids.ff1_w).transpose(), lc.ln2_hat, lc.ln2_rstd,
                                   P.value(ids.ln2_g), P.grad(ids.ln2_g), P.grad(ids.ln2_b));

        // attention branch
        P.grad(ids.o_w).noalias() += lc.heads_out.transpose() * dh_;
        P.grad(ids.o_b).row(0) += dh_.colwise().sum();
        const Mat d_heads = dh_ * P.value(ids.o_w).transpose();
        Mat d_qkv(L, 3 * D);
        for (int hd = 0; hd < H; ++hd) {
            const auto Q = lc.qkv.middleCols(hd * dh, dh);
            const auto K = lc.qkv.middleCols(D + hd * dh, dh);
            const auto V = lc.qkv.middleCols(2 * D + hd * dh, dh);
            const Mat& A = lc.attn[hd];
            const auto dO = d_heads.middleCols(hd * dh, dh);
            const Mat dA = dO * V.transpose();
            d_qkv.middleCols(2 * D + hd * dh, dh).noalias() = A.transpose() * dO;
            Mat dS = A.array() * (dA.array().colwise() - (dA.array() * A.array()).rowwise().sum());
            dS *= scale;
            d_qkv.middleCols(hd * dh, dh).noalias() = dS * K;
            d_qkv.middleCols(D + hd * dh, dh).noalias() = dS.transpose() * Q;
        }
        P.grad(ids.qkv_w).noalias() += lc.x1.transpose() * d_qkv;
        P.grad(ids.qkv_b).row(0) += d_qkv.colwise().sum();
        dh_ += layer_norm_backward(d_qkv * P.value(ids.qkv_w).transpose(), lc.ln1_hat, lc.ln1_rstd,
                                   P.value(ids.ln1_g), P.grad(ids.ln1_g), P.grad(ids.ln1_b));
    }

    P.grad(in_w_).noalias() += c.z.transpose() * dh_;
    const RowVec d_bias = dh_.colwise().sum();
    P.grad(in_b_).row(0) += d_bias;
    auto d_seg = P.grad(seg_);
    for (Eigen::Index i = 0; i < L; ++i) d_seg.row(c.condition[i] ? 0 : 1) += dh_.row(i);

    // the time embedding is broadcast to every position
    P.grad(t2_w_).noalias() += c.time_act.transpose() * d_bias;
    P.grad(t2_b_).row(0) += d_bias;
    RowVec d_act = d_bias * P.value(t2_w_).transpose();
    d_act.array() *= c.time_pre.unaryExpr(&silu_grad).array();
    P.grad(t1_w_).noalias() += c.time_features.transpose() * d_act;
    P.grad(t1_b_).row(0) += d_act;

    return dh_ * P.value(in_w_).transpose();
}

std::vector<Mat> predict_z0(const Denoiser& denoiser, const std::vector<Mat>& z_hat, std::span<const double> t,
                            const std::vector<SequenceMasks>& masks) {
    if (t.size() != z_hat.size() || masks.size() != z_hat.size())
        throw std::invalid_argument("predict_z0: batch size mismatch between latents, timesteps and masks");
    std::vector<Mat> out;
    out.reserve(z_hat.size());
    for (std::size_t b = 0; b < z_hat.size(); ++b) out.push_back(denoiser.forward(z_hat[b], t[b], masks[b]));
    return out;
}

GradCheckResult grad_check(const std::vector<Parameters*>& params, const std::function<double()>& loss_and_grad,
                           double eps, double floor) {
    loss_and_grad();
    std::vector<std::vector<double>> analytic;
    for (auto* p : params) analytic.emplace_back(p->grads().begin(), p->grads().end());

    GradCheckResult res;
    std::size_t flat = 0;
    for (std::size_t s = 0; s < params.size(); ++s) {
        auto values = params[s]->values();
        for (std::size_t i = 0; i < values.size(); ++i, ++flat) {
            const double saved = values[i];
            values[i] = saved + eps;
            const double up = loss_and_grad();
            values[i] = saved - eps;
            const double down = loss_and_grad();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[s][i];
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
            if (rel > res.max_rel_error) {
                res.max_rel_error = rel;
                res.worst_index = flat;
                res.worst_analytic = a;
                res.worst_numeric = numeric;
            }
            res.max_abs_error = std::max(res.max_abs_error, abs_err);
            ++res.checked;
        }
    }
    // leave the gradients describing the unperturbed parameters
    loss_and_grad();
    return res;
}

}  // namespace textdiff
