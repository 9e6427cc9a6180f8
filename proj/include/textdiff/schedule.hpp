#pragma once

#include <iosfwd>
#include <vector>

namespace textdiff {

// Sqrt noise schedule: raw alpha_bar(t) = 1 - sqrt(t/T + s), with per-step
// betas clipped from above and alpha_bar rebuilt from the clipped betas.
// beta is indexed 1..T (beta[0] is unused and set to 0).
class NoiseSchedule {
public:
    NoiseSchedule(int T, double s, double beta_clip_max);

    int steps() const { return T_; }
    double offset() const { return s_; }
    double beta_clip_max() const { return clip_; }

    double beta(int t) const;
    double alpha_bar(int t) const;
    const std::vector<double>& betas() const { return beta_; }
    const std::vector<double>& alpha_bars() const { return alpha_bar_; }

    // Signal coefficient sqrt(alpha_bar[t]).
    double alpha_hat(int t) const;
    // Noise coefficient sqrt(1 - alpha_bar[t]).
    double sigma(int t) const;
    // Half log-SNR ln(alpha_hat / sigma); strictly decreasing in t.
    double lambda(int t) const;

    struct PosteriorCoeffs {
        double c_zt;
        double c_z0;
        double var;
    };
    // Mean coefficients and variance of q(z_{t-1} | z_t, z_0).
    PosteriorCoeffs posterior(int t) const;
    // Same quantities between two arbitrary levels from > to (respaced steps).
    PosteriorCoeffs posterior_between(int from, int to) const;

    // CSV rows (t, beta, alpha_bar, sigma, lambda).
    void write_csv(std::ostream& os) const;

private:
    void check_t(int t) const;

    int T_;
    double s_;
    double clip_;
    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
};

NoiseSchedule build_sqrt_schedule(int T, double s = 1e-4, double beta_clip_max = 0.999);

// Posterior coefficients directly from the two cumulative products.
NoiseSchedule::PosteriorCoeffs posterior_from_alpha_bars(double alpha_bar_prev, double alpha_bar_t);

enum class Spacing { even, lambda };

// Decreasing list of timesteps from T to 0 used by respaced samplers.
struct TimestepGrid {
    std::vector<int> steps;
    int count() const { return static_cast<int>(steps.size()) - 1; }
};

TimestepGrid respace(const NoiseSchedule& sched, int count, Spacing spacing = Spacing::even);

}  // namespace textdiff
