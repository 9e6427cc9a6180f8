#include "textdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

namespace textdiff {

NoiseSchedule::NoiseSchedule(int T, double s, double beta_clip_max) : T_(T), s_(s), clip_(beta_clip_max) {
    if (T < 1) throw std::invalid_argument("schedule: T must be >= 1");
    if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("schedule: s must lie in (0, 1)");
    if (!(beta_clip_max > 0.0 && beta_clip_max < 1.0))
        throw std::invalid_argument("schedule: beta_clip_max must lie in (0, 1)");

    auto raw = [&](int t) { return 1.0 - std::sqrt(static_cast<double>(t) / T + s); };

    beta_.assign(T + 1, 0.0);
    alpha_bar_.assign(T + 1, 0.0);
    alpha_bar_[0] = raw(0);
    double prev_raw = raw(0);
    for (int t = 1; t <= T; ++t) {
        const double cur_raw = raw(t);
        double b = (cur_raw > 0.0 && prev_raw > 0.0) ? 1.0 - cur_raw / prev_raw : clip_;
        b = std::min(b, clip_);
        if (!(b > 0.0)) throw std::logic_error("schedule: non-positive beta at t=" + std::to_string(t));
        beta_[t] = b;
        alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - b);
        prev_raw = cur_raw;
    }
}

void NoiseSchedule::check_t(int t) const {
    if (t < 0 || t > T_) throw std::out_of_range("schedule: timestep " + std::to_string(t) + " outside [0, T]");
}

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > T_) throw std::out_of_range("schedule: beta index " + std::to_string(t) + " outside [1, T]");
    return beta_[t];
}

double NoiseSchedule::alpha_bar(int t) const {
    check_t(t);
    return alpha_bar_[t];
}

double NoiseSchedule::alpha_hat(int t) const { return std::sqrt(alpha_bar(t)); }

double NoiseSchedule::sigma(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

double NoiseSchedule::lambda(int t) const {
    const double ab = alpha_bar(t);
    if (!(ab > 0.0 && ab < 1.0)) throw std::domain_error("schedule: lambda undefined where alpha_bar is 0 or 1");
    return 0.5 * (std::log(ab) - std::log1p(-ab));
}

NoiseSchedule::PosteriorCoeffs posterior_from_alpha_bars(double alpha_bar_prev, double alpha_bar_t) {
    if (!(alpha_bar_t < alpha_bar_prev))
        throw std::invalid_argument("posterior: alpha_bar must strictly decrease (beta > 0)");
    if (!(alpha_bar_t > 0.0 && alpha_bar_prev <= 1.0)) throw std::invalid_argument("posterior: alpha_bar out of range");
    const double alpha = alpha_bar_t / alpha_bar_prev;
    const double beta = 1.0 - alpha;
    const double denom = 1.0 - alpha_bar_t;
    return {std::sqrt(alpha) * (1.0 - alpha_bar_prev) / denom, std::sqrt(alpha_bar_prev) * beta / denom,
            beta * (1.0 - alpha_bar_prev) / denom};
}

NoiseSchedule::PosteriorCoeffs NoiseSchedule::posterior(int t) const {
    if (t < 1 || t > T_) throw std::out_of_range("posterior: t must lie in [1, T]");
    return posterior_between(t, t - 1);
}

NoiseSchedule::PosteriorCoeffs NoiseSchedule::posterior_between(int from, int to) const {
    check_t(from);
    check_t(to);
    if (!(to < from)) throw std::invalid_argument("posterior: target level must be below source level");
    return posterior_from_alpha_bars(alpha_bar_[to], alpha_bar_[from]);
}

void NoiseSchedule::write_csv(std::ostream& os) const {
    os << "t,beta,alpha_bar,sigma,lambda\n";
    os.precision(17);
    for (int t = 0; t <= T_; ++t) {
        os << t << ',' << beta_[t] << ',' << alpha_bar_[t] << ',' << sigma(t) << ',' << lambda(t) << '\n';
    }
}

NoiseSchedule build_sqrt_schedule(int T, double s, double beta_clip_max) { return NoiseSchedule(T, s, beta_clip_max); }

TimestepGrid respace(const NoiseSchedule& sched, int count, Spacing spacing) {
    const int T = sched.steps();
    if (count < 1 || count > T)
        throw std::invalid_argument("respace: count must lie in [1, T], got " + std::to_string(count));

    TimestepGrid grid;
    grid.steps.resize(count + 1);
    if (spacing == Spacing::even) {
        for (int k = 0; k <= count; ++k) {
            grid.steps[k] = static_cast<int>(std::lround(T * (1.0 - static_cast<double>(k) / count)));
        }
    } else {
        // Nearest integer t to lambda-uniform targets, kept strictly decreasing
        // with enough room left for the remaining points.
        const double lo = sched.lambda(T);
        const double hi = sched.lambda(0);
        grid.steps[0] = T;
        for (int k = 1; k <= count; ++k) {
            const double target = lo + (hi - lo) * k / count;
            int best = 0;
            double best_gap = std::abs(sched.lambda(0) - target);
            for (int t = 1; t <= T; ++t) {
                const double gap = std::abs(sched.lambda(t) - target);
                if (gap < best_gap) {
                    best_gap = gap;
                    best = t;
                }
            }
            const int upper = grid.steps[k - 1] - 1;
            const int lower = count - k;
            grid.steps[k] = std::clamp(best, lower, upper);
        }
    }
    grid.steps.front() = T;
    grid.steps.back() = 0;
    for (int k = 1; k <= count; ++k) {
        if (grid.steps[k] >= grid.steps[k - 1]) throw std::logic_error("respace: grid not strictly decreasing");
    }
    return grid;
}

}  // namespace textdiff
