#pragma once

#include "causalvid/common.hpp"

#include <vector>

namespace causalvid {

// Diffusion constants for a linear beta schedule. Step indices are 1-based
// (t = 1..T); alpha_bar(0) is defined as 1.
struct Schedule {
    int T = 0;
    std::vector<double> betas;           // betas[t-1] = beta_t
    std::vector<double> alphas;          // 1 - beta_t
    std::vector<double> alpha_bars;      // prod_{i<=t} alpha_i
    std::vector<double> posterior_vars;  // beta~_t; zero at t = 1
    std::vector<int> ddim_steps;         // strictly increasing, ends at T

    double beta(int t) const { return betas.at(t - 1); }
    double alpha(int t) const { return alphas.at(t - 1); }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars.at(t - 1); }
    double posterior_var(int t) const { return posterior_vars.at(t - 1); }

    // log(beta~_t) with the t = 1 entry replaced by beta~_2 (or beta_1 when
    // T = 1) so the log stays finite.
    double posterior_log_var_clipped(int t) const;

    void check_step(int t) const;
};

Schedule make_schedule(int T, double beta1, double betaT, int num_ddim_steps);

// Predicted noise plus the raw covariance interpolation output.
struct NoisePrediction {
    Mat eps;
    Mat v;
};

// Affine map of the raw covariance output into [0, 1].
inline double covariance_fraction(double v_raw) {
    const double v = 0.5 * (v_raw + 1.0);
    return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

Mat q_sample(const Mat& z0, int t, const Mat& eps, const Schedule& s);

struct GaussianMoments {
    Mat mean;
    Mat variance;
};

// Reverse-process moments p(z_{t-1} | z_t) implied by a noise prediction.
GaussianMoments ddpm_posterior(const NoisePrediction& pred, const Mat& z_t, int t, const Schedule& s);

// True forward-process posterior q(z_{t-1} | z_t, z0). The variance is the
// clipped one (see posterior_log_var_clipped).
GaussianMoments q_posterior(const Mat& z0, const Mat& z_t, int t, const Schedule& s);

// Deterministic DDIM update from t to t_prev (t_prev = 0 returns the
// clamped clean estimate).
Mat ddim_step(const Mat& pred_eps, const Mat& z_t, int t, int t_prev, const Schedule& s);

// KL(N(mu_q, var_q) || N(mu_p, var_p)) in nats.
double gaussian_kl(double mu_q, double var_q, double mu_p, double var_p);

// Mean per-element KL between q(z_{t-1}|z_t,z0) and p_theta. The mean of
// p_theta is treated as a constant: only the covariance head receives
// gradient. When d_v_raw is non-null it receives dKL/dv_raw (already
// divided by the element count).
double vlb_term(const NoisePrediction& pred, const Mat& z0, const Mat& z_t, int t, const Schedule& s,
                Mat* d_v_raw = nullptr);

// Per-row variant used by the masked training objective: returns the
// summed KL of each row and optionally the un-normalised gradient.
std::vector<double> vlb_rows(const NoisePrediction& pred, const Mat& z0, const Mat& z_t, int t,
                             const Schedule& s, Mat* d_v_raw_sum = nullptr);

Mat cfg_combine(const Mat& eps_cond, const Mat& eps_uncond, double scale);

}  // namespace causalvid
