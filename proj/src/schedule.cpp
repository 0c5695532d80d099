#include "causalvid/schedule.hpp"

#include <cmath>
#include <string>

namespace causalvid {

namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ContractError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()) + ")");
    }
}

}  // namespace

void Schedule::check_step(int t) const {
    if (t < 1 || t > T) {
        throw ContractError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
    }
}

double Schedule::posterior_log_var_clipped(int t) const {
    check_step(t);
    if (t > 1) {
        return std::log(posterior_var(t));
    }
    return T > 1 ? std::log(posterior_var(2)) : std::log(beta(1));
}

Schedule make_schedule(int T, double beta1, double betaT, int num_ddim_steps) {
    require_config(T >= 1, "T must be positive (got " + std::to_string(T) + ")");
    require_config(beta1 > 0.0 && beta1 < 1.0, "beta1 must lie in (0, 1)");
    require_config(betaT > 0.0 && betaT < 1.0, "betaT must lie in (0, 1)");
    require_config(beta1 <= betaT, "beta1 must not exceed betaT");
    require_config(num_ddim_steps >= 1, "num_ddim_steps must be positive");
    require_config(num_ddim_steps <= T, "num_ddim_steps must not exceed T");

    Schedule s;
    s.T = T;
    s.betas.resize(T);
    s.alphas.resize(T);
    s.alpha_bars.resize(T);
    s.posterior_vars.resize(T);

    double running = 1.0;
    for (int i = 0; i < T; ++i) {
        const double beta = T == 1 ? beta1 : beta1 + i * (betaT - beta1) / (T - 1);
        s.betas[i] = beta;
        s.alphas[i] = 1.0 - beta;
        const double prev = running;
        running *= s.alphas[i];
        s.alpha_bars[i] = running;
        s.posterior_vars[i] = beta * (1.0 - prev) / (1.0 - running);
    }

    s.ddim_steps.resize(num_ddim_steps);
    for (int i = 0; i < num_ddim_steps; ++i) {
        s.ddim_steps[i] = static_cast<int>((static_cast<long long>(i) + 1) * T / num_ddim_steps);
    }
    return s;
}

Mat q_sample(const Mat& z0, int t, const Mat& eps, const Schedule& s) {
    require_same_shape(z0, eps, "q_sample");
    s.check_step(t);
    const double ab = s.alpha_bar(t);
    return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

GaussianMoments ddpm_posterior(const NoisePrediction& pred, const Mat& z_t, int t, const Schedule& s) {
    require_same_shape(pred.eps, z_t, "ddpm_posterior eps");
    require_same_shape(pred.v, z_t, "ddpm_posterior v");
    s.check_step(t);

    const double beta = s.beta(t);
    const double coef = beta / std::sqrt(1.0 - s.alpha_bar(t));
    GaussianMoments out;
    out.mean = (z_t - coef * pred.eps) / std::sqrt(s.alpha(t));

    const double log_beta = std::log(beta);
    const double log_tilde = s.posterior_log_var_clipped(t);
    out.variance = pred.v.unaryExpr([&](double raw) {
        const double v = covariance_fraction(raw);
        if (v == 0.0 && t > 1) {
            return s.posterior_var(t);
        }
        if (v == 1.0) {
            return beta;
        }
        return std::exp(v * log_beta + (1.0 - v) * log_tilde);
    });
    return out;
}

GaussianMoments q_posterior(const Mat& z0, const Mat& z_t, int t, const Schedule& s) {
    require_same_shape(z0, z_t, "q_posterior");
    s.check_step(t);
    const double ab = s.alpha_bar(t);
    const double ab_prev = s.alpha_bar(t - 1);
    const double c0 = std::sqrt(ab_prev) * s.beta(t) / (1.0 - ab);
    const double ct = std::sqrt(s.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
    GaussianMoments out;
    out.mean = c0 * z0 + ct * z_t;
    out.variance = Mat::Constant(z0.rows(), z0.cols(), std::exp(s.posterior_log_var_clipped(t)));
    return out;
}

Mat ddim_step(const Mat& pred_eps, const Mat& z_t, int t, int t_prev, const Schedule& s) {
    require_same_shape(pred_eps, z_t, "ddim_step");
    s.check_step(t);
    if (t_prev < 0 || t_prev >= t) {
        throw ContractError("ddim_step requires 0 <= t_prev < t (got t=" + std::to_string(t) +
                            ", t_prev=" + std::to_string(t_prev) + ")");
    }
    const double ab = s.alpha_bar(t);
    const double ab_prev = s.alpha_bar(t_prev);
    Mat z0_hat = (z_t - std::sqrt(1.0 - ab) * pred_eps) / std::sqrt(ab);
    z0_hat = z0_hat.cwiseMax(-1.0).cwiseMin(1.0);
    if (t_prev == 0) {
        return z0_hat;
    }
    return std::sqrt(ab_prev) * z0_hat + std::sqrt(1.0 - ab_prev) * pred_eps;
}

double gaussian_kl(double mu_q, double var_q, double mu_p, double var_p) {
    const double d = mu_q - mu_p;
    return 0.5 * (std::log(var_p) - std::log(var_q) + (var_q + d * d) / var_p - 1.0);
}

std::vector<double> vlb_rows(const NoisePrediction& pred, const Mat& z0, const Mat& z_t, int t,
                             const Schedule& s, Mat* d_v_raw_sum) {
    require_same_shape(pred.eps, z_t, "vlb eps");
    require_same_shape(pred.v, z_t, "vlb v");
    require_same_shape(z0, z_t, "vlb z0");
    s.check_step(t);

    const GaussianMoments q = q_posterior(z0, z_t, t, s);
    // Model mean is a constant here; its gradient path is cut.
    const double beta = s.beta(t);
    const double mean_coef = beta / std::sqrt(1.0 - s.alpha_bar(t));
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
    const double log_beta = std::log(beta);
    const double log_tilde = s.posterior_log_var_clipped(t);
    const double log_var_q = log_tilde;
    const double var_q = std::exp(log_tilde);

    if (d_v_raw_sum) {
        d_v_raw_sum->setZero(z_t.rows(), z_t.cols());
    }
    std::vector<double> rows(static_cast<size_t>(z_t.rows()), 0.0);
    for (Eigen::Index r = 0; r < z_t.rows(); ++r) {
        double acc = 0.0;
        for (Eigen::Index c = 0; c < z_t.cols(); ++c) {
            const double mu_p = (z_t(r, c) - mean_coef * pred.eps(r, c)) * inv_sqrt_alpha;
            const double raw = pred.v(r, c);
            const double frac = covariance_fraction(raw);
            const double log_var_p = frac * log_beta + (1.0 - frac) * log_tilde;
            const double d = q.mean(r, c) - mu_p;
            const double ratio = (var_q + d * d) * std::exp(-log_var_p);
            acc += 0.5 * (log_var_p - log_var_q + ratio - 1.0);
            if (d_v_raw_sum) {
                const double inside = 0.5 * (raw + 1.0);
                const double dfrac = (inside > 0.0 && inside < 1.0) ? 0.5 : 0.0;
                (*d_v_raw_sum)(r, c) = 0.5 * (1.0 - ratio) * (log_beta - log_tilde) * dfrac;
            }
        }
        rows[static_cast<size_t>(r)] = acc;
    }
    return rows;
}

double vlb_term(const NoisePrediction& pred, const Mat& z0, const Mat& z_t, int t, const Schedule& s,
                Mat* d_v_raw) {
    const auto rows = vlb_rows(pred, z0, z_t, t, s, d_v_raw);
    double total = 0.0;
    for (double r : rows) {
        total += r;
    }
    const double count = static_cast<double>(z_t.size());
    if (d_v_raw) {
        *d_v_raw /= count;
    }
    return total / count;
}

Mat cfg_combine(const Mat& eps_cond, const Mat& eps_uncond, double scale) {
    require_same_shape(eps_cond, eps_uncond, "cfg_combine");
    return eps_uncond + scale * (eps_cond - eps_uncond);
}

}  // namespace causalvid
