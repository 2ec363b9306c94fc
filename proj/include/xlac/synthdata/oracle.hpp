#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "xlac/numerics/matrix.hpp"
#include "xlac/numerics/rng.hpp"
#include "xlac/synthdata/generator.hpp"

namespace xlac {

struct OracleEstimate {
  double error = 0.0;      // fraction in [0, 1]
  double std_error = 0.0;  // binomial standard error of the estimate
  std::size_t samples = 0;
};

namespace detail {

/// In-place lower Cholesky factor of a symmetric positive-definite matrix.
inline void cholesky(Matrix& m) {
  const std::size_t n = m.rows();
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= m(j, k) * m(j, k);
    if (!(d > 0)) fail(ErrorKind::numeric, "cholesky: matrix not positive definite");
    const double l = std::sqrt(d);
    m(j, j) = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= m(i, k) * m(j, k);
      m(i, j) = s / l;
    }
    for (std::size_t k = j + 1; k < n; ++k) m(j, k) = 0.0;
  }
}

/// log N(x; mean, L L^T) up to the shared -n/2 log(2 pi) constant.
inline double gaussian_log_density(std::span<const double> x, std::span<const double> mean,
                                   const Matrix& chol, std::vector<double>& work) {
  const std::size_t n = x.size();
  work.resize(n);
  double logdet = 0.0, quad = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = x[i] - mean[i];
    for (std::size_t k = 0; k < i; ++k) s -= chol(i, k) * work[k];
    work[i] = s / chol(i, i);
    quad += work[i] * work[i];
    logdet += std::log(chol(i, i));
  }
  return -0.5 * quad - logdet;
}

}  // namespace detail

/// Monte-Carlo estimate of the frame-level Bayes error: frames are drawn from
/// the generative model (class from the prior, per-sample gain, latent,
/// channel, noise) and classified by the true class-conditional likelihoods
/// given the gain. With zero noise the features determine the latent vector
/// exactly, so classification happens in latent space.
inline OracleEstimate bayes_oracle_error(const LanguageSpec& lang, const DomainSpec& domain,
                                         std::size_t n_samples, Rng rng) {
  if (n_samples < 10000) fail(ErrorKind::config, "bayes_oracle_error: n_samples must be >= 1e4");
  const Matrix a = domain_projection(lang, domain);  // F x L
  const std::size_t f = lang.feature_dim, l = lang.latent_dim, c_count = lang.senone_count;
  const double sigma2 = domain.noise_std * domain.noise_std;
  const bool fixed_gain = domain.gain_min == domain.gain_max;

  std::vector<double> log_prior(c_count);
  for (std::size_t c = 0; c < c_count; ++c) log_prior[c] = std::log(lang.class_prior[c]);

  // B_c = A diag(v_c) A^T
  std::vector<Matrix> b(c_count, Matrix(f, f));
  for (std::size_t c = 0; c < c_count; ++c)
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < l; ++k) s += a(i, k) * lang.class_vars(c, k) * a(j, k);
        b[c](i, j) = b[c](j, i) = s;
      }

  // Least-squares pseudo-inverse (A^T A)^{-1} A^T for the noiseless case.
  Matrix pinv;
  if (sigma2 == 0.0) {
    Matrix ata(l, l);
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j < l; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < f; ++k) s += a(k, i) * a(k, j);
        ata(i, j) = s;
      }
    detail::cholesky(ata);
    pinv = Matrix(l, f);
    std::vector<double> col(l);
    for (std::size_t k = 0; k < f; ++k) {
      for (std::size_t i = 0; i < l; ++i) col[i] = a(k, i);
      for (std::size_t i = 0; i < l; ++i) {  // forward
        for (std::size_t j = 0; j < i; ++j) col[i] -= ata(i, j) * col[j];
        col[i] /= ata(i, i);
      }
      for (std::size_t i = l; i-- > 0;) {  // backward with L^T
        for (std::size_t j = i + 1; j < l; ++j) col[i] -= ata(j, i) * col[j];
        col[i] /= ata(i, i);
      }
      for (std::size_t i = 0; i < l; ++i) pinv(i, k) = col[i];
    }
  }

  auto factor_for_gain = [&](double g) {
    std::vector<Matrix> chol(c_count);
    for (std::size_t c = 0; c < c_count; ++c) {
      chol[c] = b[c];
      for (double& v : chol[c].data()) v *= g * g;
      for (std::size_t i = 0; i < f; ++i) chol[c](i, i) += sigma2;
      detail::cholesky(chol[c]);
    }
    return chol;
  };
  std::vector<Matrix> chol;
  if (sigma2 > 0.0 && fixed_gain) chol = factor_for_gain(domain.gain_min);

  std::vector<double> z(l), x(f), mean(f), work;
  std::size_t errors = 0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const std::uint32_t truth = draw_from_prior(rng, lang.class_prior);
    const double g = fixed_gain ? domain.gain_min : rng.uniform(domain.gain_min, domain.gain_max);
    for (std::size_t j = 0; j < l; ++j)
      z[j] = lang.class_means(truth, j) + std::sqrt(lang.class_vars(truth, j)) * rng.normal();
    for (std::size_t i = 0; i < f; ++i) {
      double v = 0.0;
      for (std::size_t j = 0; j < l; ++j) v += a(i, j) * z[j];
      x[i] = g * v;
    }
    if (sigma2 > 0.0)
      for (std::size_t i = 0; i < f; ++i) x[i] += domain.noise_std * rng.normal();

    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    if (sigma2 == 0.0) {
      for (std::size_t i = 0; i < l; ++i) {
        double v = 0.0;
        for (std::size_t k = 0; k < f; ++k) v += pinv(i, k) * x[k];
        z[i] = v / g;
      }
      for (std::size_t c = 0; c < c_count; ++c) {
        double score = log_prior[c];
        for (std::size_t j = 0; j < l; ++j) {
          const double d = z[j] - lang.class_means(c, j);
          score -= 0.5 * (d * d / lang.class_vars(c, j) + std::log(lang.class_vars(c, j)));
        }
        if (score > best_score) {
          best_score = score;
          best = c;
        }
      }
    } else {
      if (!fixed_gain) chol = factor_for_gain(g);
      for (std::size_t c = 0; c < c_count; ++c) {
        for (std::size_t i = 0; i < f; ++i) {
          double v = 0.0;
          for (std::size_t j = 0; j < l; ++j) v += a(i, j) * lang.class_means(c, j);
          mean[i] = g * v;
        }
        const double score = log_prior[c] + detail::gaussian_log_density(x, mean, chol[c], work);
        if (score > best_score) {
          best_score = score;
          best = c;
        }
      }
    }
    if (best != truth) ++errors;
  }
  OracleEstimate est;
  est.samples = n_samples;
  est.error = static_cast<double>(errors) / static_cast<double>(n_samples);
  est.std_error = std::sqrt(std::max(est.error * (1.0 - est.error), 1e-12) / static_cast<double>(n_samples));
  return est;
}

}  // namespace xlac
