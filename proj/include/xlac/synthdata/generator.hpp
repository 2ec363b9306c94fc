#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "xlac/numerics/matrix.hpp"
#include "xlac/numerics/rng.hpp"
#include "xlac/synthdata/corpus.hpp"

namespace xlac {

struct LanguageShape {
  std::size_t senones = 40;
  std::size_t latent_dim = 8;
  std::size_t feature_dim = 16;
  double mean_scale = 1.0;  // stddev of class-mean coordinates
  double var_min = 0.5;     // class variances are uniform in [var_min, var_max]
  double var_max = 1.0;
};

struct Similarity {
  std::string base;
  double alpha = 0.0;
};

/// Class-conditional Gaussian model of one synthetic language. A latent
/// vector z ~ N(class_means[c], diag(class_vars[c])) is projected into
/// feature space by mixing_map^T.
struct LanguageSpec {
  std::string name;
  std::size_t senone_count = 0;
  std::size_t latent_dim = 0;
  std::size_t feature_dim = 0;
  Matrix class_means;  // senones x latent
  Matrix class_vars;   // senones x latent, all > 0
  Matrix mixing_map;   // latent x feature, orthonormal rows
  std::vector<double> class_prior;
  std::vector<std::uint32_t> base_class;  // class of the base language each class is tied to
  std::optional<Similarity> similarity_to;
};

/// Per-domain rendering: x = gain * channel * (mixing_map^T z) + noise_std * eps,
/// with gain drawn once per utterance from [gain_min, gain_max].
struct DomainSpec {
  std::string name;
  Matrix channel;  // feature x feature
  double noise_std = 0.0;
  double gain_min = 1.0;
  double gain_max = 1.0;

  void validate(std::size_t feature_dim) const {
    if (channel.rows() != feature_dim || channel.cols() != feature_dim)
      fail(ErrorKind::config, "domain " + name + ": channel " + channel.shape_string() +
                                  " for feature_dim " + std::to_string(feature_dim));
    if (!all_finite(channel.data())) fail(ErrorKind::config, "domain " + name + ": non-finite channel");
    if (!(noise_std >= 0)) fail(ErrorKind::config, "domain " + name + ": noise_std must be >= 0");
    if (!(gain_min > 0 && gain_max >= gain_min))
      fail(ErrorKind::config, "domain " + name + ": invalid gain range");
  }
};

namespace detail {

/// Orthonormalizes the rows of m in place (modified Gram-Schmidt).
inline void orthonormalize_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto ri = m.row(i);
    for (std::size_t j = 0; j < i; ++j) {
      auto rj = m.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < ri.size(); ++k) dot += ri[k] * rj[k];
      for (std::size_t k = 0; k < ri.size(); ++k) ri[k] -= dot * rj[k];
    }
    const double norm = std::sqrt(squared_norm(ri));
    if (norm < 1e-10) fail(ErrorKind::config, "orthonormalize_rows: rank deficient");
    for (double& v : ri) v /= norm;
  }
}

}  // namespace detail

inline Matrix identity_channel(std::size_t feature_dim) { return Matrix::identity(feature_dim); }

/// Orthogonal channel close to the identity for small `strength`: the rows of
/// I + strength * G (G standard normal) orthonormalized. Being orthogonal it
/// preserves Gaussian class overlap under isotropic noise.
inline Matrix orthogonal_channel(Rng rng, std::size_t feature_dim, double strength) {
  Matrix m = Matrix::identity(feature_dim);
  for (double& v : m.data()) v += strength * rng.normal();
  detail::orthonormalize_rows(m);
  return m;
}

inline Matrix diagonal_channel(const std::vector<double>& gains) {
  Matrix m(gains.size(), gains.size());
  for (std::size_t i = 0; i < gains.size(); ++i) m(i, i) = gains[i];
  return m;
}

/// Draws a language. Without a base every parameter is independent. With a
/// base, each class is tied to a distinct base class (random injection when
/// possible) and its mean and variances are interpolated toward that class
/// with weight alpha. The mixing map is always a fresh draw unless
/// `share_mixing_map` is set.
inline LanguageSpec make_language(Rng rng, std::string name, const LanguageShape& shape,
                                  const LanguageSpec* base = nullptr, double alpha = 0.0,
                                  bool share_mixing_map = false) {
  if (base && !(alpha >= 0.0 && alpha <= 1.0))
    fail(ErrorKind::config, "make_language: alpha " + std::to_string(alpha) + " outside [0,1]");
  if (shape.senones == 0 || shape.latent_dim == 0 || shape.feature_dim == 0)
    fail(ErrorKind::config, "make_language: dimensions must be positive");
  if (shape.latent_dim > shape.feature_dim)
    fail(ErrorKind::config, "make_language: latent_dim exceeds feature_dim");
  if (!(shape.var_min > 0 && shape.var_max >= shape.var_min))
    fail(ErrorKind::config, "make_language: invalid variance range");
  if (base && (base->latent_dim != shape.latent_dim || base->feature_dim != shape.feature_dim))
    fail(ErrorKind::config, "make_language: base language has different dimensions");

  LanguageSpec lang;
  lang.name = std::move(name);
  lang.senone_count = shape.senones;
  lang.latent_dim = shape.latent_dim;
  lang.feature_dim = shape.feature_dim;
  lang.class_prior.assign(shape.senones, 1.0 / static_cast<double>(shape.senones));

  Rng mean_rng = rng.derive("means");
  Rng var_rng = rng.derive("vars");
  lang.class_means = Matrix(shape.senones, shape.latent_dim);
  lang.class_vars = Matrix(shape.senones, shape.latent_dim);
  for (double& v : lang.class_means.data()) v = shape.mean_scale * mean_rng.normal();
  for (double& v : lang.class_vars.data()) v = var_rng.uniform(shape.var_min, shape.var_max);

  if (base) {
    lang.similarity_to = Similarity{base->name, alpha};
    Rng map_rng = rng.derive("class_map");
    std::vector<std::uint32_t> pool(base->senone_count);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<std::uint32_t>(i);
    map_rng.shuffle(std::span<std::uint32_t>(pool));
    lang.base_class.resize(shape.senones);
    for (std::size_t c = 0; c < shape.senones; ++c)
      lang.base_class[c] = c < pool.size() ? pool[c]
                                           : static_cast<std::uint32_t>(map_rng.below(pool.size()));
    for (std::size_t c = 0; c < shape.senones; ++c) {
      const std::size_t b = lang.base_class[c];
      for (std::size_t j = 0; j < shape.latent_dim; ++j) {
        lang.class_means(c, j) = alpha * base->class_means(b, j) + (1.0 - alpha) * lang.class_means(c, j);
        lang.class_vars(c, j) = alpha * base->class_vars(b, j) + (1.0 - alpha) * lang.class_vars(c, j);
      }
    }
  }

  if (base && share_mixing_map) {
    lang.mixing_map = base->mixing_map;
  } else {
    Rng mix_rng = rng.derive("mixing_map");
    lang.mixing_map = Matrix(shape.latent_dim, shape.feature_dim);
    for (double& v : lang.mixing_map.data()) v = mix_rng.normal();
    detail::orthonormalize_rows(lang.mixing_map);
  }
  return lang;
}

/// Projection from latent to feature space for one domain: channel * mixing_map^T.
inline Matrix domain_projection(const LanguageSpec& lang, const DomainSpec& domain) {
  domain.validate(lang.feature_dim);
  const std::size_t f = lang.feature_dim, l = lang.latent_dim;
  Matrix a(f, l);
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t j = 0; j < l; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < f; ++k) s += domain.channel(i, k) * lang.mixing_map(j, k);
      a(i, j) = s;
    }
  return a;
}

struct LatentUtterance {
  std::vector<std::uint32_t> labels;
  Matrix latent;  // T x latent_dim
};

inline std::uint32_t draw_from_prior(Rng& rng, const std::vector<double>& prior) {
  double u = rng.uniform();
  for (std::size_t c = 0; c + 1 < prior.size(); ++c) {
    if (u < prior[c]) return static_cast<std::uint32_t>(c);
    u -= prior[c];
  }
  return static_cast<std::uint32_t>(prior.size() - 1);
}

struct CorpusBudget {
  std::size_t frames = 0;
  double mean_utt_len = 100.0;
  double self_loop = 0.8;
};

/// Samples per-frame classes from a first-order Markov chain that stays with
/// probability self_loop and otherwise redraws from the class prior (so the
/// prior is the stationary distribution), then latent vectors per frame.
/// Utterance lengths are uniform in [mean/2, 3*mean/2]; the last utterance is
/// truncated so the total is exactly `frames`.
inline std::vector<LatentUtterance> sample_latent(Rng rng, const LanguageSpec& lang,
                                                  const CorpusBudget& budget) {
  if (budget.frames == 0 || !(budget.mean_utt_len >= 1.0))
    fail(ErrorKind::config, "sample_latent: budgets must be positive");
  if (!(budget.self_loop >= 0.0 && budget.self_loop < 1.0))
    fail(ErrorKind::config, "sample_latent: self_loop must be in [0,1)");
  const auto lo = static_cast<std::size_t>(std::max(1.0, std::floor(budget.mean_utt_len / 2)));
  const auto hi = static_cast<std::size_t>(std::max(1.0, std::floor(budget.mean_utt_len * 1.5)));
  std::vector<LatentUtterance> out;
  std::size_t remaining = budget.frames;
  while (remaining > 0) {
    std::size_t t_count = lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
    t_count = std::min(t_count, remaining);
    remaining -= t_count;
    LatentUtterance u;
    u.labels.resize(t_count);
    u.latent = Matrix(t_count, lang.latent_dim);
    std::uint32_t c = draw_from_prior(rng, lang.class_prior);
    for (std::size_t t = 0; t < t_count; ++t) {
      if (t > 0 && !(rng.uniform() < budget.self_loop)) c = draw_from_prior(rng, lang.class_prior);
      u.labels[t] = c;
      auto z = u.latent.row(t);
      for (std::size_t j = 0; j < lang.latent_dim; ++j)
        z[j] = lang.class_means(c, j) + std::sqrt(lang.class_vars(c, j)) * rng.normal();
    }
    out.push_back(std::move(u));
  }
  return out;
}

/// Renders latent utterances through a domain. Labels are copied unchanged.
inline Corpus render(const std::vector<LatentUtterance>& latents, const LanguageSpec& lang,
                     const DomainSpec& domain, Rng rng, const std::string& id_prefix) {
  const Matrix a = domain_projection(lang, domain);
  const std::size_t f = lang.feature_dim, l = lang.latent_dim;
  Corpus corpus;
  corpus.feature_dim = f;
  for (std::size_t u = 0; u < latents.size(); ++u) {
    const LatentUtterance& lu = latents[u];
    const double gain = domain.gain_min == domain.gain_max ? domain.gain_min
                                                           : rng.uniform(domain.gain_min, domain.gain_max);
    Utterance utt;
    char id[32];
    std::snprintf(id, sizeof id, "-%05zu", u);
    utt.id = id_prefix + id;
    utt.language = lang.name;
    utt.domain = domain.name;
    utt.labels = lu.labels;
    utt.frames = Matrix(lu.latent.rows(), f);
    for (std::size_t t = 0; t < lu.latent.rows(); ++t) {
      auto z = lu.latent.row(t);
      auto x = utt.frames.row(t);
      for (std::size_t i = 0; i < f; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < l; ++j) s += a(i, j) * z[j];
        x[i] = gain * s;
      }
      if (domain.noise_std > 0)
        for (std::size_t i = 0; i < f; ++i) x[i] += domain.noise_std * rng.normal();
    }
    corpus.utterances.push_back(std::move(utt));
  }
  return corpus;
}

inline Corpus sample_corpus(Rng rng, const LanguageSpec& lang, const DomainSpec& domain,
                            const CorpusBudget& budget, const std::string& id_prefix) {
  return render(sample_latent(rng.derive("latent"), lang, budget), lang, domain,
                rng.derive("render/" + domain.name), id_prefix);
}

}  // namespace xlac
