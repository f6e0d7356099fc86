#include "ebm/samplers.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace ebm {

namespace {

void check_gradient(const RowMatrixXd& grad, double energy, std::size_t step) {
  if (!std::isfinite(energy) || !grad.allFinite())
    throw NumericError("sampler step " + std::to_string(step) + ": non-finite energy or gradient (E = " +
                       std::to_string(energy) + ")");
}

void add_noise(FeatureSequence& y, double scale, Rng& rng) {
  if (scale == 0.0) return;
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] += scale * standard_normal(rng);
}

}  // namespace

SamplerVariant parse_variant(const std::string& text) {
  if (text == "langevin") return SamplerVariant::Langevin;
  if (text == "simplified-adam") return SamplerVariant::SimplifiedAdam;
  if (text == "annealed-score") return SamplerVariant::AnnealedScore;
  throw ConfigError("unknown sampler variant '" + text + "' (langevin | simplified-adam | annealed-score)");
}

std::string variant_name(SamplerVariant v) {
  switch (v) {
    case SamplerVariant::Langevin: return "langevin";
    case SamplerVariant::SimplifiedAdam: return "simplified-adam";
    case SamplerVariant::AnnealedScore: return "annealed-score";
  }
  return "?";
}

double SamplerConfig::default_step_size(SamplerVariant v) {
  return v == SamplerVariant::SimplifiedAdam ? 1e-2 : 1e-3;
}

void SamplerConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("sampler step size must be > 0");
  if (!(noise_variance >= 0.0)) throw ConfigError("sampler noise variance must be >= 0");
  if (variant == SamplerVariant::AnnealedScore) {
    for (double l : {anneal_start, anneal_end})
      if (!(l > 0.0 && l < 1.0)) throw ConfigError("anneal schedule values must lie in (0, 1)");
  }
}

std::string SamplerTrace::to_csv() const {
  std::ostringstream os;
  os << "step,energy,update_norm\n";
  char buf[96];
  for (std::size_t n = 0; n < energies.size(); ++n) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", n, energies[n], update_norms[n]);
    os << buf;
  }
  return os.str();
}

FeatureSequence langevin_step(const EnergySurface& surface, const FeatureSequence& y, double step_size,
                              double noise_variance, Rng& rng) {
  if (!(step_size > 0.0)) throw ConfigError("Langevin step size must be > 0");
  if (!(noise_variance >= 0.0)) throw ConfigError("Langevin noise variance must be >= 0");
  RowMatrixXd grad;
  double e = surface.energy_and_gradient(y, grad);
  check_gradient(grad, e, 0);
  FeatureSequence next = y - step_size * grad;
  add_noise(next, std::sqrt(2.0 * step_size) * std::sqrt(noise_variance), rng);
  return next;
}

SamplerTrace langevin_run(const EnergySurface& surface, const FeatureSequence& y0, const SamplerConfig& config, Rng& rng) {
  config.validate();
  SamplerTrace trace;
  FeatureSequence y = y0;
  RowMatrixXd grad;
  double e = surface.energy_and_gradient(y, grad);
  check_gradient(grad, e, 0);
  trace.energies.push_back(e);
  trace.update_norms.push_back(0.0);
  if (config.record_states) trace.states.push_back(y);
  const double noise = std::sqrt(2.0 * config.step_size) * std::sqrt(config.noise_variance);
  for (std::size_t n = 1; n <= config.steps; ++n) {
    FeatureSequence next = y - config.step_size * grad;
    add_noise(next, noise, rng);
    trace.update_norms.push_back((next - y).norm());
    y = std::move(next);
    e = surface.energy_and_gradient(y, grad);
    check_gradient(grad, e, n);
    trace.energies.push_back(e);
    if (config.record_states) trace.states.push_back(y);
  }
  trace.final = std::move(y);
  return trace;
}

SamplerTrace simplified_adam_run(const EnergySurface& surface, const FeatureSequence& y0, const SamplerConfig& config) {
  config.validate();
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  SamplerTrace trace;
  FeatureSequence y = y0;
  RowMatrixXd grad;
  double e = surface.energy_and_gradient(y, grad);
  check_gradient(grad, e, 0);
  trace.energies.push_back(e);
  trace.update_norms.push_back(0.0);
  if (config.record_states) trace.states.push_back(y);
  Eigen::ArrayXXd m = Eigen::ArrayXXd::Zero(y.rows(), y.cols());
  Eigen::ArrayXXd v = Eigen::ArrayXXd::Zero(y.rows(), y.cols());
  for (std::size_t n = 1; n <= config.steps; ++n) {
    Eigen::ArrayXXd g = grad.array();
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.square();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(n));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(n));
    RowMatrixXd delta = (config.step_size * (m / c1) / ((v / c2).sqrt() + eps)).matrix();
    y -= delta;
    trace.update_norms.push_back(delta.norm());
    e = surface.energy_and_gradient(y, grad);
    check_gradient(grad, e, n);
    trace.energies.push_back(e);
    if (config.record_states) trace.states.push_back(y);
  }
  trace.final = std::move(y);
  return trace;
}

std::vector<double> anneal_schedule(const SamplerConfig& config) {
  std::vector<double> out;
  const std::size_t n = config.steps;
  for (std::size_t i = 0; i < n; ++i) {
    double frac = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    out.push_back(config.anneal_start * std::pow(config.anneal_end / config.anneal_start, frac));
  }
  return out;
}

SamplerTrace annealed_score_run(const EnergySurface& surface, const FeatureSequence& y0,
                                const std::vector<double>& schedule, Rng& rng,
                                bool record_states) {
  for (double l : schedule)
    if (!(l >= 0.0 && l < 1.0)) throw ConfigError("anneal schedule value " + std::to_string(l) + " outside [0, 1)");
  SamplerTrace trace;
  FeatureSequence y = y0;
  RowMatrixXd grad;
  double e = surface.energy_and_gradient(y, grad);
  check_gradient(grad, e, 0);
  trace.energies.push_back(e);
  trace.update_norms.push_back(0.0);
  if (record_states) trace.states.push_back(y);
  for (std::size_t n = 1; n <= schedule.size(); ++n) {
    const double l = schedule[n - 1];
    FeatureSequence next = (y - l * grad) / std::sqrt(1.0 - l);
    add_noise(next, std::sqrt(l), rng);
    trace.update_norms.push_back((next - y).norm());
    y = std::move(next);
    e = surface.energy_and_gradient(y, grad);
    check_gradient(grad, e, n);
    trace.energies.push_back(e);
    if (record_states) trace.states.push_back(y);
  }
  trace.final = std::move(y);
  return trace;
}

SamplerTrace annealed_score_run(const EnergySurface& surface, const FeatureSequence& y0, const SamplerConfig& config,
                                Rng& rng) {
  config.validate();
  return annealed_score_run(surface, y0, anneal_schedule(config), rng, config.record_states);
}

SamplerTrace run_sampler(const EnergySurface& surface, const FeatureSequence& y0, const SamplerConfig& config, Rng& rng) {
  switch (config.variant) {
    case SamplerVariant::Langevin: return langevin_run(surface, y0, config, rng);
    case SamplerVariant::SimplifiedAdam: return simplified_adam_run(surface, y0, config);
    case SamplerVariant::AnnealedScore: return annealed_score_run(surface, y0, config, rng);
  }
  throw ConfigError("unknown sampler variant");
}

FeatureSequence gaussian_prior(const FeatureStats& stats, std::size_t frames, Rng& rng) {
  if (frames < 1) throw ConfigError("Gaussian-prior initialisation needs a frame count >= 1");
  const Eigen::Index dim = stats.mean.size();
  FeatureSequence y(static_cast<Eigen::Index>(frames), dim);
  for (Eigen::Index t = 0; t < y.rows(); ++t)
    for (Eigen::Index f = 0; f < dim; ++f) y(t, f) = stats.mean(f) + std::sqrt(stats.variance(f)) * standard_normal(rng);
  return y;
}

}  // namespace ebm
