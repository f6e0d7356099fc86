#include "ebm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace ebm {

namespace {
constexpr double kMcdScale = 10.0 / std::numbers::ln10;
constexpr double kGrossPitchError = 0.2;
}  // namespace

RowMatrixXd dct_basis(std::size_t size) {
  const auto n = static_cast<Eigen::Index>(size);
  RowMatrixXd basis(n, n);
  const double pi = std::numbers::pi;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / static_cast<double>(n)) : std::sqrt(2.0 / static_cast<double>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      basis(k, i) = s * std::cos(pi * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) / (2.0 * static_cast<double>(n)));
  }
  return basis;
}

std::size_t default_cepstral_order(std::size_t feature_dim) {
  return std::min<std::size_t>(13, feature_dim - 1);
}

RowMatrixXd mel_to_cepstra(const FeatureSequence& features, std::size_t coefficients) {
  const auto dim = static_cast<std::size_t>(features.cols());
  if (coefficients < 1 || coefficients >= dim)
    throw ConfigError("cepstral order " + std::to_string(coefficients) + " must lie in [1, " + std::to_string(dim - 1) +
                      "] for " + std::to_string(dim) + " bins (c0 is excluded)");
  RowMatrixXd basis = dct_basis(dim);
  RowMatrixXd full = features * basis.transpose();
  return full.middleCols(1, static_cast<Eigen::Index>(coefficients));
}

McdResult mcd_aligned(const FeatureSequence& reference, const FeatureSequence& hypothesis, std::size_t coefficients) {
  if (reference.cols() != hypothesis.cols())
    throw ShapeError("mcd: feature dimensions differ (" + std::to_string(reference.cols()) + " vs " +
                     std::to_string(hypothesis.cols()) + ")");
  RowMatrixXd cr = mel_to_cepstra(reference, coefficients);
  RowMatrixXd ch = mel_to_cepstra(hypothesis, coefficients);
  McdResult r;
  r.alignment = dtw_align(cr, ch);
  double total = 0.0;
  for (auto [i, j] : r.alignment.path) {
    double sq = (cr.row(static_cast<Eigen::Index>(i)) - ch.row(static_cast<Eigen::Index>(j))).squaredNorm();
    total += kMcdScale * std::sqrt(2.0 * sq);
  }
  r.mcd = total / static_cast<double>(r.alignment.path.size());
  return r;
}

double mcd(const FeatureSequence& reference, const FeatureSequence& hypothesis, std::size_t coefficients) {
  return mcd_aligned(reference, hypothesis, coefficients).mcd;
}

std::size_t f0_error_count(const F0Track& reference, const F0Track& hypothesis) {
  if (reference.size() != hypothesis.size())
    throw DataError("F0 tracks differ in length (" + std::to_string(reference.size()) + " vs " +
                    std::to_string(hypothesis.size()) + "); align them first");
  std::size_t errors = 0;
  for (Eigen::Index t = 0; t < reference.size(); ++t) {
    const bool rv = reference(t) > 0.0;
    const bool hv = hypothesis(t) > 0.0;
    if (rv != hv)
      ++errors;
    else if (rv && std::abs(hypothesis(t) - reference(t)) > kGrossPitchError * reference(t))
      ++errors;
  }
  return errors;
}

double ffe(const F0Track& reference, const F0Track& hypothesis) {
  std::size_t errors = f0_error_count(reference, hypothesis);
  if (reference.size() == 0) throw DataError("ffe of empty tracks");
  return static_cast<double>(errors) / static_cast<double>(reference.size());
}

double log_f0_rmse(const F0Track& reference, const F0Track& hypothesis) {
  if (reference.size() != hypothesis.size())
    throw DataError("F0 tracks differ in length; align them first");
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index t = 0; t < reference.size(); ++t) {
    if (reference(t) > 0.0 && hypothesis(t) > 0.0) {
      double d = std::log(hypothesis(t)) - std::log(reference(t));
      sum += d * d;
      ++n;
    }
  }
  if (n == 0) throw DataError("log-F0 RMSE needs at least one frame voiced in both tracks");
  return std::sqrt(sum / static_cast<double>(n));
}

std::pair<F0Track, F0Track> align_tracks(const F0Track& reference, const F0Track& hypothesis, const AlignmentPath& path) {
  F0Track r(static_cast<Eigen::Index>(path.size()));
  F0Track h(static_cast<Eigen::Index>(path.size()));
  for (std::size_t k = 0; k < path.size(); ++k) {
    auto [i, j] = path[k];
    if (static_cast<Eigen::Index>(i) >= reference.size() || static_cast<Eigen::Index>(j) >= hypothesis.size())
      throw DataError("alignment path exceeds F0 track length");
    r(static_cast<Eigen::Index>(k)) = reference(static_cast<Eigen::Index>(i));
    h(static_cast<Eigen::Index>(k)) = hypothesis(static_cast<Eigen::Index>(j));
  }
  return {r, h};
}

UtteranceMetrics evaluate_utterance(const std::string& id, const FeatureSequence& reference,
                                    const FeatureSequence& hypothesis, std::size_t coefficients,
                                    const std::optional<F0Track>& reference_f0,
                                    const std::optional<F0Track>& hypothesis_f0) {
  UtteranceMetrics m;
  m.id = id;
  McdResult r = mcd_aligned(reference, hypothesis, coefficients);
  m.mcd = r.mcd;
  m.path_length = r.alignment.path.size();

  F0Track ref = reference_f0 ? *reference_f0 : f0_from_features(reference);
  F0Track hyp = hypothesis_f0 ? *hypothesis_f0 : f0_from_features(hypothesis);
  if (ref.size() != hyp.size()) std::tie(ref, hyp) = align_tracks(ref, hyp, r.alignment.path);
  m.ffe = ffe(ref, hyp);
  try {
    m.log_f0_rmse = log_f0_rmse(ref, hyp);
  } catch (const DataError&) {
    m.log_f0_rmse = std::numeric_limits<double>::quiet_NaN();
  }
  return m;
}

SummaryStat summarize(const std::vector<double>& values) {
  std::vector<double> v;
  for (double x : values)
    if (std::isfinite(x)) v.push_back(x);
  SummaryStat s;
  s.count = v.size();
  if (v.empty()) {
    s.mean = s.median = s.ci95 = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    s.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(v.size()));
  }
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return s;
}

void MetricsReport::finalize() {
  std::vector<double> a, b, c, d;
  for (const auto& u : utterances) {
    a.push_back(u.mcd);
    b.push_back(u.ffe);
    c.push_back(u.log_f0_rmse);
    d.push_back(static_cast<double>(u.path_length));
  }
  mcd = summarize(a);
  ffe = summarize(b);
  log_f0_rmse = summarize(c);
  path_length = summarize(d);
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  char buf[256];
  os << "utt_id,mcd,ffe,log_f0_rmse\n";
  for (const auto& u : utterances) {
    std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g\n", u.id.c_str(), u.mcd, u.ffe, u.log_f0_rmse);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean,%.10g,%.10g,%.10g\n", mcd.mean, ffe.mean, log_f0_rmse.mean);
  os << buf;
  std::snprintf(buf, sizeof(buf), "ci95,%.10g,%.10g,%.10g\n", mcd.ci95, ffe.ci95, log_f0_rmse.ci95);
  os << buf;
  return os.str();
}

}  // namespace ebm
