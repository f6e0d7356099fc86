#pragma once

// Objective evaluation: DTW alignment, mel-cepstral distortion, F0 frame error
// and log-F0 RMSE.

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ebm/data.hpp"
#include "ebm/error.hpp"
#include "ebm/tensor.hpp"

namespace ebm {

using AlignmentPath = std::vector<std::pair<std::size_t, std::size_t>>;

struct DtwResult {
  AlignmentPath path;
  double cost = 0.0;
};

// Classic DTW over rows (frames) with steps (1,0), (0,1), (1,1) and Euclidean
// frame distance. The path starts at (0,0) and ends at (n-1, m-1); costs are
// accumulated front to back along the path. Ties on backtracking prefer the
// diagonal, then the step that advances A alone.
template <typename DerivedA, typename DerivedB>
DtwResult dtw_align(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.rows();
  if (n == 0 || m == 0) throw ShapeError("dtw_align needs non-empty sequences");
  if (a.cols() != b.cols())
    throw ShapeError("dtw_align frame dimensions differ: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));

  const double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Constant(n, m, inf);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d = (a.row(i) - b.row(j)).norm();
      if (i == 0 && j == 0) {
        acc(i, j) = d;
        continue;
      }
      double best = inf;
      if (i > 0 && j > 0) best = std::min(best, acc(i - 1, j - 1));
      if (i > 0) best = std::min(best, acc(i - 1, j));
      if (j > 0) best = std::min(best, acc(i, j - 1));
      acc(i, j) = best + d;
    }

  DtwResult result;
  result.cost = acc(n - 1, m - 1);
  Eigen::Index i = n - 1, j = m - 1;
  result.path.emplace_back(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  while (i > 0 || j > 0) {
    if (i == 0) {
      --j;
    } else if (j == 0) {
      --i;
    } else {
      const double diag = acc(i - 1, j - 1), up = acc(i - 1, j), left = acc(i, j - 1);
      if (diag <= up && diag <= left) {
        --i;
        --j;
      } else if (up <= left) {
        --i;
      } else {
        --j;
      }
    }
    result.path.emplace_back(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }
  std::reverse(result.path.begin(), result.path.end());
  return result;
}

// Orthonormal DCT-II basis; row k holds coefficient k.
RowMatrixXd dct_basis(std::size_t size);

// Per-frame orthonormal DCT-II, keeping coefficients 1..D (c0 dropped).
RowMatrixXd mel_to_cepstra(const FeatureSequence& features, std::size_t coefficients);

std::size_t default_cepstral_order(std::size_t feature_dim);

struct McdResult {
  double mcd = 0.0;  // dB, averaged over the alignment path
  DtwResult alignment;
};

McdResult mcd_aligned(const FeatureSequence& reference, const FeatureSequence& hypothesis, std::size_t coefficients);
double mcd(const FeatureSequence& reference, const FeatureSequence& hypothesis, std::size_t coefficients);

// Voicing mismatches plus voiced frames off by more than 20%, over T.
double ffe(const F0Track& reference, const F0Track& hypothesis);
// RMSE of ln F0 over frames voiced in both tracks.
double log_f0_rmse(const F0Track& reference, const F0Track& hypothesis);
// Integer error count behind ffe().
std::size_t f0_error_count(const F0Track& reference, const F0Track& hypothesis);

// Expands two tracks along an alignment path into equal-length tracks.
std::pair<F0Track, F0Track> align_tracks(const F0Track& reference, const F0Track& hypothesis, const AlignmentPath& path);

struct UtteranceMetrics {
  std::string id;
  double mcd = 0.0;
  double ffe = 0.0;
  double log_f0_rmse = std::numeric_limits<double>::quiet_NaN();  // NaN when no frame is voiced in both
  std::size_t path_length = 0;
};

// F0 tracks default to those decoded from the pitch channel.
UtteranceMetrics evaluate_utterance(const std::string& id, const FeatureSequence& reference,
                                    const FeatureSequence& hypothesis, std::size_t coefficients,
                                    const std::optional<F0Track>& reference_f0 = std::nullopt,
                                    const std::optional<F0Track>& hypothesis_f0 = std::nullopt);

struct SummaryStat {
  double mean = 0.0;
  double ci95 = 0.0;  // half-width, 1.96 s / sqrt(n)
  double median = 0.0;
  std::size_t count = 0;
};

// Non-finite values are skipped.
SummaryStat summarize(const std::vector<double>& values);

struct MetricsReport {
  std::vector<UtteranceMetrics> utterances;
  SummaryStat mcd;
  SummaryStat ffe;
  SummaryStat log_f0_rmse;
  SummaryStat path_length;

  void finalize();
  // `utt_id,mcd,ffe,log_f0_rmse` rows followed by `mean` and `ci95` rows.
  std::string to_csv() const;
};

}  // namespace ebm
