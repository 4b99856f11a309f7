#pragma once

// Diagonal-covariance GMM codebook. Each frame is mapped to the index of the
// component with the highest posterior probability ("acoustic word").

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "alda/corpus_io.hpp"
#include "alda/matrix.hpp"

namespace alda {

struct GmmModel {
  std::vector<double> weights;  // N, sums to 1
  Matrix<double> means;         // N x dim
  Matrix<double> variances;     // N x dim, diagonal covariances

  std::size_t n_components() const { return weights.size(); }
  std::size_t dim() const { return means.cols(); }

  // Throws FormatError if shapes disagree, weights are not a distribution
  // (1e-9) or any variance is not positive and finite.
  void check_invariants() const;

  bool operator==(const GmmModel&) const = default;
};

struct GmmConfig {
  std::size_t max_iters = 50;
  // Stop when (ll - prev) / |prev| falls below this.
  double tol = 1e-5;
  // Per-dimension variance floor as a fraction of the global variance.
  double var_floor_scale = 1e-3;
  // Frames used for k-means++ seeding.
  std::size_t seed_subsample = 200000;
  std::uint64_t seed = 0;
};

struct GmmTrainResult {
  GmmModel model;
  // Total log-likelihood of the training frames, one entry per E-step. The
  // returned model is the one that produced the last entry.
  std::vector<double> log_likelihood;
  std::vector<double> var_floor;
  std::size_t iterations = 0;
};

// EM with k-means++ seeding. Throws ValidationError when there are fewer
// frames than components, frames are non-finite, or all frames are
// identical.
GmmTrainResult train_gmm(const FeatureMatrix& frames, std::size_t n_components,
                         const GmmConfig& config = {});

// Component posteriors P(n | frame), computed in log space.
std::vector<double> gmm_posteriors(const GmmModel& model, std::span<const float> frame);
std::vector<double> gmm_posteriors(const GmmModel& model, std::span<const double> frame);

// Per-component log(w_n) + log N(frame; mean_n, var_n).
std::vector<double> gmm_log_joint(const GmmModel& model, std::span<const double> frame);

struct AcousticDocument {
  std::string utt_id;
  std::vector<std::uint32_t> tokens;

  bool operator==(const AcousticDocument&) const = default;
};

// tokens[t] = argmax_n P(n | frame t); ties go to the lowest index.
AcousticDocument quantize(const GmmModel& model, const FeatureMatrix& frames, std::string utt_id);

// Uniformly samples up to `max_frames` frames from the utterances of the
// given manifests (all frames when the corpus is smaller). Deterministic in
// `seed`; sampled rows keep corpus order.
FeatureMatrix sample_frames(std::span<const Manifest* const> manifests, std::size_t max_frames,
                            std::uint64_t seed);

// Binary model file: magic "AGMM", u32 version, u32 N, u32 dim, then
// weights, means and variances as little-endian f64.
void save_gmm(const GmmModel& model, const std::filesystem::path& path);
GmmModel load_gmm(const std::filesystem::path& path);

// Quantized corpus: one "id<TAB>tok tok tok" line per document.
void write_token_corpus(std::span<const AcousticDocument> docs, const std::filesystem::path& path);
std::vector<AcousticDocument> read_token_corpus(const std::filesystem::path& path);

}  // namespace alda
