#pragma once

// Latent Dirichlet allocation trained by variational EM on tf-idf weighted
// documents. Weights act as fractional pseudo-counts in both the per-document
// gamma update and the topic-term sufficient statistics.
//
// Per-document mean-field updates:
//   phi[t, k] ∝ exp(digamma(gamma[k])) * beta[k, term_t]
//   gamma[k]   = alpha[k] + sum_t weight_t * phi[t, k]
// M-step:
//   beta[k, v] ∝ eta + sum_docs sum_{t: term_t = v} weight_t * phi[t, k]

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alda/docmodel.hpp"
#include "alda/matrix.hpp"

namespace alda {

struct LdaModel {
  std::vector<double> alpha;  // K, all positive
  Matrix<double> log_beta;    // K x V, each row exp-sums to 1

  std::size_t n_topics() const { return alpha.size(); }
  std::size_t vocab_size() const { return log_beta.cols(); }

  // Throws FormatError on shape mismatch, non-positive alpha or rows of
  // exp(log_beta) that are not distributions within 1e-8.
  void check_invariants() const;

  bool operator==(const LdaModel&) const = default;
};

struct InferenceConfig {
  // Converged when mean |delta gamma| drops below tol.
  double tol = 1e-4;
  std::size_t max_iters = 100;
  // Record the ELBO after every iteration (costs one bound evaluation each).
  bool track_elbo = false;
};

struct InferenceState {
  std::vector<double> gamma;  // K
  Matrix<double> phi;         // one row per document entry, K columns
  std::vector<double> elbo_trace;
  std::size_t iterations = 0;
  bool converged = false;
};

// Empty documents return gamma = alpha with no phi rows. `warm_gamma`, when
// given, replaces the default start alpha + total_weight / K.
InferenceState infer_document(const LdaModel& model, const WeightedDocument& doc,
                              const InferenceConfig& config = {},
                              std::span<const double> warm_gamma = {});

// Variational lower bound on the weighted log-likelihood of `doc` at `state`.
double elbo(const LdaModel& model, const WeightedDocument& doc, const InferenceState& state);

struct LdaConfig {
  std::size_t n_topics = 2048;
  // Symmetric Dirichlet prior; non-positive means 50 / n_topics.
  double alpha = 0.0;
  double eta = 1e-2;
  // Amplitude of the seeded uniform perturbation added to eta at init.
  double init_noise = 1.0;
  InferenceConfig inference;
  double em_tol = 1e-5;
  std::size_t em_max_iters = 60;
  std::uint64_t seed = 0;
};

struct LdaTrainResult {
  LdaModel model;
  // Training objective after each E-step: sum of document bounds plus the
  // eta smoothing prior on beta. The returned model produced the last entry.
  std::vector<double> objective;
  // Final per-document gammas, aligned with the training documents.
  std::vector<std::vector<double>> gammas;
  std::size_t iterations = 0;
};

double resolved_alpha(const LdaConfig& config);

// Seeded starting point used by train_lda.
LdaModel initial_lda_model(std::size_t vocab_size, const LdaConfig& config);

// Throws ValidationError when every document is empty or n_topics is zero.
// `init` overrides the seeded starting model; its shape must match.
LdaTrainResult train_lda(std::span<const WeightedDocument> docs, std::size_t vocab_size,
                         const LdaConfig& config, const std::optional<LdaModel>& init = {});

struct PosteriorVector {
  std::string utt_id;
  std::vector<double> gamma;

  bool operator==(const PosteriorVector&) const = default;
};

std::vector<PosteriorVector> extract_posteriors(const LdaModel& model,
                                                std::span<const WeightedDocument> docs,
                                                const InferenceConfig& config = {});

// Binary model file: magic "ALDA", u32 version, u32 K, u32 V, alpha f64[K],
// log_beta f64[K*V] row-major, little-endian.
void save_lda(const LdaModel& model, const std::filesystem::path& path);
LdaModel load_lda(const std::filesystem::path& path);

// Text posteriors: "id<TAB>g1 g2 ... gK" with nine significant digits.
void write_posteriors(std::span<const PosteriorVector> posts, const std::filesystem::path& path);
std::vector<PosteriorVector> read_posteriors(const std::filesystem::path& path);

}  // namespace alda
