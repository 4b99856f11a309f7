#pragma once

// Threshold-gated greedy selection of pool utterances around dev centroids,
// plus set-union combination and the random-selection baseline.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alda/corpus_io.hpp"
#include "alda/lda.hpp"
#include "alda/matrix.hpp"

namespace alda {

// 1 - a.b / (|a| |b|), clamped to [0, 2]. Throws ValidationError for zero
// vectors or mismatched lengths.
double cosine_distance(std::span<const double> a, std::span<const double> b);

struct SelectionConfig {
  // Strict upper bound on the selection distance, in (0, 1].
  double lambda = 0.2;
  // Hard stop: selection ends before the first addition that would push the
  // total past this many hours.
  std::optional<double> max_hours;

  void validate() const;
};

struct SelectedUtterance {
  std::string utt_id;
  std::optional<std::size_t> centroid;  // absent for random selection
  std::optional<double> distance;
  std::size_t pass = 0;  // 1-based

  bool operator==(const SelectedUtterance&) const = default;
};

struct SelectionResult {
  std::vector<SelectedUtterance> selected;
  double total_hours = 0.0;
  std::size_t passes = 0;

  bool operator==(const SelectionResult&) const = default;
};

// Repeated passes over the centroids in ascending id order. For each
// centroid the closest remaining pool utterance (ties: smaller id) is moved
// to the selection when its distance is below lambda. Stops when a pass
// selects nothing, the pool is empty, or the hour budget would be exceeded.
SelectionResult select(std::span<const PosteriorVector> pool_posteriors, const Manifest& pool,
                       const Matrix<double>& centroids, const SelectionConfig& config);

// Union by utterance id: all of `a` in order, then entries of `b` not in
// `a`. Hours are recomputed from the manifest.
SelectionResult union_combine(const SelectionResult& a, const SelectionResult& b,
                              const Manifest& pool);

// Seeded shuffle of the pool, taking utterances until the next one would
// exceed the budget.
SelectionResult random_select(const Manifest& pool, double budget_hours, std::uint64_t seed);

// Selected utterances in selection order as a manifest (reusable for
// training) and the audit trail "utt_id<TAB>centroid<TAB>distance<TAB>pass".
// The audit file starts with a "# passes=<n>" comment.
void write_selection(const SelectionResult& result, const Manifest& pool,
                     const std::filesystem::path& manifest_path,
                     const std::filesystem::path& audit_path);
SelectionResult read_audit(const std::filesystem::path& audit_path, const Manifest& pool);

}  // namespace alda
