#pragma once

// Lloyd's k-means with k-means++ seeding over posterior vectors.
//
// Inputs are processed in a canonical order (lexicographic by value), so
// the final centroids depend only on the multiset of input vectors and the
// seed, never on input order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "alda/lda.hpp"
#include "alda/matrix.hpp"

namespace alda {

struct KMeansConfig {
  std::size_t n_clusters = 512;
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
  // Normalize inputs to unit length and renormalize centroids each update.
  bool spherical = false;
};

struct CentroidSet {
  Matrix<double> centroids;              // C x dim
  std::vector<std::size_t> assignments;  // one per input vector, input order
  std::vector<std::size_t> sizes;        // members per cluster
  double inertia = 0.0;                  // sum of squared distances
  std::vector<double> inertia_trace;     // after every assignment step
  std::size_t iterations = 0;
  bool converged = false;
  // True when n_clusters exceeded the number of vectors and was reduced.
  bool clamped = false;
};

// Throws ValidationError for empty input, n_clusters == 0, ragged rows, or
// (spherical) zero vectors.
CentroidSet kmeans(const Matrix<double>& vectors, const KMeansConfig& config);

Matrix<double> stack_posteriors(std::span<const PosteriorVector> posts);

// Centroids as a posterior file with ids centroid_0000, ... and a JSON
// sidecar (<path>.json) carrying inertia, sizes and iteration count.
void write_centroids(const CentroidSet& set, const std::filesystem::path& path);
Matrix<double> read_centroids(const std::filesystem::path& path);

}  // namespace alda
