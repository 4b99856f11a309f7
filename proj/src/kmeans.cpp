#include "alda/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "alda/error.hpp"

namespace alda {

namespace fs = std::filesystem;

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

void normalize_row(std::span<double> row) {
  double n = 0.0;
  for (double v : row) n += v * v;
  n = std::sqrt(n);
  if (n == 0.0) throw ValidationError("kmeans: zero vector cannot be normalized");
  for (double& v : row) v /= n;
}

// Nearest centroid for every point; ties go to the lowest cluster index.
// Returns the inertia.
double assign(const Matrix<double>& pts, const Matrix<double>& centroids,
              std::vector<std::size_t>& labels) {
  double inertia = 0.0;
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
      const double d = sq_dist(pts.row(i), centroids.row(c));
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    labels[i] = best;
    inertia += best_d;
  }
  return inertia;
}

}  // namespace

CentroidSet kmeans(const Matrix<double>& vectors, const KMeansConfig& config) {
  const std::size_t n = vectors.rows(), dim = vectors.cols();
  if (n == 0) throw ValidationError("kmeans: no input vectors");
  if (dim == 0) throw ValidationError("kmeans: zero-dimensional vectors");
  if (config.n_clusters == 0) throw ValidationError("kmeans: n_clusters must be positive");
  CentroidSet out;
  std::size_t C = config.n_clusters;
  if (C > n) {
    C = n;
    out.clamped = true;
  }

  // Canonical order: lexicographic by contents.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto ra = vectors.row(a), rb = vectors.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  Matrix<double> pts(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::ranges::copy(vectors.row(order[i]), pts.row(i).begin());
    if (config.spherical) normalize_row(pts.row(i));
  }

  // k-means++ seeding.
  std::mt19937_64 rng(config.seed);
  Matrix<double> centroids(C, dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t c = 0; c < C; ++c) {
    taken[pick] = 1;
    std::ranges::copy(pts.row(pick), centroids.row(c).begin());
    if (c + 1 == C) break;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(pts.row(i), centroids.row(c)));
      total += d2[i];
    }
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        r -= d2[i];
        if (r < 0.0) break;
      }
    } else {
      // Every point coincides with a center: take the next unused one.
      pick = static_cast<std::size_t>(std::find(taken.begin(), taken.end(), 0) - taken.begin());
    }
  }

  std::vector<std::size_t> labels(n), prev(n);
  out.inertia = assign(pts, centroids, labels);
  out.inertia_trace.push_back(out.inertia);

  for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
    // Update step.
    std::vector<std::size_t> sizes(C, 0);
    Matrix<double> sums(C, dim);
    for (std::size_t i = 0; i < n; ++i) {
      ++sizes[labels[i]];
      auto s = sums.row(labels[i]);
      auto p = pts.row(i);
      for (std::size_t j = 0; j < dim; ++j) s[j] += p[j];
    }
    for (std::size_t c = 0; c < C; ++c) {
      if (sizes[c] == 0) continue;
      for (std::size_t j = 0; j < dim; ++j) centroids(c, j) = sums(c, j) / sizes[c];
      if (config.spherical) normalize_row(centroids.row(c));
    }
    // Empty clusters take the member of the largest cluster that lies
    // farthest from its centroid.
    for (std::size_t c = 0; c < C; ++c) {
      if (sizes[c] != 0) continue;
      const std::size_t largest =
          static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != largest) continue;
        const double d = sq_dist(pts.row(i), centroids.row(largest));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      std::ranges::copy(pts.row(far), centroids.row(c).begin());
      labels[far] = c;
      --sizes[largest];
      ++sizes[c];
    }

    prev = labels;
    out.inertia = assign(pts, centroids, labels);
    out.inertia_trace.push_back(out.inertia);
    out.iterations = iter + 1;
    if (labels == prev) {
      out.converged = true;
      break;
    }
  }

  out.centroids = std::move(centroids);
  out.sizes.assign(C, 0);
  out.assignments.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    out.assignments[order[i]] = labels[i];
    ++out.sizes[labels[i]];
  }
  return out;
}

Matrix<double> stack_posteriors(std::span<const PosteriorVector> posts) {
  if (posts.empty()) return {};
  const std::size_t dim = posts.front().gamma.size();
  Matrix<double> m(posts.size(), dim);
  for (std::size_t i = 0; i < posts.size(); ++i) {
    if (posts[i].gamma.size() != dim) throw ValidationError("stack_posteriors: ragged vectors");
    std::ranges::copy(posts[i].gamma, m.row(i).begin());
  }
  return m;
}

void write_centroids(const CentroidSet& set, const fs::path& path) {
  std::vector<PosteriorVector> rows;
  for (std::size_t c = 0; c < set.centroids.rows(); ++c) {
    char id[32];
    std::snprintf(id, sizeof id, "centroid_%04zu", c);
    auto r = set.centroids.row(c);
    rows.push_back({id, {r.begin(), r.end()}});
  }
  write_posteriors(rows, path);

  nlohmann::json side{{"inertia", set.inertia},
                      {"sizes", set.sizes},
                      {"iterations", set.iterations},
                      {"converged", set.converged},
                      {"clamped", set.clamped}};
  std::ofstream out(fs::path(path.string() + ".json"), std::ios::binary);
  if (!out) throw IoError("cannot write centroid sidecar for " + path.string());
  out << side.dump(2) << '\n';
}

Matrix<double> read_centroids(const fs::path& path) {
  return stack_posteriors(read_posteriors(path));
}

}  // namespace alda
