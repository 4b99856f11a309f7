#include "alda/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <ranges>

#include "alda/error.hpp"
#include "alda/parallel.hpp"
#include "binary_io.hpp"
#include "text_util.hpp"

namespace alda {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kGmmMagic = "AGMM";
constexpr std::uint32_t kGmmVersion = 1;
constexpr std::size_t kShardFrames = 4096;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Per-component terms that do not depend on the frame.
struct Scorer {
  explicit Scorer(const GmmModel& m) : model(m), inv_var(m.n_components(), m.dim()) {
    log_const.resize(m.n_components());
    for (std::size_t k = 0; k < m.n_components(); ++k) {
      double c = std::log(m.weights[k]) - 0.5 * static_cast<double>(m.dim()) * kLog2Pi;
      for (std::size_t j = 0; j < m.dim(); ++j) {
        c -= 0.5 * std::log(m.variances(k, j));
        inv_var(k, j) = 1.0 / m.variances(k, j);
      }
      log_const[k] = c;
    }
  }

  template <typename T>
  void log_joint(std::span<const T> x, std::span<double> out) const {
    const std::size_t dim = model.dim();
    for (std::size_t k = 0; k < model.n_components(); ++k) {
      const auto mu = model.means.row(k);
      const auto iv = inv_var.row(k);
      double q = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = static_cast<double>(x[j]) - mu[j];
        q += d * d * iv[j];
      }
      out[k] = log_const[k] - 0.5 * q;
    }
  }

  const GmmModel& model;
  Matrix<double> inv_var;
  std::vector<double> log_const;
};

// Normalizes log joint scores into posteriors in place; returns log-sum-exp.
double normalize_log(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
  return mx + std::log(sum);
}

template <typename T>
std::vector<double> posteriors_impl(const GmmModel& model, std::span<const T> frame) {
  if (frame.size() != model.dim()) {
    throw ValidationError("gmm_posteriors: frame dim " + std::to_string(frame.size()) +
                          " != model dim " + std::to_string(model.dim()));
  }
  Scorer scorer(model);
  std::vector<double> out(model.n_components());
  scorer.log_joint(frame, std::span<double>(out));
  normalize_log(out);
  return out;
}

// k-means++ seeding: first center uniform, then D^2 sampling.
Matrix<double> kmeanspp_seeds(const FeatureMatrix& pts, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = pts.rows(), dim = pts.cols();
  Matrix<double> centers(k, dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t chosen = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < dim; ++j) centers(c, j) = pts(chosen, j);
    if (c + 1 == k) break;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = pts(i, j) - centers(c, j);
        d += diff * diff;
      }
      d2[i] = std::min(d2[i], d);
      total += d2[i];
    }
    if (total <= 0.0) {
      chosen = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      continue;
    }
    double r = std::uniform_real_distribution<double>(0.0, total)(rng);
    chosen = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      r -= d2[i];
      if (r < 0.0) {
        chosen = i;
        break;
      }
    }
  }
  return centers;
}

// k sorted distinct indices drawn uniformly from [0, n).
std::vector<std::uint64_t> sample_indices(std::uint64_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::uint64_t> out(k);
  auto res = std::ranges::sample(std::views::iota(std::uint64_t{0}, n), out.begin(),
                                 static_cast<std::ptrdiff_t>(k), rng);
  out.erase(res, out.end());
  std::sort(out.begin(), out.end());
  return out;
}

struct Accumulator {
  std::vector<double> occ;  // N
  Matrix<double> s1, s2;    // N x dim, centered on the current means
  double ll = 0.0;
};

}  // namespace

void GmmModel::check_invariants() const {
  const std::size_t n = weights.size();
  if (n == 0) throw FormatError("gmm: zero components");
  if (means.rows() != n || variances.rows() != n || means.cols() != variances.cols() ||
      means.cols() == 0) {
    throw FormatError("gmm: inconsistent parameter shapes");
  }
  double sum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw FormatError("gmm: non-positive weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw FormatError("gmm: weights do not sum to 1");
  for (double v : variances.data()) {
    if (!(v > 0.0) || !std::isfinite(v)) throw FormatError("gmm: non-positive variance");
  }
  for (double m : means.data()) {
    if (!std::isfinite(m)) throw FormatError("gmm: non-finite mean");
  }
}

GmmTrainResult train_gmm(const FeatureMatrix& frames, std::size_t n_components,
                         const GmmConfig& config) {
  const std::size_t n = frames.rows(), dim = frames.cols();
  if (n_components == 0) throw ValidationError("train_gmm: n_components must be positive");
  if (n < n_components) {
    throw ValidationError("train_gmm: " + std::to_string(n) + " frames is fewer than " +
                          std::to_string(n_components) + " components");
  }
  if (dim == 0) throw ValidationError("train_gmm: zero-dimensional frames");
  for (float v : frames.data()) {
    if (!std::isfinite(v)) throw ValidationError("train_gmm: non-finite frame value");
  }

  // Global moments give the variance floor and the initial variances.
  std::vector<double> gmean(dim, 0.0), gvar(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) gmean[j] += frames(i, j);
  for (double& m : gmean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = frames(i, j) - gmean[j];
      gvar[j] += d * d;
    }
  for (double& v : gvar) v /= static_cast<double>(n);
  if (std::all_of(gvar.begin(), gvar.end(), [](double v) { return v == 0.0; })) {
    throw ValidationError("train_gmm: degenerate input, all frames are identical");
  }
  GmmTrainResult result;
  result.var_floor.resize(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    // A constant dimension gets a small absolute floor instead of zero.
    result.var_floor[j] = gvar[j] > 0.0 ? config.var_floor_scale * gvar[j] : 1e-6;
  }

  std::mt19937_64 rng(config.seed);
  FeatureMatrix seed_pts;
  if (n <= config.seed_subsample) {
    seed_pts = frames;
  } else {
    const auto idx = sample_indices(n, config.seed_subsample, rng);
    seed_pts = FeatureMatrix(idx.size(), dim);
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::ranges::copy(frames.row(idx[r]), seed_pts.row(r).begin());
  }

  GmmModel& model = result.model;
  model.weights.assign(n_components, 1.0 / static_cast<double>(n_components));
  model.means = kmeanspp_seeds(seed_pts, n_components, rng);
  model.variances = Matrix<double>(n_components, dim);
  for (std::size_t k = 0; k < n_components; ++k)
    for (std::size_t j = 0; j < dim; ++j)
      model.variances(k, j) = std::max(gvar[j], result.var_floor[j]);

  const std::size_t n_shards = (n + kShardFrames - 1) / kShardFrames;
  std::vector<Accumulator> acc(n_shards);
  double prev_ll = -std::numeric_limits<double>::infinity();

  for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
    const Scorer scorer(model);
    for_each_shard(n_shards, [&](std::size_t s) {
      Accumulator& a = acc[s];
      a.occ.assign(n_components, 0.0);
      a.s1 = Matrix<double>(n_components, dim);
      a.s2 = Matrix<double>(n_components, dim);
      a.ll = 0.0;
      std::vector<double> post(n_components);
      const std::size_t end = std::min(n, (s + 1) * kShardFrames);
      for (std::size_t i = s * kShardFrames; i < end; ++i) {
        const auto x = frames.row(i);
        scorer.log_joint(x, std::span<double>(post));
        a.ll += normalize_log(post);
        for (std::size_t k = 0; k < n_components; ++k) {
          const double r = post[k];
          if (r == 0.0) continue;
          a.occ[k] += r;
          auto s1 = a.s1.row(k);
          auto s2 = a.s2.row(k);
          const auto mu = model.means.row(k);
          for (std::size_t j = 0; j < dim; ++j) {
            const double d = x[j] - mu[j];
            s1[j] += r * d;
            s2[j] += r * d * d;
          }
        }
      }
    });

    Accumulator total{std::vector<double>(n_components, 0.0), Matrix<double>(n_components, dim),
                      Matrix<double>(n_components, dim), 0.0};
    for (const auto& a : acc) {
      total.ll += a.ll;
      for (std::size_t k = 0; k < n_components; ++k) total.occ[k] += a.occ[k];
      for (std::size_t e = 0; e < total.s1.data().size(); ++e) {
        total.s1.data()[e] += a.s1.data()[e];
        total.s2.data()[e] += a.s2.data()[e];
      }
    }
    result.log_likelihood.push_back(total.ll);
    result.iterations = iter + 1;
    if (iter > 0 && (total.ll - prev_ll) <= config.tol * std::abs(prev_ll)) break;
    if (iter + 1 == config.max_iters) break;
    prev_ll = total.ll;

    // M-step. Flooring at var_floor is the constrained maximizer per
    // dimension, so EM keeps its ascent property.
    double wsum = 0.0;
    for (std::size_t k = 0; k < n_components; ++k) {
      const double occ = total.occ[k];
      if (occ <= 0.0) {
        model.weights[k] = 1e-12;  // unused component: keep its Gaussian
      } else {
        model.weights[k] = occ / static_cast<double>(n);
        for (std::size_t j = 0; j < dim; ++j) {
          const double shift = total.s1(k, j) / occ;
          const double var = total.s2(k, j) / occ - shift * shift;
          model.means(k, j) += shift;
          model.variances(k, j) = std::max(var, result.var_floor[j]);
        }
      }
      wsum += model.weights[k];
    }
    for (double& w : model.weights) w /= wsum;
  }
  return result;
}

std::vector<double> gmm_posteriors(const GmmModel& model, std::span<const float> frame) {
  return posteriors_impl(model, frame);
}

std::vector<double> gmm_posteriors(const GmmModel& model, std::span<const double> frame) {
  return posteriors_impl(model, frame);
}

std::vector<double> gmm_log_joint(const GmmModel& model, std::span<const double> frame) {
  if (frame.size() != model.dim()) throw ValidationError("gmm_log_joint: dimension mismatch");
  std::vector<double> out(model.n_components());
  Scorer(model).log_joint(frame, std::span<double>(out));
  return out;
}

AcousticDocument quantize(const GmmModel& model, const FeatureMatrix& frames, std::string utt_id) {
  if (frames.rows() > 0 && frames.cols() != model.dim()) {
    throw ValidationError("quantize: '" + utt_id + "' has frame dim " +
                          std::to_string(frames.cols()) + ", model dim " +
                          std::to_string(model.dim()));
  }
  AcousticDocument doc{std::move(utt_id), {}};
  doc.tokens.reserve(frames.rows());
  const Scorer scorer(model);
  std::vector<double> lj(model.n_components());
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    scorer.log_joint(frames.row(t), std::span<double>(lj));
    // max_element returns the first maximum: lowest index wins ties.
    doc.tokens.push_back(
        static_cast<std::uint32_t>(std::max_element(lj.begin(), lj.end()) - lj.begin()));
  }
  return doc;
}

FeatureMatrix sample_frames(std::span<const Manifest* const> manifests, std::size_t max_frames,
                            std::uint64_t seed) {
  std::uint64_t total = 0;
  std::uint32_t dim = 0;
  for (const Manifest* m : manifests) {
    for (const auto& u : m->utterances) {
      if (u.num_frames == 0) continue;
      if (dim == 0) dim = u.frame_dim;
      if (u.frame_dim != dim) throw ValidationError("sample_frames: mixed frame dimensions");
      total += u.num_frames;
    }
  }
  std::vector<std::uint64_t> picks;
  std::mt19937_64 rng(seed);
  if (total > max_frames) {
    picks = sample_indices(total, max_frames, rng);
  }
  const bool take_all = total <= max_frames;
  FeatureMatrix out(take_all ? total : picks.size(), dim);
  std::size_t row = 0, next_pick = 0;
  std::uint64_t offset = 0;
  for (const Manifest* m : manifests) {
    for (const auto& u : m->utterances) {
      if (u.num_frames == 0) continue;
      const std::uint64_t end = offset + u.num_frames;
      if (take_all || (next_pick < picks.size() && picks[next_pick] < end)) {
        const FeatureMatrix f = read_features(u);
        for (std::uint64_t t = 0; t < u.num_frames; ++t) {
          if (!take_all) {
            if (next_pick >= picks.size() || picks[next_pick] != offset + t) continue;
            ++next_pick;
          }
          std::ranges::copy(f.row(t), out.row(row++).begin());
        }
      }
      offset = end;
    }
  }
  return out;
}

void save_gmm(const GmmModel& model, const fs::path& path) {
  model.check_invariants();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write gmm " + path.string());
  detail::put_magic(out, kGmmMagic);
  detail::put<std::uint32_t>(out, kGmmVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.n_components()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.dim()));
  detail::put_array(out, std::span<const double>(model.weights));
  detail::put_array(out, std::span<const double>(model.means.data()));
  detail::put_array(out, std::span<const double>(model.variances.data()));
  if (!out) throw IoError("failed writing gmm " + path.string());
}

GmmModel load_gmm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open gmm " + path.string());
  const std::string what = path.string();
  detail::expect_magic(in, kGmmMagic, what);
  auto version = detail::get<std::uint32_t>(in, what);
  if (version != kGmmVersion) throw FormatError(what + ": unsupported gmm version");
  auto n = detail::get<std::uint32_t>(in, what);
  auto dim = detail::get<std::uint32_t>(in, what);
  GmmModel m;
  m.weights.resize(n);
  m.means = Matrix<double>(n, dim);
  m.variances = Matrix<double>(n, dim);
  detail::get_array(in, std::span<double>(m.weights), what);
  detail::get_array(in, std::span<double>(m.means.data()), what);
  detail::get_array(in, std::span<double>(m.variances.data()), what);
  if (!detail::at_eof(in)) throw FormatError(what + ": trailing bytes after payload");
  m.check_invariants();
  return m;
}

void write_token_corpus(std::span<const AcousticDocument> docs, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write token corpus " + path.string());
  for (const auto& d : docs) {
    out << d.utt_id << '\t';
    for (std::size_t i = 0; i < d.tokens.size(); ++i) {
      if (i) out << ' ';
      out << d.tokens[i];
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing token corpus " + path.string());
}

std::vector<AcousticDocument> read_token_corpus(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open token corpus " + path.string());
  std::vector<AcousticDocument> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) throw FormatError(where + ": expected id<TAB>tokens");
    AcousticDocument d{line.substr(0, tab), {}};
    for (auto tok : text::split(std::string_view(line).substr(tab + 1), ' ')) {
      if (tok.empty()) continue;
      d.tokens.push_back(text::parse_or_throw<std::uint32_t>(tok, where));
    }
    docs.push_back(std::move(d));
  }
  return docs;
}

}  // namespace alda
