#include "alda/selector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include "alda/error.hpp"
#include "text_util.hpp"

namespace alda {

namespace fs = std::filesystem;

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double cosine_with_norms(std::span<const double> a, double na, std::span<const double> b,
                         double nb) {
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return std::clamp(1.0 - dot / (na * nb), 0.0, 2.0);
}

std::unordered_map<std::string_view, std::size_t> index_by_id(const Manifest& pool) {
  std::unordered_map<std::string_view, std::size_t> idx;
  idx.reserve(pool.utterances.size());
  for (std::size_t i = 0; i < pool.utterances.size(); ++i) idx.emplace(pool.utterances[i].id, i);
  return idx;
}

}  // namespace

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("cosine_distance: length mismatch");
  const double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine_distance: zero vector");
  return cosine_with_norms(a, na, b, nb);
}

void SelectionConfig::validate() const {
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw ValidationError("selection lambda must lie in (0, 1], got " + std::to_string(lambda));
  }
  if (max_hours && !(*max_hours > 0.0)) throw ValidationError("selection budget must be positive");
}

SelectionResult select(std::span<const PosteriorVector> pool_posteriors, const Manifest& pool,
                       const Matrix<double>& centroids, const SelectionConfig& config) {
  config.validate();
  const std::size_t M = pool_posteriors.size();
  if (M != pool.utterances.size()) {
    throw ValidationError("select: " + std::to_string(M) + " posteriors for " +
                          std::to_string(pool.utterances.size()) + " manifest entries");
  }
  const auto by_id = index_by_id(pool);
  std::vector<double> hours(M);
  std::vector<double> norms(M);
  std::vector<char> seen(M, 0);
  for (std::size_t j = 0; j < M; ++j) {
    const auto& p = pool_posteriors[j];
    auto it = by_id.find(p.utt_id);
    if (it == by_id.end()) throw ValidationError("select: posterior id '" + p.utt_id + "' not in manifest");
    if (seen[it->second]++) throw ValidationError("select: duplicate posterior id '" + p.utt_id + "'");
    hours[j] = pool.hours(pool.utterances[it->second]);
    if (p.gamma.size() != centroids.cols()) throw ValidationError("select: dimension mismatch");
    norms[j] = norm2(p.gamma);
    if (norms[j] == 0.0) throw ValidationError("select: zero posterior for '" + p.utt_id + "'");
  }

  // Per centroid, the pool members below lambda sorted by (distance, id).
  // The first member still in the pool is exactly the naive rescan minimum
  // whenever that minimum is below lambda.
  struct Candidate {
    double distance;
    std::size_t index;
  };
  const std::size_t C = centroids.rows();
  std::vector<std::vector<Candidate>> queues(C);
  for (std::size_t c = 0; c < C; ++c) {
    const auto cent = centroids.row(c);
    const double nc = norm2(cent);
    if (nc == 0.0) throw ValidationError("select: zero centroid " + std::to_string(c));
    for (std::size_t j = 0; j < M; ++j) {
      const double d = cosine_with_norms(cent, nc, pool_posteriors[j].gamma, norms[j]);
      if (d < config.lambda) queues[c].push_back({d, j});
    }
    std::sort(queues[c].begin(), queues[c].end(), [&](const Candidate& a, const Candidate& b) {
      if (a.distance != b.distance) return a.distance < b.distance;
      return pool_posteriors[a.index].utt_id < pool_posteriors[b.index].utt_id;
    });
  }

  SelectionResult result;
  std::vector<char> removed(M, 0);
  std::vector<std::size_t> head(C, 0);
  std::size_t remaining = M;
  bool budget_hit = false;
  while (remaining > 0 && !budget_hit) {
    ++result.passes;
    std::size_t count = 0;
    for (std::size_t c = 0; c < C && remaining > 0; ++c) {
      auto& q = queues[c];
      while (head[c] < q.size() && removed[q[head[c]].index]) ++head[c];
      if (head[c] == q.size()) continue;
      const Candidate best = q[head[c]];
      if (config.max_hours && result.total_hours + hours[best.index] > *config.max_hours) {
        budget_hit = true;
        break;
      }
      removed[best.index] = 1;
      --remaining;
      ++count;
      result.total_hours += hours[best.index];
      result.selected.push_back(
          {pool_posteriors[best.index].utt_id, c, best.distance, result.passes});
    }
    if (count == 0) break;
  }
  return result;
}

SelectionResult union_combine(const SelectionResult& a, const SelectionResult& b,
                              const Manifest& pool) {
  const auto by_id = index_by_id(pool);
  SelectionResult out;
  out.passes = std::max(a.passes, b.passes);
  std::unordered_set<std::string_view> seen;
  for (const auto* part : {&a, &b}) {
    for (const auto& s : part->selected) {
      auto it = by_id.find(s.utt_id);
      if (it == by_id.end()) {
        throw ValidationError("union_combine: '" + s.utt_id + "' is not in the pool manifest");
      }
      if (!seen.insert(s.utt_id).second) continue;
      out.selected.push_back(s);
      out.total_hours += pool.hours(pool.utterances[it->second]);
    }
  }
  return out;
}

SelectionResult random_select(const Manifest& pool, double budget_hours, std::uint64_t seed) {
  if (!(budget_hours > 0.0)) throw ValidationError("random_select: budget must be positive");
  const double total = pool.total_hours();
  if (budget_hours > total * (1.0 + 1e-12) + 1e-12) {
    throw ValidationError("random_select: budget " + std::to_string(budget_hours) +
                          " h exceeds pool total " + std::to_string(total) + " h");
  }
  std::vector<std::size_t> order(pool.utterances.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  SelectionResult out;
  for (std::size_t i : order) {
    const double h = pool.hours(pool.utterances[i]);
    // Slack so that budget == pool total keeps the last utterance despite
    // summation rounding.
    if (out.total_hours + h > budget_hours * (1.0 + 1e-12)) break;
    out.total_hours += h;
    out.selected.push_back({pool.utterances[i].id, std::nullopt, std::nullopt, 1});
  }
  out.passes = out.selected.empty() ? 0 : 1;
  return out;
}

void write_selection(const SelectionResult& result, const Manifest& pool,
                     const fs::path& manifest_path, const fs::path& audit_path) {
  const auto by_id = index_by_id(pool);
  Manifest subset;
  subset.role = pool.role;
  subset.fps = pool.fps;
  for (const auto& s : result.selected) {
    auto it = by_id.find(s.utt_id);
    if (it == by_id.end()) throw ValidationError("write_selection: unknown id '" + s.utt_id + "'");
    subset.utterances.push_back(pool.utterances[it->second]);
  }
  write_manifest(subset, manifest_path);

  std::ofstream out(audit_path, std::ios::binary);
  if (!out) throw IoError("cannot write audit file " + audit_path.string());
  out << "# passes=" << result.passes << '\n';
  for (const auto& s : result.selected) {
    out << s.utt_id << '\t' << (s.centroid ? std::to_string(*s.centroid) : "-") << '\t'
        << (s.distance ? text::format_sig9(*s.distance) : "-") << '\t' << s.pass << '\n';
  }
  if (!out) throw IoError("failed writing audit file " + audit_path.string());
}

SelectionResult read_audit(const fs::path& audit_path, const Manifest& pool) {
  std::ifstream in(audit_path);
  if (!in) throw IoError("cannot open audit file " + audit_path.string());
  const auto by_id = index_by_id(pool);
  SelectionResult out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = audit_path.string() + ":" + std::to_string(line_no);
    if (line.front() == '#') {
      auto body = text::trim(std::string_view(line).substr(1));
      if (body.starts_with("passes=")) {
        out.passes = text::parse_or_throw<std::size_t>(body.substr(7), where);
      }
      continue;
    }
    auto f = text::split(line, '\t');
    if (f.size() != 4) throw FormatError(where + ": expected 4 tab-separated fields");
    SelectedUtterance s;
    s.utt_id = std::string(f[0]);
    if (f[1] != "-") s.centroid = text::parse_or_throw<std::size_t>(f[1], where);
    if (f[2] != "-") s.distance = text::parse_or_throw<double>(f[2], where);
    s.pass = text::parse_or_throw<std::size_t>(f[3], where);
    auto it = by_id.find(s.utt_id);
    if (it == by_id.end()) throw ValidationError(where + ": '" + s.utt_id + "' is not in the pool");
    out.total_hours += pool.hours(pool.utterances[it->second]);
    out.selected.push_back(std::move(s));
  }
  return out;
}

}  // namespace alda
