#include "alda/lda.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "alda/error.hpp"
#include "alda/parallel.hpp"
#include "alda/special.hpp"
#include "binary_io.hpp"
#include "text_util.hpp"

namespace alda {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kLdaMagic = "ALDA";
constexpr std::uint32_t kLdaVersion = 1;
constexpr std::size_t kMaxShards = 16;

void check_terms(const LdaModel& model, const WeightedDocument& doc) {
  for (const auto& e : doc.entries) {
    if (e.term >= model.vocab_size()) {
      throw ValidationError("lda: document '" + doc.utt_id + "' has term " +
                            std::to_string(e.term) + " outside vocabulary of " +
                            std::to_string(model.vocab_size()));
    }
  }
}

// phi row for one term given digamma(gamma); normalized in log space.
void update_phi_row(const LdaModel& model, std::uint32_t term, std::span<const double> dig,
                    std::span<double> row) {
  const std::size_t K = model.n_topics();
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    row[k] = dig[k] + model.log_beta(k, term);
    mx = std::max(mx, row[k]);
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    row[k] = std::exp(row[k] - mx);
    sum += row[k];
  }
  for (std::size_t k = 0; k < K; ++k) row[k] /= sum;
}

std::vector<double> normalized_log_row(std::span<const double> unnormalized) {
  double sum = 0.0;
  for (double v : unnormalized) sum += v;
  std::vector<double> out(unnormalized.size());
  const double log_sum = std::log(sum);
  for (std::size_t v = 0; v < out.size(); ++v) out[v] = std::log(unnormalized[v]) - log_sum;
  return out;
}

}  // namespace

void LdaModel::check_invariants() const {
  const std::size_t K = alpha.size();
  if (K == 0 || log_beta.rows() != K || log_beta.cols() == 0) {
    throw FormatError("lda: inconsistent model shape");
  }
  for (double a : alpha) {
    if (!(a > 0.0) || !std::isfinite(a)) throw FormatError("lda: alpha must be positive");
  }
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0.0;
    for (double lb : log_beta.row(k)) s += std::exp(lb);
    if (!(std::abs(s - 1.0) <= 1e-8)) {
      throw FormatError("lda: topic " + std::to_string(k) + " is not a distribution");
    }
  }
}

InferenceState infer_document(const LdaModel& model, const WeightedDocument& doc,
                              const InferenceConfig& config, std::span<const double> warm_gamma) {
  check_terms(model, doc);
  const std::size_t K = model.n_topics();
  const std::size_t n = doc.entries.size();
  InferenceState st;
  st.phi = Matrix<double>(n, K);
  st.gamma = model.alpha;
  if (n == 0) {
    st.converged = true;
    if (config.track_elbo) st.elbo_trace.push_back(elbo(model, doc, st));
    return st;
  }
  if (!warm_gamma.empty()) {
    if (warm_gamma.size() != K) throw ValidationError("infer_document: warm gamma has wrong size");
    st.gamma.assign(warm_gamma.begin(), warm_gamma.end());
  } else {
    const double share = doc.total_weight() / static_cast<double>(K);
    for (double& g : st.gamma) g += share;
  }

  std::vector<double> dig(K), next(K);
  for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
    for (std::size_t k = 0; k < K; ++k) dig[k] = digamma(st.gamma[k]);
    next = model.alpha;
    for (std::size_t t = 0; t < n; ++t) {
      auto row = st.phi.row(t);
      update_phi_row(model, doc.entries[t].term, dig, row);
      const double w = doc.entries[t].weight;
      for (std::size_t k = 0; k < K; ++k) next[k] += w * row[k];
    }
    double change = 0.0;
    for (std::size_t k = 0; k < K; ++k) change += std::abs(next[k] - st.gamma[k]);
    change /= static_cast<double>(K);
    st.gamma.swap(next);
    st.iterations = iter + 1;
    if (config.track_elbo) st.elbo_trace.push_back(elbo(model, doc, st));
    if (change < config.tol) {
      st.converged = true;
      break;
    }
  }
  return st;
}

double elbo(const LdaModel& model, const WeightedDocument& doc, const InferenceState& state) {
  const std::size_t K = model.n_topics();
  if (state.gamma.size() != K || state.phi.rows() != doc.entries.size() ||
      (state.phi.rows() > 0 && state.phi.cols() != K)) {
    throw ValidationError("elbo: state shape does not match model and document");
  }
  double alpha_sum = 0.0, gamma_sum = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    alpha_sum += model.alpha[k];
    gamma_sum += state.gamma[k];
  }
  const double dig_sum = digamma(gamma_sum);
  std::vector<double> elog(K);
  for (std::size_t k = 0; k < K; ++k) elog[k] = digamma(state.gamma[k]) - dig_sum;

  double bound = std::lgamma(alpha_sum) - std::lgamma(gamma_sum);
  for (std::size_t k = 0; k < K; ++k) {
    bound += std::lgamma(state.gamma[k]) - std::lgamma(model.alpha[k]) +
             (model.alpha[k] - state.gamma[k]) * elog[k];
  }
  for (std::size_t t = 0; t < doc.entries.size(); ++t) {
    const auto& e = doc.entries[t];
    double term = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double p = state.phi(t, k);
      if (p > 0.0) term += p * (elog[k] + model.log_beta(k, e.term) - std::log(p));
    }
    bound += e.weight * term;
  }
  return bound;
}

double resolved_alpha(const LdaConfig& config) {
  return config.alpha > 0.0 ? config.alpha : 50.0 / static_cast<double>(config.n_topics);
}

LdaModel initial_lda_model(std::size_t vocab_size, const LdaConfig& config) {
  if (config.n_topics == 0) throw ValidationError("lda: n_topics must be positive");
  if (vocab_size == 0) throw ValidationError("lda: vocabulary is empty");
  if (!(config.eta > 0.0)) throw ValidationError("lda: eta must be positive");
  const std::size_t K = config.n_topics;
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  LdaModel model;
  model.alpha.assign(K, resolved_alpha(config));
  model.log_beta = Matrix<double>(K, vocab_size);
  std::vector<double> row(vocab_size);
  for (std::size_t k = 0; k < K; ++k) {
    for (double& v : row) v = config.eta + config.init_noise * unit(rng);
    auto lrow = normalized_log_row(row);
    std::ranges::copy(lrow, model.log_beta.row(k).begin());
  }
  return model;
}

LdaTrainResult train_lda(std::span<const WeightedDocument> docs, std::size_t vocab_size,
                         const LdaConfig& config, const std::optional<LdaModel>& init) {
  if (config.n_topics == 0) throw ValidationError("train_lda: n_topics must be positive");
  const bool any_evidence = std::any_of(docs.begin(), docs.end(),
                                        [](const WeightedDocument& d) { return !d.entries.empty(); });
  if (!any_evidence) throw ValidationError("train_lda: corpus has no non-empty documents");

  LdaTrainResult result;
  if (init) {
    if (init->n_topics() != config.n_topics || init->vocab_size() != vocab_size) {
      throw ValidationError("train_lda: initial model shape does not match config");
    }
    result.model = *init;
  } else {
    result.model = initial_lda_model(vocab_size, config);
  }
  LdaModel& model = result.model;
  for (const auto& d : docs) check_terms(model, d);

  const std::size_t K = config.n_topics, V = vocab_size, D = docs.size();
  const std::size_t n_shards = std::min(kMaxShards, D);
  auto shard_begin = [&](std::size_t s) { return s * D / n_shards; };

  std::vector<Matrix<double>> shard_stats(n_shards);
  std::vector<double> shard_bound(n_shards);
  result.gammas.assign(D, {});
  InferenceConfig inference = config.inference;
  inference.track_elbo = false;
  double prev = -std::numeric_limits<double>::infinity();

  for (std::size_t iter = 0; iter < config.em_max_iters; ++iter) {
    // E-step. Gammas are warm-started from the previous iteration so the
    // objective cannot drop between EM iterations.
    for_each_shard(n_shards, [&](std::size_t s) {
      Matrix<double>& stats = shard_stats[s];
      stats = Matrix<double>(K, V);
      double bound = 0.0;
      for (std::size_t d = shard_begin(s); d < shard_begin(s + 1); ++d) {
        const auto& doc = docs[d];
        InferenceState st = infer_document(model, doc, inference, result.gammas[d]);
        bound += elbo(model, doc, st);
        for (std::size_t t = 0; t < doc.entries.size(); ++t) {
          const auto& e = doc.entries[t];
          for (std::size_t k = 0; k < K; ++k) stats(k, e.term) += e.weight * st.phi(t, k);
        }
        result.gammas[d] = std::move(st.gamma);
      }
      shard_bound[s] = bound;
    });

    double objective = 0.0;
    for (double b : shard_bound) objective += b;
    for (double lb : model.log_beta.data()) objective += config.eta * lb;
    result.objective.push_back(objective);
    result.iterations = iter + 1;
    if (iter > 0 && (objective - prev) < config.em_tol * std::abs(prev)) break;
    if (iter + 1 == config.em_max_iters) break;
    prev = objective;

    // M-step: smoothed, normalized expected counts.
    Matrix<double> total(K, V, config.eta);
    for (const auto& s : shard_stats) {
      for (std::size_t e = 0; e < total.data().size(); ++e) total.data()[e] += s.data()[e];
    }
    for (std::size_t k = 0; k < K; ++k) {
      auto lrow = normalized_log_row(total.row(k));
      std::ranges::copy(lrow, model.log_beta.row(k).begin());
    }
  }
  return result;
}

std::vector<PosteriorVector> extract_posteriors(const LdaModel& model,
                                                std::span<const WeightedDocument> docs,
                                                const InferenceConfig& config) {
  std::vector<PosteriorVector> out(docs.size());
  InferenceConfig cfg = config;
  cfg.track_elbo = false;
  const std::size_t shard = 64;
  for_each_shard((docs.size() + shard - 1) / shard, [&](std::size_t s) {
    for (std::size_t d = s * shard; d < std::min(docs.size(), (s + 1) * shard); ++d) {
      out[d] = {docs[d].utt_id, infer_document(model, docs[d], cfg).gamma};
    }
  });
  return out;
}

void save_lda(const LdaModel& model, const fs::path& path) {
  model.check_invariants();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write lda model " + path.string());
  detail::put_magic(out, kLdaMagic);
  detail::put<std::uint32_t>(out, kLdaVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.n_topics()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.vocab_size()));
  detail::put_array(out, std::span<const double>(model.alpha));
  detail::put_array(out, std::span<const double>(model.log_beta.data()));
  if (!out) throw IoError("failed writing lda model " + path.string());
}

LdaModel load_lda(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open lda model " + path.string());
  const std::string what = path.string();
  detail::expect_magic(in, kLdaMagic, what);
  if (detail::get<std::uint32_t>(in, what) != kLdaVersion) {
    throw FormatError(what + ": unsupported lda model version");
  }
  const auto K = detail::get<std::uint32_t>(in, what);
  const auto V = detail::get<std::uint32_t>(in, what);
  LdaModel m;
  m.alpha.resize(K);
  m.log_beta = Matrix<double>(K, V);
  detail::get_array(in, std::span<double>(m.alpha), what);
  detail::get_array(in, std::span<double>(m.log_beta.data()), what);
  if (!detail::at_eof(in)) throw FormatError(what + ": trailing bytes after payload");
  m.check_invariants();
  return m;
}

void write_posteriors(std::span<const PosteriorVector> posts, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write posteriors " + path.string());
  for (const auto& p : posts) {
    out << p.utt_id << '\t';
    for (std::size_t k = 0; k < p.gamma.size(); ++k) {
      if (k) out << ' ';
      out << text::format_sig9(p.gamma[k]);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing posteriors " + path.string());
}

std::vector<PosteriorVector> read_posteriors(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open posteriors " + path.string());
  std::vector<PosteriorVector> posts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) throw FormatError(where + ": expected id<TAB>values");
    PosteriorVector p{line.substr(0, tab), {}};
    for (auto tok : text::split(std::string_view(line).substr(tab + 1), ' ')) {
      if (!tok.empty()) p.gamma.push_back(text::parse_or_throw<double>(tok, where));
    }
    if (!posts.empty() && p.gamma.size() != posts.front().gamma.size()) {
      throw FormatError(where + ": inconsistent vector length");
    }
    posts.push_back(std::move(p));
  }
  return posts;
}

}  // namespace alda
