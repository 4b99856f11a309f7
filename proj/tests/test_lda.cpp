#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>

#include "alda/error.hpp"
#include "alda/lda.hpp"
#include "alda/special.hpp"
#include "oracles.hpp"

using namespace alda;

namespace {

double fixed_point_residual(const LdaModel& m, const WeightedDocument& doc, const InferenceState& s) {
  double worst = 0.0;
  for (std::size_t k = 0; k < m.n_topics(); ++k) {
    double g = m.alpha[k];
    for (std::size_t t = 0; t < doc.entries.size(); ++t) g += doc.entries[t].weight * s.phi(t, k);
    worst = std::max(worst, std::abs(s.gamma[k] - g));
  }
  return worst;
}

LdaConfig small_config(std::size_t k, std::uint64_t seed = 1) {
  LdaConfig c;
  c.n_topics = k;
  c.seed = seed;
  c.em_max_iters = 25;
  return c;
}

}  // namespace

TEST_SUITE("special") {

TEST_CASE("digamma against high-precision references") {
  // psi(x) to 20 significant digits
  const std::pair<double, double> ref[] = {
      {1e-6, -1000000.5772140199687},   {0.001, -1000.5755719318103005},
      {0.1, -10.423754940411076795},     {0.5, -1.9635100260214234794},
      {1, -0.57721566490153286061},      {1.5, 0.036489973978576520559},
      {2, 0.42278433509846713939},       {3.7, 1.1671535393615113859},
      {9.99, 2.2507003728312010995},     {10, 2.2517525890667211076},
      {10.5, 2.3030010342976863753},     {42, 3.7257176179372821503},
      {1000, 6.9072551956488120521},     {123456.789, 11.723642437180376626},
      {1e6, 13.815510057964190771},
  };
  for (auto [x, want] : ref) {
    CAPTURE(x);
    CHECK(std::abs(digamma(x) - want) <= 1e-10 * std::abs(want));
  }
}

TEST_CASE("digamma recurrence and agreement with boost") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> logx(-6.0, 6.0);
  for (int i = 0; i < 2000; ++i) {
    const double x = std::pow(10.0, logx(rng));
    CHECK(std::abs(digamma(x + 1) - digamma(x) - 1 / x) <= 1e-10 * std::max(1.0, 1 / x));
    const double b = boost::math::digamma(x);
    CHECK(std::abs(digamma(x) - b) <= 1e-10 * std::max(1.0, std::abs(b)));
  }
}

}  // TEST_SUITE

TEST_SUITE("lda") {

TEST_CASE("empty document") {
  std::mt19937_64 rng(1);
  const LdaModel m = oracle::random_lda_model(3, 5, 0.7, rng);
  const WeightedDocument doc{"e", {}};
  const InferenceState s = infer_document(m, doc);
  CHECK(s.gamma == m.alpha);
  CHECK(s.phi.rows() == 0);
  CHECK(elbo(m, doc, s) == doctest::Approx(0.0));
}

TEST_CASE("single topic") {
  std::mt19937_64 rng(1);
  const LdaModel m = oracle::random_lda_model(1, 6, 2.5, rng);
  const WeightedDocument doc = oracle::random_document(6, 4, rng);
  const InferenceState s = infer_document(m, doc);
  CHECK(s.gamma[0] == doctest::Approx(2.5 + doc.total_weight()).epsilon(1e-12));
  for (std::size_t t = 0; t < s.phi.rows(); ++t) CHECK(s.phi(t, 0) == 1.0);
}

TEST_CASE("fixed point, simplex rows and ascent on random pairs") {
  std::mt19937_64 rng(7);
  InferenceConfig cfg;
  cfg.track_elbo = true;
  cfg.tol = 1e-10;
  cfg.max_iters = 100000;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t K = 2 + trial % 5;
    const LdaModel m = oracle::random_lda_model(K, 12, 0.1 + 0.3 * (trial % 4), rng);
    const WeightedDocument doc = oracle::random_document(12, 8, rng);
    const InferenceState s = infer_document(m, doc, cfg);
    CHECK(s.converged);
    CHECK(fixed_point_residual(m, doc, s) < 1e-8);
    for (std::size_t t = 0; t < s.phi.rows(); ++t) {
      double sum = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        CHECK(s.phi(t, k) >= 0.0);
        sum += s.phi(t, k);
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
    for (std::size_t i = 1; i < s.elbo_trace.size(); ++i) {
      CHECK(s.elbo_trace[i] >= s.elbo_trace[i - 1] - 1e-8 * std::max(1.0, std::abs(s.elbo_trace[i - 1])));
    }
    double gsum = 0.0, asum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      gsum += s.gamma[k];
      asum += m.alpha[k];
    }
    CHECK(gsum >= asum);
  }
}

TEST_CASE("bound matches the independent evaluation") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const LdaModel m = oracle::random_lda_model(2, 4, 0.5 + trial * 0.1, rng);
    const WeightedDocument doc = oracle::random_document(4, 3, rng);
    // also at a non-converged state
    InferenceConfig one;
    one.max_iters = 1;
    for (const InferenceState& s : {infer_document(m, doc), infer_document(m, doc, one)}) {
      const double got = elbo(m, doc, s);
      const double want = oracle::reference_elbo(m, doc, s.gamma, s.phi);
      CHECK(std::abs(got - want) <= 1e-8 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST_CASE("warm start reaches the same fixed point") {
  std::mt19937_64 rng(2);
  const LdaModel m = oracle::random_lda_model(4, 10, 0.5, rng);
  const WeightedDocument doc = oracle::random_document(10, 6, rng);
  InferenceConfig cfg;
  cfg.tol = 1e-12;
  cfg.max_iters = 2000;
  const auto cold = infer_document(m, doc, cfg);
  const std::vector<double> warm{5.0, 0.6, 0.6, 0.6};
  const auto hot = infer_document(m, doc, cfg, warm);
  for (std::size_t k = 0; k < 4; ++k) CHECK(hot.gamma[k] == doctest::Approx(cold.gamma[k]).epsilon(1e-6));
}

TEST_CASE("one topic training has a closed form") {
  std::mt19937_64 rng(5);
  std::vector<WeightedDocument> docs;
  for (int i = 0; i < 10; ++i) docs.push_back(oracle::random_document(7, 5, rng));
  auto cfg = small_config(1);
  const auto r = train_lda(docs, 7, cfg);
  std::vector<double> expect(7, cfg.eta);
  for (const auto& d : docs)
    for (const auto& e : d.entries) expect[e.term] += e.weight;
  const double total = std::accumulate(expect.begin(), expect.end(), 0.0);
  for (std::size_t v = 0; v < 7; ++v) CHECK(std::exp(r.model.log_beta(0, v)) == doctest::Approx(expect[v] / total).epsilon(1e-12));
}

TEST_CASE("training objective is monotone and rows stay on the simplex") {
  const auto corpus = oracle::generate_lda_corpus(120, 12, 3, 0.3, 40, 4);
  auto cfg = small_config(3, 8);
  cfg.em_tol = 0.0;
  const auto r = train_lda(corpus.docs, 12, cfg);
  CHECK(r.iterations == cfg.em_max_iters);
  for (std::size_t i = 1; i < r.objective.size(); ++i) {
    CHECK(r.objective[i] >= r.objective[i - 1] - 1e-6 * std::abs(r.objective[i - 1]));
  }
  CHECK_NOTHROW(r.model.check_invariants());
  CHECK(r.gammas.size() == corpus.docs.size());
}

TEST_CASE("recovers near-orthogonal topics") {
  const auto corpus = oracle::generate_lda_corpus(300, 30, 3, 0.2, 60, 21);
  const auto r = train_lda(corpus.docs, 30, small_config(3, 2));
  for (double c : oracle::matched_topic_cosines(corpus.beta, r.model.log_beta)) CHECK(c >= 0.8);
}

TEST_CASE("training is deterministic") {
  const auto corpus = oracle::generate_lda_corpus(60, 9, 3, 0.5, 20, 3);
  const auto a = train_lda(corpus.docs, 9, small_config(3, 4));
  const auto b = train_lda(corpus.docs, 9, small_config(3, 4));
  CHECK(a.model == b.model);
  const auto c = train_lda(corpus.docs, 9, small_config(3, 5));
  CHECK_FALSE(a.model == c.model);
}

TEST_CASE("vocabulary permutation permutes the topics' columns") {
  const std::size_t V = 12;
  const auto corpus = oracle::generate_lda_corpus(50, V, 3, 0.5, 25, 9);
  std::vector<std::uint32_t> perm(V);
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(1));

  auto cfg = small_config(3, 6);
  const LdaModel init = initial_lda_model(V, cfg);
  LdaModel init_p = init;
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t v = 0; v < V; ++v) init_p.log_beta(k, perm[v]) = init.log_beta(k, v);
  std::vector<WeightedDocument> docs_p;
  for (const auto& d : corpus.docs) {
    WeightedDocument p{d.utt_id, {}};
    for (auto e : d.entries) {
      e.term = perm[e.term];
      p.entries.push_back(e);
    }
    std::sort(p.entries.begin(), p.entries.end(), [](auto& a, auto& b) { return a.term < b.term; });
    docs_p.push_back(p);
  }
  const auto a = train_lda(corpus.docs, V, cfg, init);
  const auto b = train_lda(docs_p, V, cfg, init_p);
  REQUIRE(a.iterations == b.iterations);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t v = 0; v < V; ++v)
      CHECK(b.model.log_beta(k, perm[v]) == doctest::Approx(a.model.log_beta(k, v)).epsilon(1e-9));
  for (std::size_t d = 0; d < a.gammas.size(); ++d)
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(b.gammas[d][k] == doctest::Approx(a.gammas[d][k]).epsilon(1e-9));
}

TEST_CASE("invalid training input") {
  const std::vector<WeightedDocument> empty{{"a", {}}, {"b", {}}};
  CHECK_THROWS_AS(train_lda(empty, 4, small_config(2)), ValidationError);
  const std::vector<WeightedDocument> one{{"a", {{1, 1, 1.0}}}};
  CHECK_THROWS_AS(train_lda(one, 4, small_config(0)), ValidationError);
  CHECK_THROWS_AS(train_lda(std::vector<WeightedDocument>{{"a", {{9, 1, 1.0}}}}, 4, small_config(2)),
                  ValidationError);
  CHECK(resolved_alpha(small_config(8)) == doctest::Approx(50.0 / 8));
}

TEST_CASE("posteriors") {
  std::mt19937_64 rng(3);
  const LdaModel m = oracle::random_lda_model(3, 8, 0.4, rng);
  const WeightedDocument d = oracle::random_document(8, 5, rng);
  std::vector<WeightedDocument> docs{d, {"empty", {}}, d};
  docs[2].utt_id = "again";
  const auto posts = extract_posteriors(m, docs);
  REQUIRE(posts.size() == 3);
  CHECK(posts[0].utt_id == d.utt_id);
  CHECK(posts[1].gamma == m.alpha);
  CHECK(posts[2].gamma == posts[0].gamma);

  oracle::TempDir dir;
  write_posteriors(posts, dir / "p.post");
  const auto back = read_posteriors(dir / "p.post");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].utt_id == posts[i].utt_id);
    for (std::size_t k = 0; k < 3; ++k) CHECK(back[i].gamma[k] == doctest::Approx(posts[i].gamma[k]).epsilon(1e-8));
  }
  std::ofstream(dir / "ragged.post") << "a\t1 2 3\nb\t1 2\n";
  CHECK_THROWS_AS(read_posteriors(dir / "ragged.post"), FormatError);
}

TEST_CASE("model file round trip and corruption") {
  oracle::TempDir dir;
  std::mt19937_64 rng(9);
  const LdaModel m = oracle::random_lda_model(4, 6, 0.3, rng);
  save_lda(m, dir / "m.bin");
  CHECK(load_lda(dir / "m.bin") == m);

  std::ifstream in(dir / "m.bin", std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string good = ss.str();
  CHECK(good.substr(0, 4) == "ALDA");
  CHECK(good.size() == 16 + 8 * 4 + 8 * 24);
  auto write = [&](const std::string& s) { std::ofstream(dir / "bad.bin", std::ios::binary) << s; };
  write(good.substr(0, good.size() - 1));
  CHECK_THROWS_AS(load_lda(dir / "bad.bin"), FormatError);
  std::string row = good;
  const double zero = 0.0;  // log 1 in every cell of row 0: not a distribution
  for (int v = 0; v < 6; ++v) std::memcpy(row.data() + 48 + 8 * v, &zero, 8);
  write(row);
  CHECK_THROWS_AS(load_lda(dir / "bad.bin"), FormatError);
  std::string alpha = good;
  const double neg = -1.0;
  std::memcpy(alpha.data() + 16, &neg, 8);
  write(alpha);
  CHECK_THROWS_AS(load_lda(dir / "bad.bin"), FormatError);
}

}  // TEST_SUITE
