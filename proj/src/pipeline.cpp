#include "alda/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "alda/corpus_io.hpp"
#include "alda/docmodel.hpp"
#include "alda/parallel.hpp"
#include "text_util.hpp"

namespace alda {

namespace fs = std::filesystem;

namespace {

// FNV-1a, 64 bit. Used only as a cache key, not for integrity.
class Hasher {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 1099511628211ULL;
    }
  }
  void str(std::string_view s) {
    const std::uint64_t n = s.size();
    bytes(&n, sizeof n);
    bytes(s.data(), s.size());
  }
  void file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string() + " for hashing");
    char buf[1 << 16];
    std::uint64_t total = 0;
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
      bytes(buf, static_cast<std::size_t>(in.gcount()));
      total += static_cast<std::uint64_t>(in.gcount());
    }
    bytes(&total, sizeof total);
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 14695981039346656037ULL;
};

std::string file_hash(const fs::path& path) {
  Hasher h;
  h.file(path);
  return h.hex();
}

std::string_view to_string(FrameSource s) {
  switch (s) {
    case FrameSource::kDev: return "dev";
    case FrameSource::kPool: return "pool";
    case FrameSource::kDevAndPool: return "dev+pool";
  }
  return "dev+pool";
}

std::string_view to_string(DocSource s) {
  switch (s) {
    case DocSource::kDev: return "dev";
    case DocSource::kPool: return "pool";
    case DocSource::kAll: return "all";
  }
  return "all";
}

// Exclusive ownership of a work directory for the lifetime of one run.
class WorkDirLock {
 public:
  explicit WorkDirLock(const fs::path& dir) : path_(dir / ".lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      throw Error("work directory " + dir.string() + " is locked by another run (remove " +
                  path_.string() + " if stale)");
    }
    std::fputs("locked\n", f);
    std::fclose(f);
  }
  ~WorkDirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  WorkDirLock(const WorkDirLock&) = delete;
  WorkDirLock& operator=(const WorkDirLock&) = delete;

 private:
  fs::path path_;
};

class StageRunner {
 public:
  StageRunner(fs::path work, std::ostream* log, std::vector<StageRecord>& records)
      : work_(std::move(work)), log_(log), records_(records) {
    fs::create_directories(work_ / "stages");
  }

  // Runs `body` unless the recorded key and artifact hashes are current.
  // Returns the stage key, which downstream stages fold into theirs.
  std::string run(const std::string& name, const std::string& upstream, const std::string& params,
                  const std::vector<std::string>& artifacts, const std::function<void()>& body) {
    Hasher h;
    h.str(name);
    h.str(upstream);
    h.str(params);
    const std::string key = h.hex();
    const fs::path key_file = work_ / "stages" / (name + ".key");

    std::string stale;
    if (fs::exists(key_file)) {
      std::ifstream in(key_file);
      std::string recorded;
      std::getline(in, recorded);
      if (recorded != "key " + key) {
        stale = "inputs or parameters changed";
      } else {
        std::map<std::string, std::string> hashes;
        std::string artifact, digest;
        while (in >> artifact >> digest) hashes[artifact] = digest;
        for (const auto& a : artifacts) {
          const fs::path p = work_ / a;
          if (!fs::exists(p)) {
            stale = "artifact " + a + " missing";
            break;
          }
          if (hashes[a] != file_hash(p)) {
            stale = "artifact " + a + " hash mismatch";
            break;
          }
        }
      }
      if (stale.empty()) {
        records_.push_back({name, true, "cached"});
        if (log_) *log_ << "[" << name << "] skipped (cached)\n";
        return key;
      }
    } else {
      stale = "no previous run";
    }

    if (log_) *log_ << "[" << name << "] running (" << stale << ")\n";
    fs::remove(key_file);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
    std::ofstream out(key_file, std::ios::binary);
    out << "key " << key << '\n';
    for (const auto& a : artifacts) out << a << ' ' << file_hash(work_ / a) << '\n';
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    records_.push_back({name, false, stale});
    if (log_) *log_ << "[" << name << "] done in " << text::format_sig9(secs) << " s\n";
    return key;
  }

 private:
  fs::path work_;
  std::ostream* log_;
  std::vector<StageRecord>& records_;
};

std::string params_of(std::initializer_list<std::pair<std::string_view, std::string>> kv) {
  std::string s;
  for (const auto& [k, v] : kv) {
    s += k;
    s += '=';
    s += v;
    s += ';';
  }
  return s;
}

std::string num(double v) { return text::format_shortest(v); }
std::string num(std::size_t v) { return std::to_string(v); }

FeatureMatrix vstack(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.rows() == 0) return b;
  if (b.rows() == 0) return a;
  if (a.cols() != b.cols()) throw ValidationError("dev and pool frame dimensions differ");
  std::vector<float> data = a.data();
  data.insert(data.end(), b.data().begin(), b.data().end());
  return FeatureMatrix(a.rows() + b.rows(), a.cols(), std::move(data));
}

std::vector<WeightedDocument> select_docs(DocSource source, const std::vector<WeightedDocument>& pool,
                                          const std::vector<WeightedDocument>& dev) {
  std::vector<WeightedDocument> out;
  if (source != DocSource::kPool) out.insert(out.end(), dev.begin(), dev.end());
  if (source != DocSource::kDev) out.insert(out.end(), pool.begin(), pool.end());
  return out;
}

std::vector<TokenSeq> token_seqs(const std::vector<AcousticDocument>& docs) {
  std::vector<TokenSeq> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(d.tokens);
  return out;
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
}

// State shared by run_pipeline and sweep_lambda.
struct Context {
  const PipelineConfig& cfg;
  fs::path work;
  StageRunner runner;
  Manifest pool;
  Manifest dev;
  std::string input_key;

  Context(const PipelineConfig& c, std::ostream* log, std::vector<StageRecord>& records)
      : cfg(c), work(c.work_dir), runner(c.work_dir, log, records) {}

  fs::path at(const std::string& name) const { return work / name; }
};

void load_inputs(Context& ctx) {
  try {
    ctx.pool = read_manifest(ctx.cfg.pool_manifest, {true, ManifestRole::kPool});
    ctx.dev = read_manifest(ctx.cfg.dev_manifest, {true, ManifestRole::kDev});
    if (ctx.pool.utterances.empty()) throw ValidationError("pool manifest is empty");
    if (ctx.dev.utterances.empty()) throw ValidationError("dev manifest is empty");
    Hasher h;
    for (const Manifest* m : {&ctx.pool, &ctx.dev}) {
      for (const auto& u : m->utterances) {
        h.str(u.id);
        h.str(u.domain_tag);
        h.str(u.duration_s ? num(*u.duration_s) : "-");
        h.file(u.feature_path);
        if (u.transcript_path) h.file(*u.transcript_path);
      }
      h.str(num(m->fps));
    }
    ctx.input_key = h.hex();
  } catch (const std::exception& e) {
    throw StageError("load-inputs", e.what());
  }
}

std::string run_acoustic_front(Context& ctx) {
  const auto& cfg = ctx.cfg;

  const std::string gmm_key = ctx.runner.run(
      "train-gmm", ctx.input_key,
      params_of({{"N", num(cfg.gmm_components)},
                 {"iters", num(cfg.gmm.max_iters)},
                 {"tol", num(cfg.gmm.tol)},
                 {"floor", num(cfg.gmm.var_floor_scale)},
                 {"subsample", num(cfg.gmm.seed_subsample)},
                 {"frames", num(cfg.gmm_max_frames)},
                 {"on", std::string(to_string(cfg.gmm_train_on))},
                 {"seed", std::to_string(cfg.seed)}}),
      {"gmm.bin", "gmm_loglik.txt"}, [&] {
        FeatureMatrix frames;
        const Manifest* dev[] = {&ctx.dev};
        const Manifest* pool[] = {&ctx.pool};
        switch (cfg.gmm_train_on) {
          case FrameSource::kDev: frames = sample_frames(dev, cfg.gmm_max_frames, cfg.seed); break;
          case FrameSource::kPool: frames = sample_frames(pool, cfg.gmm_max_frames, cfg.seed); break;
          case FrameSource::kDevAndPool: {
            auto d = sample_frames(dev, cfg.gmm_max_frames / 2, cfg.seed);
            auto p = sample_frames(pool, cfg.gmm_max_frames - d.rows(), cfg.seed + 1);
            frames = vstack(d, p);
            break;
          }
        }
        GmmConfig g = cfg.gmm;
        g.seed = cfg.seed;
        auto trained = train_gmm(frames, cfg.gmm_components, g);
        save_gmm(trained.model, ctx.at("gmm.bin"));
        std::string ll;
        for (double v : trained.log_likelihood) ll += text::format_shortest(v) + "\n";
        write_text_file(ctx.at("gmm_loglik.txt"), ll);
      });

  const std::string quant_key =
      ctx.runner.run("quantize", gmm_key, "", {"pool.tok", "dev.tok"}, [&] {
        const GmmModel gmm = load_gmm(ctx.at("gmm.bin"));
        for (const auto& [m, name] : {std::pair{&ctx.pool, "pool.tok"}, {&ctx.dev, "dev.tok"}}) {
          std::vector<AcousticDocument> docs(m->utterances.size());
          const std::size_t shard = 32;
          for_each_shard((docs.size() + shard - 1) / shard, [&](std::size_t s) {
            for (std::size_t i = s * shard; i < std::min(docs.size(), (s + 1) * shard); ++i) {
              const auto& u = m->utterances[i];
              docs[i] = quantize(gmm, read_features(u), u.id);
            }
          });
          write_token_corpus(docs, ctx.at(name));
        }
      });

  const std::string tfidf_key = ctx.runner.run(
      "tfidf", quant_key, params_of({{"idf", std::string(to_string(cfg.idf_source))}}),
      {"pool.wc", "dev.wc"}, [&] {
        const auto pool_docs = read_token_corpus(ctx.at("pool.tok"));
        const auto dev_docs = read_token_corpus(ctx.at("dev.tok"));
        const auto pool_seqs = token_seqs(pool_docs);
        const auto dev_seqs = token_seqs(dev_docs);
        const std::size_t V = cfg.gmm_components;
        CorpusStats stats{V, 0, std::vector<std::uint64_t>(V, 0)};
        if (cfg.idf_source != DocSource::kPool) merge_stats(stats, compute_stats(dev_seqs, V));
        if (cfg.idf_source != DocSource::kDev) merge_stats(stats, compute_stats(pool_seqs, V));
        for (const auto& [docs, name] : {std::pair{&pool_docs, "pool.wc"}, {&dev_docs, "dev.wc"}}) {
          std::vector<WeightedDocument> weighted;
          for (const auto& d : *docs) weighted.push_back(weigh_document(d.tokens, stats, d.utt_id));
          write_weighted_corpus(weighted, ctx.at(name));
        }
      });
  return tfidf_key;
}

// train-lda -> posteriors -> cluster for documents "<prefix>pool.wc" and
// "<prefix>dev.wc". Returns the cluster stage key.
std::string run_topic_stages(Context& ctx, const std::string& prefix, const std::string& upstream,
                             std::size_t vocab_size, std::size_t topics, double alpha) {
  const auto& cfg = ctx.cfg;
  const std::string stage = prefix.empty() ? "" : "text-";
  LdaConfig lda = cfg.lda;
  lda.n_topics = topics;
  lda.alpha = alpha;
  lda.seed = cfg.seed + 1;

  const std::string lda_key = ctx.runner.run(
      stage + "train-lda", upstream,
      params_of({{"V", num(vocab_size)},
                 {"K", num(topics)},
                 {"alpha", num(lda.alpha)},
                 {"eta", num(lda.eta)},
                 {"noise", num(lda.init_noise)},
                 {"em_tol", num(lda.em_tol)},
                 {"em_iters", num(lda.em_max_iters)},
                 {"doc_tol", num(lda.inference.tol)},
                 {"doc_iters", num(lda.inference.max_iters)},
                 {"on", std::string(to_string(cfg.lda_train_on))},
                 {"seed", std::to_string(lda.seed)}}),
      {prefix + "lda.bin", prefix + "lda_objective.txt"}, [&] {
        const auto pool = read_weighted_corpus(ctx.at(prefix + "pool.wc"));
        const auto dev = read_weighted_corpus(ctx.at(prefix + "dev.wc"));
        const auto docs = select_docs(cfg.lda_train_on, pool, dev);
        auto trained = train_lda(docs, vocab_size, lda);
        save_lda(trained.model, ctx.at(prefix + "lda.bin"));
        std::string obj;
        for (double v : trained.objective) obj += text::format_shortest(v) + "\n";
        write_text_file(ctx.at(prefix + "lda_objective.txt"), obj);
      });

  const std::string post_key =
      ctx.runner.run(stage + "posteriors", lda_key, "",
                     {prefix + "pool.post", prefix + "dev.post"}, [&] {
                       const LdaModel model = load_lda(ctx.at(prefix + "lda.bin"));
                       for (const char* part : {"pool", "dev"}) {
                         const auto docs = read_weighted_corpus(ctx.at(prefix + part + ".wc"));
                         write_posteriors(extract_posteriors(model, docs, lda.inference),
                                          ctx.at(prefix + part + ".post"));
                       }
                     });

  KMeansConfig km = cfg.cluster;
  km.seed = cfg.seed + 2;
  return ctx.runner.run(
      stage + "cluster", post_key,
      params_of({{"C", num(km.n_clusters)},
                 {"iters", num(km.max_iters)},
                 {"spherical", km.spherical ? "1" : "0"},
                 {"seed", std::to_string(km.seed)}}),
      {prefix + "centroids.post", prefix + "centroids.post.json"}, [&] {
        const auto dev = read_posteriors(ctx.at(prefix + "dev.post"));
        const auto set = kmeans(stack_posteriors(dev), km);
        write_centroids(set, ctx.at(prefix + "centroids.post"));
      });
}

std::string run_text_front(Context& ctx) {
  const auto& cfg = ctx.cfg;
  return ctx.runner.run(
      "text-tfidf", ctx.input_key,
      params_of({{"cap", num(cfg.text_vocab_cap)},
                 {"idf", std::string(to_string(cfg.idf_source))}}),
      {"text_vocab.txt", "text_pool.wc", "text_dev.wc"}, [&] {
        std::vector<std::string> pool_text, dev_text;
        for (const auto& u : ctx.pool.utterances) pool_text.push_back(load_transcript(u));
        for (const auto& u : ctx.dev.utterances) dev_text.push_back(load_transcript(u));
        std::vector<std::string> vocab_text;
        if (cfg.idf_source != DocSource::kPool) vocab_text.insert(vocab_text.end(), dev_text.begin(), dev_text.end());
        if (cfg.idf_source != DocSource::kDev) vocab_text.insert(vocab_text.end(), pool_text.begin(), pool_text.end());
        const TextVocab vocab = build_text_vocab(vocab_text, cfg.text_vocab_cap);
        if (vocab.size() == 0) throw ValidationError("no transcript words found for the text path");
        write_text_vocab(vocab, ctx.at("text_vocab.txt"));

        std::vector<TokenSeq> pool_seqs, dev_seqs;
        for (const auto& t : pool_text) pool_seqs.push_back(tokenize_transcript(t, vocab));
        for (const auto& t : dev_text) dev_seqs.push_back(tokenize_transcript(t, vocab));
        const std::size_t V = vocab.size();
        CorpusStats stats{V, 0, std::vector<std::uint64_t>(V, 0)};
        if (cfg.idf_source != DocSource::kPool) merge_stats(stats, compute_stats(dev_seqs, V));
        if (cfg.idf_source != DocSource::kDev) merge_stats(stats, compute_stats(pool_seqs, V));
        for (const auto& [m, seqs, name] :
             {std::tuple{&ctx.pool, &pool_seqs, "text_pool.wc"}, {&ctx.dev, &dev_seqs, "text_dev.wc"}}) {
          std::vector<WeightedDocument> weighted;
          for (std::size_t i = 0; i < seqs->size(); ++i) {
            weighted.push_back(weigh_document((*seqs)[i], stats, m->utterances[i].id));
          }
          write_weighted_corpus(weighted, ctx.at(name));
        }
      });
}

std::string run_select(Context& ctx, const std::string& prefix, const std::string& upstream,
                       double lambda, const std::string& out_stem) {
  const auto& cfg = ctx.cfg;
  SelectionConfig sel = cfg.selection;
  sel.lambda = lambda;
  const std::string stage = prefix.empty() ? "select" : "text-select";
  return ctx.runner.run(
      stage, upstream,
      params_of({{"lambda", num(lambda)},
                 {"max_hours", sel.max_hours ? num(*sel.max_hours) : std::string("-")}}),
      {out_stem + ".tsv", out_stem + ".audit"}, [&] {
        const auto posts = read_posteriors(ctx.at(prefix + "pool.post"));
        const auto centroids = read_centroids(ctx.at(prefix + "centroids.post"));
        const auto result = select(posts, ctx.pool, centroids, sel);
        write_selection(result, ctx.pool, ctx.at(out_stem + ".tsv"), ctx.at(out_stem + ".audit"));
      });
}

std::size_t text_vocab_size(const Context& ctx) {
  return read_text_vocab(ctx.at("text_vocab.txt")).size();
}

void prepare(const PipelineConfig& config) {
  config.validate();
  set_num_threads(config.threads);
  fs::create_directories(config.work_dir);
}

// ---------------------------------------------------------------------------
// Config file

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValidationError("config " + key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_value(const std::string& v, const std::string& key) {
  try {
    return text::parse_or_throw<T>(text::trim(v), "config " + key);
  } catch (const FormatError& e) {
    throw ValidationError(e.what());
  }
}

}  // namespace

PipelineConfig::PipelineConfig() {
  lda.n_topics = 2048;
  cluster.n_clusters = 512;
  selection.lambda = 0.2;
}

void PipelineConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("config: " + what);
  };
  need(!pool_manifest.empty() && fs::exists(pool_manifest),
       "pool manifest '" + pool_manifest.string() + "' does not exist");
  need(!dev_manifest.empty() && fs::exists(dev_manifest),
       "dev manifest '" + dev_manifest.string() + "' does not exist");
  need(!work_dir.empty(), "work_dir is required");
  need(gmm_components >= 1, "quantizer.components must be >= 1");
  need(gmm.max_iters >= 1, "quantizer.max_iters must be >= 1");
  need(gmm.tol > 0.0, "quantizer.tol must be positive");
  need(gmm.var_floor_scale > 0.0 && gmm.var_floor_scale < 1.0,
       "quantizer.var_floor_scale must lie in (0, 1)");
  need(gmm_max_frames >= gmm_components, "quantizer.max_frames must be >= components");
  need(gmm.seed_subsample >= gmm_components, "quantizer.seed_subsample must be >= components");
  need(text_vocab_cap >= 1, "docmodel.text_vocab_cap must be >= 1");
  need(lda.n_topics >= 1, "lda.topics must be >= 1");
  need(lda.alpha >= 0.0, "lda.alpha must be >= 0 (0 selects 50/topics)");
  need(lda.eta > 0.0, "lda.eta must be positive");
  need(lda.init_noise >= 0.0, "lda.init_noise must be >= 0");
  need(lda.em_tol > 0.0 && lda.inference.tol > 0.0, "lda tolerances must be positive");
  need(lda.em_max_iters >= 1 && lda.inference.max_iters >= 1, "lda iteration caps must be >= 1");
  need(cluster.n_clusters >= 1, "cluster.clusters must be >= 1");
  need(cluster.max_iters >= 1, "cluster.max_iters must be >= 1");
  try {
    selection.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  need(text_lambda == 0.0 || (text_lambda > 0.0 && text_lambda <= 1.0),
       "text.lambda must lie in (0, 1] (or 0 to reuse select.lambda)");
  need(text_alpha >= 0.0, "text.alpha must be >= 0 (0 reuses lda.alpha)");
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path q(p);
    return q.is_absolute() || base.empty() ? q : (base / q).lexically_normal();
  };

  PipelineConfig c;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"paths.pool_manifest", [&](auto& v, auto&) { c.pool_manifest = resolve(v); }},
      {"paths.dev_manifest", [&](auto& v, auto&) { c.dev_manifest = resolve(v); }},
      {"paths.work_dir", [&](auto& v, auto&) { c.work_dir = resolve(v); }},
      {"quantizer.components", [&](auto& v, auto& k) { c.gmm_components = parse_value<std::size_t>(v, k); }},
      {"quantizer.max_iters", [&](auto& v, auto& k) { c.gmm.max_iters = parse_value<std::size_t>(v, k); }},
      {"quantizer.tol", [&](auto& v, auto& k) { c.gmm.tol = parse_value<double>(v, k); }},
      {"quantizer.var_floor_scale", [&](auto& v, auto& k) { c.gmm.var_floor_scale = parse_value<double>(v, k); }},
      {"quantizer.seed_subsample", [&](auto& v, auto& k) { c.gmm.seed_subsample = parse_value<std::size_t>(v, k); }},
      {"quantizer.max_frames", [&](auto& v, auto& k) { c.gmm_max_frames = parse_value<std::size_t>(v, k); }},
      {"quantizer.train_on",
       [&](auto& v, auto& k) {
         if (v == "dev") c.gmm_train_on = FrameSource::kDev;
         else if (v == "pool") c.gmm_train_on = FrameSource::kPool;
         else if (v == "dev+pool") c.gmm_train_on = FrameSource::kDevAndPool;
         else throw ValidationError("config " + k + ": expected dev, pool or dev+pool");
       }},
      {"docmodel.idf_source",
       [&](auto& v, auto& k) {
         if (v == "dev") c.idf_source = DocSource::kDev;
         else if (v == "pool") c.idf_source = DocSource::kPool;
         else if (v == "all") c.idf_source = DocSource::kAll;
         else throw ValidationError("config " + k + ": expected dev, pool or all");
       }},
      {"docmodel.text_vocab_cap", [&](auto& v, auto& k) { c.text_vocab_cap = parse_value<std::size_t>(v, k); }},
      {"lda.topics", [&](auto& v, auto& k) { c.lda.n_topics = parse_value<std::size_t>(v, k); }},
      {"lda.alpha", [&](auto& v, auto& k) { c.lda.alpha = parse_value<double>(v, k); }},
      {"lda.eta", [&](auto& v, auto& k) { c.lda.eta = parse_value<double>(v, k); }},
      {"lda.init_noise", [&](auto& v, auto& k) { c.lda.init_noise = parse_value<double>(v, k); }},
      {"lda.em_tol", [&](auto& v, auto& k) { c.lda.em_tol = parse_value<double>(v, k); }},
      {"lda.em_max_iters", [&](auto& v, auto& k) { c.lda.em_max_iters = parse_value<std::size_t>(v, k); }},
      {"lda.doc_tol", [&](auto& v, auto& k) { c.lda.inference.tol = parse_value<double>(v, k); }},
      {"lda.doc_max_iters", [&](auto& v, auto& k) { c.lda.inference.max_iters = parse_value<std::size_t>(v, k); }},
      {"lda.train_on",
       [&](auto& v, auto& k) {
         if (v == "dev") c.lda_train_on = DocSource::kDev;
         else if (v == "pool") c.lda_train_on = DocSource::kPool;
         else if (v == "all") c.lda_train_on = DocSource::kAll;
         else throw ValidationError("config " + k + ": expected dev, pool or all");
       }},
      {"cluster.clusters", [&](auto& v, auto& k) { c.cluster.n_clusters = parse_value<std::size_t>(v, k); }},
      {"cluster.max_iters", [&](auto& v, auto& k) { c.cluster.max_iters = parse_value<std::size_t>(v, k); }},
      {"cluster.spherical", [&](auto& v, auto& k) { c.cluster.spherical = parse_bool(v, k); }},
      {"select.lambda", [&](auto& v, auto& k) { c.selection.lambda = parse_value<double>(v, k); }},
      {"select.max_hours",
       [&](auto& v, auto& k) {
         if (!v.empty() && v != "none") c.selection.max_hours = parse_value<double>(v, k);
       }},
      {"text.enabled", [&](auto& v, auto& k) { c.text_enabled = parse_bool(v, k); }},
      {"text.topics", [&](auto& v, auto& k) { c.text_topics = parse_value<std::size_t>(v, k); }},
      {"text.lambda", [&](auto& v, auto& k) { c.text_lambda = parse_value<double>(v, k); }},
      {"text.alpha", [&](auto& v, auto& k) { c.text_alpha = parse_value<double>(v, k); }},
      {"report.target_domain", [&](auto& v, auto&) { c.target_domain = v; }},
      {"run.seed", [&](auto& v, auto& k) { c.seed = parse_value<std::uint64_t>(v, k); }},
      {"run.threads", [&](auto& v, auto& k) { c.threads = parse_value<std::size_t>(v, k); }},
  };

  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ValidationError("config: key '" + section + "' must be inside a [section]");
    }
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      auto it = setters.find(full);
      if (it == setters.end()) throw ValidationError("config: unknown key " + full);
      it->second(std::string(text::trim(value.data())), full);
    }
  }
  return c;
}

std::string render_pipeline_config(const PipelineConfig& c) {
  std::ostringstream os;
  os << "[paths]\npool_manifest = " << c.pool_manifest.string()
     << "\ndev_manifest = " << c.dev_manifest.string() << "\nwork_dir = " << c.work_dir.string()
     << "\n\n[quantizer]\ncomponents = " << c.gmm_components << "\nmax_iters = " << c.gmm.max_iters
     << "\ntol = " << num(c.gmm.tol) << "\nvar_floor_scale = " << num(c.gmm.var_floor_scale)
     << "\nseed_subsample = " << c.gmm.seed_subsample << "\nmax_frames = " << c.gmm_max_frames
     << "\ntrain_on = " << to_string(c.gmm_train_on) << "\n\n[docmodel]\nidf_source = "
     << to_string(c.idf_source) << "\ntext_vocab_cap = " << c.text_vocab_cap
     << "\n\n[lda]\ntopics = " << c.lda.n_topics << "\nalpha = " << num(c.lda.alpha)
     << "\neta = " << num(c.lda.eta) << "\ninit_noise = " << num(c.lda.init_noise)
     << "\nem_tol = " << num(c.lda.em_tol) << "\nem_max_iters = " << c.lda.em_max_iters
     << "\ndoc_tol = " << num(c.lda.inference.tol) << "\ndoc_max_iters = "
     << c.lda.inference.max_iters << "\ntrain_on = " << to_string(c.lda_train_on)
     << "\n\n[cluster]\nclusters = " << c.cluster.n_clusters << "\nmax_iters = "
     << c.cluster.max_iters << "\nspherical = " << (c.cluster.spherical ? "true" : "false")
     << "\n\n[select]\nlambda = " << num(c.selection.lambda) << "\nmax_hours = "
     << (c.selection.max_hours ? num(*c.selection.max_hours) : std::string("none"))
     << "\n\n[text]\nenabled = " << (c.text_enabled ? "true" : "false")
     << "\ntopics = " << c.text_topics << "\nlambda = " << num(c.text_lambda)
     << "\nalpha = " << num(c.text_alpha)
     << "\n\n[report]\ntarget_domain = " << c.target_domain << "\n\n[run]\nseed = " << c.seed
     << "\nthreads = " << c.threads << "\n";
  return os.str();
}

PipelineResult run_pipeline(const PipelineConfig& config, std::ostream* log) {
  prepare(config);
  WorkDirLock lock(config.work_dir);
  PipelineResult result;
  Context ctx(config, log, result.stages);
  load_inputs(ctx);

  const std::string acoustic_front = run_acoustic_front(ctx);
  const std::string acoustic_cluster =
      run_topic_stages(ctx, "", acoustic_front, config.gmm_components, config.lda.n_topics,
                       config.lda.alpha);
  const std::string acoustic_sel =
      run_select(ctx, "", acoustic_cluster, config.selection.lambda, "selection_acoustic");

  std::string text_sel;
  if (config.text_enabled) {
    const std::string text_front = run_text_front(ctx);
    const std::size_t topics = config.text_topics ? config.text_topics : config.lda.n_topics;
    const std::string text_cluster =
        run_topic_stages(ctx, "text_", text_front, text_vocab_size(ctx), topics,
                         config.text_alpha > 0.0 ? config.text_alpha : config.lda.alpha);
    const double lambda = config.text_lambda > 0.0 ? config.text_lambda : config.selection.lambda;
    text_sel = run_select(ctx, "text_", text_cluster, lambda, "selection_text");
  }

  const std::string combine_key = ctx.runner.run(
      "combine", acoustic_sel + text_sel, "", {"selection.tsv", "selection.audit"}, [&] {
        auto acoustic = read_audit(ctx.at("selection_acoustic.audit"), ctx.pool);
        SelectionResult final_sel = acoustic;
        if (config.text_enabled) {
          final_sel = union_combine(acoustic, read_audit(ctx.at("selection_text.audit"), ctx.pool),
                                    ctx.pool);
        }
        write_selection(final_sel, ctx.pool, ctx.at("selection.tsv"), ctx.at("selection.audit"));
      });

  ctx.runner.run("report", combine_key, params_of({{"target", config.target_domain}}),
                 {"report.txt", "report.tsv", "comparison.txt"}, [&] {
                   const auto sel = read_audit(ctx.at("selection.audit"), ctx.pool);
                   const auto report = make_report(sel, ctx.pool);
                   write_text_file(ctx.at("report.txt"), render_report(report));
                   write_text_file(ctx.at("report.tsv"), report_tsv(report));
                   std::string comparison;
                   if (!config.target_domain.empty()) {
                     std::vector<std::pair<std::string, SelectionResult>> rows{
                         {"acoustic", read_audit(ctx.at("selection_acoustic.audit"), ctx.pool)}};
                     if (config.text_enabled) {
                       rows.emplace_back("text", read_audit(ctx.at("selection_text.audit"), ctx.pool));
                       rows.emplace_back("union", sel);
                     }
                     comparison = render_comparison(compare(rows, ctx.pool, config.target_domain));
                   }
                   write_text_file(ctx.at("comparison.txt"), comparison);
                 });

  result.acoustic = read_audit(ctx.at("selection_acoustic.audit"), ctx.pool);
  if (config.text_enabled) result.text = read_audit(ctx.at("selection_text.audit"), ctx.pool);
  result.selection = read_audit(ctx.at("selection.audit"), ctx.pool);
  result.report = make_report(result.selection, ctx.pool);
  result.selection_manifest = ctx.at("selection.tsv");
  result.audit_file = ctx.at("selection.audit");
  if (log) *log << render_report(result.report);
  return result;
}

std::vector<SweepRow> sweep_lambda(const PipelineConfig& config, const std::vector<double>& lambdas,
                                   std::ostream* log) {
  prepare(config);
  for (double l : lambdas) {
    SelectionConfig probe = config.selection;
    probe.lambda = l;
    probe.validate();
  }
  WorkDirLock lock(config.work_dir);
  std::vector<StageRecord> records;
  Context ctx(config, log, records);
  load_inputs(ctx);
  const std::string front = run_acoustic_front(ctx);
  run_topic_stages(ctx, "", front, config.gmm_components, config.lda.n_topics, config.lda.alpha);

  fs::create_directories(ctx.at("sweep"));
  const auto posts = read_posteriors(ctx.at("pool.post"));
  const auto centroids = read_centroids(ctx.at("centroids.post"));
  const double pool_hours = ctx.pool.total_hours();
  std::vector<SweepRow> rows;
  std::string summary = "lambda\tutterances\thours\tfraction_of_pool\n";
  for (double l : lambdas) {
    SelectionConfig sel = config.selection;
    sel.lambda = l;
    const auto result = select(posts, ctx.pool, centroids, sel);
    const std::string stem = "sweep/selection_" + num(l);
    write_selection(result, ctx.pool, ctx.at(stem + ".tsv"), ctx.at(stem + ".audit"));
    write_text_file(ctx.at(stem + ".report.tsv"), report_tsv(make_report(result, ctx.pool)));
    SweepRow row{l, result.selected.size(), result.total_hours, result.total_hours / pool_hours};
    summary += num(l) + "\t" + std::to_string(row.utterances) + "\t" + text::format_sig9(row.hours) +
               "\t" + text::format_sig9(row.fraction_of_pool) + "\n";
    rows.push_back(row);
  }
  write_text_file(ctx.at("sweep/summary.tsv"), summary);
  if (log) *log << summary;
  return rows;
}

}  // namespace alda
