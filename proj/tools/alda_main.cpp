// alda: command-line front end for the acoustic-LDA data selection toolkit.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "alda/corpus_io.hpp"
#include "alda/docmodel.hpp"
#include "alda/error.hpp"
#include "alda/gmm.hpp"
#include "alda/kmeans.hpp"
#include "alda/lda.hpp"
#include "alda/parallel.hpp"
#include "alda/pipeline.hpp"
#include "alda/report.hpp"
#include "alda/selector.hpp"

namespace fs = std::filesystem;
using namespace alda;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string work_dir;
  std::size_t threads = 1;
};

// Defaults come from --config when given, then global flags override.
PipelineConfig base_config(const Globals& g) {
  PipelineConfig cfg = g.config.empty() ? PipelineConfig{} : load_pipeline_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.work_dir.empty()) cfg.work_dir = g.work_dir;
  cfg.threads = g.threads;
  return cfg;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<TokenSeq> seqs_of(const std::vector<AcousticDocument>& docs) {
  std::vector<TokenSeq> out;
  for (const auto& d : docs) out.push_back(d.tokens);
  return out;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("cannot parse number '" + item + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acoustic LDA training-data selection"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Pipeline config file (sectioned key = value)");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--work-dir", g.work_dir, "Pipeline work directory");
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic corpus");
  std::string synth_spec, synth_out, synth_dump;
  SynthPreset preset;
  synth->add_option("--spec", synth_spec, "JSON corpus spec (default: built-in preset)");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--domains", preset.n_domains, "Preset: number of domains");
  synth->add_option("--per-domain", preset.pool_per_domain, "Preset: pool utterances per domain");
  synth->add_option("--dev", preset.dev_count, "Preset: dev utterances (domain 0)");
  synth->add_option("--dim", preset.frame_dim, "Preset: frame dimension");
  synth->add_option("--dump-spec", synth_dump, "Write the effective JSON spec here");

  // train-gmm
  auto* tgmm = app.add_subcommand("train-gmm", "Train the GMM codebook");
  std::vector<std::string> tgmm_manifests;
  std::string tgmm_out;
  std::optional<std::size_t> tgmm_n, tgmm_frames;
  tgmm->add_option("--manifest", tgmm_manifests, "Manifest(s) to draw frames from")->required();
  tgmm->add_option("--components", tgmm_n, "Number of Gaussians");
  tgmm->add_option("--max-frames", tgmm_frames, "Frame subsample size");
  tgmm->add_option("--out", tgmm_out, "Model file")->required();

  // quantize
  auto* quant = app.add_subcommand("quantize", "Map frames to acoustic words");
  std::string q_gmm, q_manifest, q_out;
  quant->add_option("--gmm", q_gmm)->required();
  quant->add_option("--manifest", q_manifest)->required();
  quant->add_option("--out", q_out, "Token corpus file")->required();

  // tfidf
  auto* tfidf = app.add_subcommand("tfidf", "Weight token corpora by tf-idf over their union");
  std::vector<std::string> tf_in, tf_out;
  std::size_t tf_vocab = 0;
  tfidf->add_option("--tokens", tf_in, "Token corpus file(s)")->required();
  tfidf->add_option("--out", tf_out, "Weighted corpus file(s), one per --tokens")->required();
  tfidf->add_option("--vocab-size", tf_vocab, "Vocabulary size (GMM components)")->required();

  // train-lda
  auto* tlda = app.add_subcommand("train-lda", "Train LDA by variational EM");
  std::vector<std::string> tl_in;
  std::string tl_out;
  std::optional<std::size_t> tl_k;
  std::size_t tl_vocab = 0;
  tlda->add_option("--weighted", tl_in, "Weighted corpus file(s)")->required();
  tlda->add_option("--vocab-size", tl_vocab)->required();
  tlda->add_option("--topics", tl_k);
  tlda->add_option("--out", tl_out)->required();

  // posteriors
  auto* posts = app.add_subcommand("posteriors", "Infer Dirichlet posteriors");
  std::string p_lda, p_in, p_out;
  posts->add_option("--lda", p_lda)->required();
  posts->add_option("--weighted", p_in)->required();
  posts->add_option("--out", p_out)->required();

  // cluster
  auto* clus = app.add_subcommand("cluster", "k-means over dev posteriors");
  std::string c_in, c_out;
  std::optional<std::size_t> c_k;
  clus->add_option("--posteriors", c_in)->required();
  clus->add_option("--clusters", c_k);
  clus->add_option("--out", c_out)->required();

  // select
  auto* sel = app.add_subcommand("select", "Threshold-gated greedy selection");
  std::string s_posts, s_manifest, s_cent, s_out, s_audit;
  std::optional<double> s_lambda, s_hours;
  sel->add_option("--posteriors", s_posts, "Pool posteriors")->required();
  sel->add_option("--manifest", s_manifest, "Pool manifest")->required();
  sel->add_option("--centroids", s_cent)->required();
  sel->add_option("--lambda", s_lambda);
  sel->add_option("--max-hours", s_hours);
  sel->add_option("--out", s_out, "Selected-utterance manifest")->required();
  sel->add_option("--audit", s_audit, "Audit file")->required();

  // combine
  auto* comb = app.add_subcommand("combine", "Union of two selections");
  std::string cb_manifest, cb_a, cb_b, cb_out, cb_audit;
  comb->add_option("--manifest", cb_manifest, "Pool manifest")->required();
  comb->add_option("--a", cb_a, "First audit file (provenance wins)")->required();
  comb->add_option("--b", cb_b, "Second audit file")->required();
  comb->add_option("--out", cb_out)->required();
  comb->add_option("--audit", cb_audit)->required();

  // random-select
  auto* rnd = app.add_subcommand("random-select", "Random baseline at an hour budget");
  std::string r_manifest, r_out, r_audit;
  double r_budget = 0.0;
  rnd->add_option("--manifest", r_manifest)->required();
  rnd->add_option("--budget-hours", r_budget)->required();
  rnd->add_option("--out", r_out)->required();
  rnd->add_option("--audit", r_audit)->required();

  // report
  auto* rep = app.add_subcommand("report", "Per-domain composition of a selection");
  std::string rp_manifest, rp_audit, rp_tsv;
  rep->add_option("--manifest", rp_manifest, "Pool manifest")->required();
  rep->add_option("--selection", rp_audit, "Audit file")->required();
  rep->add_option("--tsv", rp_tsv, "Also write tab-separated report here");

  // compare
  auto* cmp = app.add_subcommand("compare", "Target-domain recall/precision/enrichment");
  std::string cm_manifest, cm_target;
  std::vector<std::string> cm_sel;
  cmp->add_option("--manifest", cm_manifest, "Pool manifest with true domain tags")->required();
  cmp->add_option("--selection", cm_sel, "name=audit_file")->required();
  cmp->add_option("--target", cm_target, "Target domain tag")->required();

  // run / sweep-lambda
  auto* run = app.add_subcommand("run", "Full pipeline from --config");
  auto* sweep = app.add_subcommand("sweep-lambda", "Select + report across lambdas");
  std::string sw_lambdas;
  sweep->add_option("--lambdas", sw_lambdas, "Comma-separated lambdas")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    set_num_threads(g.threads);
    const std::uint64_t seed = g.seed.value_or(0);

    if (synth->parsed()) {
      SynthSpec spec = synth_spec.empty() ? make_preset_spec(preset, seed)
                                          : synth_spec_from_json(read_file(synth_spec));
      if (!synth_dump.empty()) {
        std::ofstream(synth_dump) << synth_spec_to_json(spec) << '\n';
      }
      auto manifests = generate_synthetic_corpus(spec, seed, synth_out);
      for (std::size_t i = 0; i < manifests.size(); ++i) {
        std::cout << (fs::path(synth_out) / (spec.sets[i].name + ".tsv")).string() << '\t'
                  << manifests[i].utterances.size() << " utterances\t"
                  << manifests[i].total_hours() << " h\n";
      }
    } else if (tgmm->parsed()) {
      PipelineConfig cfg = base_config(g);
      std::vector<Manifest> ms;
      for (const auto& m : tgmm_manifests) ms.push_back(read_manifest(m));
      std::vector<const Manifest*> ptrs;
      for (const auto& m : ms) ptrs.push_back(&m);
      const auto frames = sample_frames(ptrs, tgmm_frames.value_or(cfg.gmm_max_frames), seed);
      GmmConfig gc = cfg.gmm;
      gc.seed = seed;
      auto r = train_gmm(frames, tgmm_n.value_or(cfg.gmm_components), gc);
      save_gmm(r.model, tgmm_out);
      std::cerr << "trained " << r.model.n_components() << " components on " << frames.rows()
                << " frames in " << r.iterations << " iterations, log-likelihood "
                << r.log_likelihood.back() << '\n';
    } else if (quant->parsed()) {
      const GmmModel gmm = load_gmm(q_gmm);
      const Manifest m = read_manifest(q_manifest);
      std::vector<AcousticDocument> docs;
      for (const auto& u : m.utterances) docs.push_back(quantize(gmm, read_features(u), u.id));
      write_token_corpus(docs, q_out);
    } else if (tfidf->parsed()) {
      if (tf_in.size() != tf_out.size()) {
        throw ValidationError("tfidf: give one --out per --tokens");
      }
      std::vector<std::vector<AcousticDocument>> corpora;
      CorpusStats stats{tf_vocab, 0, std::vector<std::uint64_t>(tf_vocab, 0)};
      for (const auto& f : tf_in) {
        corpora.push_back(read_token_corpus(f));
        merge_stats(stats, compute_stats(seqs_of(corpora.back()), tf_vocab));
      }
      for (std::size_t i = 0; i < corpora.size(); ++i) {
        std::vector<WeightedDocument> w;
        for (const auto& d : corpora[i]) w.push_back(weigh_document(d.tokens, stats, d.utt_id));
        write_weighted_corpus(w, tf_out[i]);
      }
    } else if (tlda->parsed()) {
      PipelineConfig cfg = base_config(g);
      std::vector<WeightedDocument> docs;
      for (const auto& f : tl_in) {
        auto part = read_weighted_corpus(f);
        docs.insert(docs.end(), part.begin(), part.end());
      }
      LdaConfig lc = cfg.lda;
      lc.n_topics = tl_k.value_or(cfg.lda.n_topics);
      lc.seed = seed;
      auto r = train_lda(docs, tl_vocab, lc);
      save_lda(r.model, tl_out);
      std::cerr << "trained " << lc.n_topics << " topics in " << r.iterations
                << " EM iterations, objective " << r.objective.back() << '\n';
    } else if (posts->parsed()) {
      PipelineConfig cfg = base_config(g);
      const LdaModel model = load_lda(p_lda);
      write_posteriors(extract_posteriors(model, read_weighted_corpus(p_in), cfg.lda.inference),
                       p_out);
    } else if (clus->parsed()) {
      PipelineConfig cfg = base_config(g);
      KMeansConfig kc = cfg.cluster;
      kc.n_clusters = c_k.value_or(cfg.cluster.n_clusters);
      kc.seed = seed;
      const auto set = kmeans(stack_posteriors(read_posteriors(c_in)), kc);
      if (set.clamped) {
        std::cerr << "warning: clusters clamped to " << set.centroids.rows()
                  << " (number of vectors)\n";
      }
      write_centroids(set, c_out);
    } else if (sel->parsed()) {
      PipelineConfig cfg = base_config(g);
      SelectionConfig sc = cfg.selection;
      if (s_lambda) sc.lambda = *s_lambda;
      if (s_hours) sc.max_hours = *s_hours;
      sc.validate();
      const Manifest pool = read_manifest(s_manifest);
      const auto result = select(read_posteriors(s_posts), pool, read_centroids(s_cent), sc);
      write_selection(result, pool, s_out, s_audit);
      std::cout << result.selected.size() << " utterances, " << result.total_hours << " h, "
                << result.passes << " passes\n";
    } else if (comb->parsed()) {
      const Manifest pool = read_manifest(cb_manifest);
      const auto result = union_combine(read_audit(cb_a, pool), read_audit(cb_b, pool), pool);
      write_selection(result, pool, cb_out, cb_audit);
      std::cout << result.selected.size() << " utterances, " << result.total_hours << " h\n";
    } else if (rnd->parsed()) {
      const Manifest pool = read_manifest(r_manifest);
      const auto result = random_select(pool, r_budget, seed);
      write_selection(result, pool, r_out, r_audit);
      std::cout << result.selected.size() << " utterances, " << result.total_hours << " h\n";
    } else if (rep->parsed()) {
      const Manifest pool = read_manifest(rp_manifest);
      const auto report = make_report(read_audit(rp_audit, pool), pool);
      std::cout << render_report(report);
      if (!rp_tsv.empty()) std::ofstream(rp_tsv) << report_tsv(report);
    } else if (cmp->parsed()) {
      const Manifest pool = read_manifest(cm_manifest);
      std::vector<std::pair<std::string, SelectionResult>> rows;
      for (const auto& item : cm_sel) {
        auto eq = item.find('=');
        if (eq == std::string::npos) throw ValidationError("compare: expected name=audit_file");
        rows.emplace_back(item.substr(0, eq), read_audit(item.substr(eq + 1), pool));
      }
      std::cout << render_comparison(compare(rows, pool, cm_target));
    } else if (run->parsed()) {
      if (g.config.empty()) throw ValidationError("run: --config is required");
      const auto result = run_pipeline(base_config(g), &std::cerr);
      std::cout << result.selection_manifest.string() << '\n';
    } else if (sweep->parsed()) {
      if (g.config.empty()) throw ValidationError("sweep-lambda: --config is required");
      sweep_lambda(base_config(g), parse_list(sw_lambdas), &std::cout);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
