#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <sstream>

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
#include "alda/special.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace alda;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
py::array_t<T> to_numpy(const Matrix<T>& m) {
  py::array_t<T> out({m.rows(), m.cols()});
  if (!m.data().empty()) std::memcpy(out.mutable_data(), m.data().data(), m.data().size() * sizeof(T));
  return out;
}

template <typename T>
Matrix<T> from_numpy(const Array<T>& a, const char* what) {
  if (a.ndim() != 2) throw ValidationError(std::string(what) + ": expected a 2-d array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Matrix<T>(r, c, std::vector<T>(a.data(), a.data() + r * c));
}

template <typename T>
py::array_t<T> vec_to_numpy(const std::vector<T>& v) {
  py::array_t<T> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<PosteriorVector> posteriors_from(const std::vector<std::string>& ids, const Array<double>& g) {
  const Matrix<double> m = from_numpy(g, "posteriors");
  if (m.rows() != ids.size()) throw ValidationError("posteriors: ids and rows differ in number");
  std::vector<PosteriorVector> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], {m.row(i).begin(), m.row(i).end()}});
  return out;
}

py::tuple posteriors_to(const std::vector<PosteriorVector>& posts) {
  std::vector<std::string> ids;
  Matrix<double> m(posts.size(), posts.empty() ? 0 : posts.front().gamma.size());
  for (std::size_t i = 0; i < posts.size(); ++i) {
    ids.push_back(posts[i].utt_id);
    std::ranges::copy(posts[i].gamma, m.row(i).begin());
  }
  return py::make_tuple(ids, to_numpy(m));
}

py::dict metrics_dict(const SelectionMetrics& m) {
  py::dict d;
  d["name"] = m.name;
  d["utterances"] = m.utterances;
  d["hours"] = m.hours;
  d["recall"] = m.recall;
  d["precision"] = m.precision;
  d["enrichment"] = m.enrichment;
  return d;
}

}  // namespace

PYBIND11_MODULE(_alda, m) {
  m.doc() = "Acoustic LDA training-data selection";

  auto base = py::register_exception<Error>(m, "AldaError", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def("set_num_threads", &set_num_threads, py::arg("n"));
  m.def("digamma", &digamma, py::arg("x"));

  // corpus io
  py::class_<Utterance>(m, "Utterance")
      .def(py::init<>())
      .def_readwrite("id", &Utterance::id)
      .def_readwrite("feature_path", &Utterance::feature_path)
      .def_readwrite("num_frames", &Utterance::num_frames)
      .def_readwrite("frame_dim", &Utterance::frame_dim)
      .def_readwrite("duration_s", &Utterance::duration_s)
      .def_readwrite("domain_tag", &Utterance::domain_tag)
      .def_readwrite("transcript_path", &Utterance::transcript_path)
      .def("__repr__", [](const Utterance& u) { return "<Utterance " + u.id + " " + u.domain_tag + ">"; });

  py::class_<Manifest>(m, "Manifest")
      .def(py::init<>())
      .def_readwrite("utterances", &Manifest::utterances)
      .def_readwrite("fps", &Manifest::fps)
      .def("hours", &Manifest::hours)
      .def("total_hours", &Manifest::total_hours)
      .def("__len__", [](const Manifest& mf) { return mf.utterances.size(); });

  m.def(
      "read_manifest",
      [](const fs::path& p, bool validate_files) {
        ManifestReadOptions o;
        o.validate_files = validate_files;
        return read_manifest(p, o);
      },
      py::arg("path"), py::arg("validate_files") = false);
  m.def("write_manifest", &write_manifest, py::arg("manifest"), py::arg("path"));
  m.def("read_features", [](const fs::path& p) { return to_numpy(read_features(p)); }, py::arg("path"));
  m.def(
      "write_features",
      [](const Array<float>& a, const fs::path& p) { write_features(from_numpy(a, "features"), p); },
      py::arg("frames"), py::arg("path"));
  m.def(
      "synth",
      [](const fs::path& out, std::uint64_t seed, std::size_t domains, std::size_t per_domain,
         std::size_t dev, std::uint32_t dim) {
        SynthPreset p;
        p.n_domains = domains;
        p.pool_per_domain = per_domain;
        p.dev_count = dev;
        p.frame_dim = dim;
        return generate_synthetic_corpus(make_preset_spec(p, seed), seed, out);
      },
      py::arg("out_dir"), py::arg("seed") = 0, py::arg("domains") = 5, py::arg("per_domain") = 200,
      py::arg("dev") = 50, py::arg("dim") = 13);

  // quantizer
  py::class_<GmmModel>(m, "GmmModel")
      .def_property_readonly("weights", [](const GmmModel& g) { return vec_to_numpy(g.weights); })
      .def_property_readonly("means", [](const GmmModel& g) { return to_numpy(g.means); })
      .def_property_readonly("variances", [](const GmmModel& g) { return to_numpy(g.variances); })
      .def_property_readonly("n_components", &GmmModel::n_components);

  m.def(
      "train_gmm",
      [](const Array<float>& frames, std::size_t n, std::size_t max_iters, double tol, std::uint64_t seed) {
        GmmConfig c;
        c.max_iters = max_iters;
        c.tol = tol;
        c.seed = seed;
        const FeatureMatrix f = from_numpy(frames, "frames");
        GmmTrainResult r;
        {
          py::gil_scoped_release nogil;
          r = train_gmm(f, n, c);
        }
        return py::make_tuple(r.model, r.log_likelihood);
      },
      py::arg("frames"), py::arg("n_components"), py::arg("max_iters") = 50, py::arg("tol") = 1e-5,
      py::arg("seed") = 0, "Returns (model, per-iteration log-likelihood).");
  m.def(
      "gmm_posteriors",
      [](const GmmModel& g, const Array<double>& x) {
        return vec_to_numpy(gmm_posteriors(g, std::span<const double>(x.data(), x.size())));
      },
      py::arg("model"), py::arg("frame"));
  m.def(
      "quantize",
      [](const GmmModel& g, const Array<float>& frames) {
        return vec_to_numpy(quantize(g, from_numpy(frames, "frames"), "").tokens);
      },
      py::arg("model"), py::arg("frames"));
  m.def("save_gmm", &save_gmm, py::arg("model"), py::arg("path"));
  m.def("load_gmm", &load_gmm, py::arg("path"));

  // document model
  py::class_<WeightedDocument>(m, "WeightedDocument")
      .def(py::init([](std::string id, const std::vector<std::uint32_t>& terms,
                       const std::vector<std::uint64_t>& counts, const std::vector<double>& weights) {
             if (terms.size() != counts.size() || terms.size() != weights.size())
               throw ValidationError("WeightedDocument: terms, counts and weights differ in length");
             WeightedDocument d{std::move(id), {}};
             for (std::size_t i = 0; i < terms.size(); ++i) d.entries.push_back({terms[i], counts[i], weights[i]});
             return d;
           }),
           py::arg("utt_id"), py::arg("terms"), py::arg("counts"), py::arg("weights"))
      .def_readwrite("utt_id", &WeightedDocument::utt_id)
      .def_property_readonly("terms",
                             [](const WeightedDocument& d) {
                               std::vector<std::uint32_t> v;
                               for (const auto& e : d.entries) v.push_back(e.term);
                               return v;
                             })
      .def_property_readonly("counts",
                             [](const WeightedDocument& d) {
                               std::vector<std::uint64_t> v;
                               for (const auto& e : d.entries) v.push_back(e.count);
                               return v;
                             })
      .def_property_readonly("weights",
                             [](const WeightedDocument& d) {
                               std::vector<double> v;
                               for (const auto& e : d.entries) v.push_back(e.weight);
                               return v;
                             })
      .def("total_weight", &WeightedDocument::total_weight);

  py::class_<CorpusStats>(m, "CorpusStats")
      .def_readonly("vocab_size", &CorpusStats::vocab_size)
      .def_readonly("doc_count", &CorpusStats::doc_count)
      .def_readonly("doc_freq", &CorpusStats::doc_freq)
      .def("idf", &CorpusStats::idf);

  m.def(
      "compute_stats",
      [](const std::vector<TokenSeq>& docs, std::size_t v) { return compute_stats(docs, v); },
      py::arg("docs"), py::arg("vocab_size"));
  m.def("weigh_document", &weigh_document, py::arg("tokens"), py::arg("stats"), py::arg("utt_id") = "");
  m.def(
      "tfidf",
      [](const std::vector<TokenSeq>& docs, std::size_t v) {
        const CorpusStats s = compute_stats(docs, v);
        std::vector<WeightedDocument> out;
        for (std::size_t i = 0; i < docs.size(); ++i) out.push_back(weigh_document(docs[i], s, std::to_string(i)));
        return out;
      },
      py::arg("docs"), py::arg("vocab_size"), "Weigh every document with idf over the same list.");

  // lda
  py::class_<LdaModel>(m, "LdaModel")
      .def_property_readonly("alpha", [](const LdaModel& l) { return vec_to_numpy(l.alpha); })
      .def_property_readonly("log_beta", [](const LdaModel& l) { return to_numpy(l.log_beta); })
      .def_property_readonly("n_topics", &LdaModel::n_topics)
      .def_property_readonly("vocab_size", &LdaModel::vocab_size);

  m.def(
      "train_lda",
      [](const std::vector<WeightedDocument>& docs, std::size_t vocab, std::size_t topics, double alpha,
         double eta, double em_tol, std::size_t em_max_iters, std::uint64_t seed) {
        LdaConfig c;
        c.n_topics = topics;
        c.alpha = alpha;
        c.eta = eta;
        c.em_tol = em_tol;
        c.em_max_iters = em_max_iters;
        c.seed = seed;
        LdaTrainResult r;
        {
          py::gil_scoped_release nogil;
          r = train_lda(docs, vocab, c);
        }
        Matrix<double> g(r.gammas.size(), topics);
        for (std::size_t i = 0; i < r.gammas.size(); ++i) std::ranges::copy(r.gammas[i], g.row(i).begin());
        return py::make_tuple(r.model, r.objective, to_numpy(g));
      },
      py::arg("docs"), py::arg("vocab_size"), py::arg("n_topics"), py::arg("alpha") = 0.0,
      py::arg("eta") = 1e-2, py::arg("em_tol") = 1e-5, py::arg("em_max_iters") = 60, py::arg("seed") = 0,
      "Returns (model, per-iteration objective, gammas). alpha <= 0 means 50 / n_topics.");
  m.def(
      "infer_document",
      [](const LdaModel& l, const WeightedDocument& d, double tol, std::size_t max_iters) {
        InferenceConfig c;
        c.tol = tol;
        c.max_iters = max_iters;
        const InferenceState s = infer_document(l, d, c);
        py::dict out;
        out["gamma"] = vec_to_numpy(s.gamma);
        out["phi"] = to_numpy(s.phi);
        out["iterations"] = s.iterations;
        out["converged"] = s.converged;
        out["elbo"] = elbo(l, d, s);
        return out;
      },
      py::arg("model"), py::arg("doc"), py::arg("tol") = 1e-4, py::arg("max_iters") = 100);
  m.def(
      "elbo",
      [](const LdaModel& l, const WeightedDocument& d, const Array<double>& gamma, const Array<double>& phi) {
        InferenceState s;
        s.gamma.assign(gamma.data(), gamma.data() + gamma.size());
        s.phi = from_numpy(phi, "phi");
        return elbo(l, d, s);
      },
      py::arg("model"), py::arg("doc"), py::arg("gamma"), py::arg("phi"));
  m.def(
      "extract_posteriors",
      [](const LdaModel& l, const std::vector<WeightedDocument>& docs) {
        return posteriors_to(extract_posteriors(l, docs));
      },
      py::arg("model"), py::arg("docs"), "Returns (ids, gammas).");
  m.def("save_lda", &save_lda, py::arg("model"), py::arg("path"));
  m.def("load_lda", &load_lda, py::arg("path"));
  m.def("read_posteriors", [](const fs::path& p) { return posteriors_to(read_posteriors(p)); }, py::arg("path"));

  // cluster
  m.def(
      "kmeans",
      [](const Array<double>& pts, std::size_t n, std::uint64_t seed, std::size_t max_iters, bool spherical) {
        const CentroidSet s = kmeans(from_numpy(pts, "points"), {n, seed, max_iters, spherical});
        py::dict out;
        out["centroids"] = to_numpy(s.centroids);
        out["assignments"] = vec_to_numpy(s.assignments);
        out["sizes"] = vec_to_numpy(s.sizes);
        out["inertia"] = s.inertia;
        out["inertia_trace"] = s.inertia_trace;
        out["converged"] = s.converged;
        out["clamped"] = s.clamped;
        return out;
      },
      py::arg("points"), py::arg("n_clusters"), py::arg("seed") = 0, py::arg("max_iters") = 100,
      py::arg("spherical") = false);
  m.def("read_centroids", [](const fs::path& p) { return to_numpy(read_centroids(p)); }, py::arg("path"));

  // selection
  m.def(
      "cosine_distance",
      [](const Array<double>& a, const Array<double>& b) {
        return cosine_distance(std::span<const double>(a.data(), a.size()), std::span<const double>(b.data(), b.size()));
      },
      py::arg("a"), py::arg("b"));

  py::class_<SelectionResult>(m, "SelectionResult")
      .def(py::init<>())
      .def_readonly("total_hours", &SelectionResult::total_hours)
      .def_readonly("passes", &SelectionResult::passes)
      .def_property_readonly("ids",
                             [](const SelectionResult& r) {
                               std::vector<std::string> ids;
                               for (const auto& s : r.selected) ids.push_back(s.utt_id);
                               return ids;
                             })
      .def_property_readonly("selected",
                             [](const SelectionResult& r) {
                               py::list out;
                               for (const auto& s : r.selected)
                                 out.append(py::make_tuple(s.utt_id, s.centroid, s.distance, s.pass));
                               return out;
                             })
      .def("__len__", [](const SelectionResult& r) { return r.selected.size(); });

  m.def(
      "select",
      [](const std::vector<std::string>& ids, const Array<double>& gammas, const Manifest& pool,
         const Array<double>& centroids, double lambda, std::optional<double> max_hours) {
        return select(posteriors_from(ids, gammas), pool, from_numpy(centroids, "centroids"), {lambda, max_hours});
      },
      py::arg("ids"), py::arg("gammas"), py::arg("pool"), py::arg("centroids"), py::arg("lam"),
      py::arg("max_hours") = py::none());
  m.def("union_combine", &union_combine, py::arg("a"), py::arg("b"), py::arg("pool"));
  m.def("random_select", &random_select, py::arg("pool"), py::arg("budget_hours"), py::arg("seed") = 0);
  m.def("write_selection", &write_selection, py::arg("result"), py::arg("pool"), py::arg("manifest_path"),
        py::arg("audit_path"));
  m.def("read_audit", &read_audit, py::arg("path"), py::arg("pool"));

  // report
  m.def(
      "report",
      [](const SelectionResult& r, const Manifest& pool) { return render_report(make_report(r, pool)); },
      py::arg("selection"), py::arg("pool"));
  m.def(
      "evaluate_selection",
      [](const SelectionResult& r, const Manifest& pool, const std::string& target, std::string name) {
        return metrics_dict(evaluate_selection(std::move(name), r, pool, target));
      },
      py::arg("selection"), py::arg("pool"), py::arg("target_domain"), py::arg("name") = "selection");

  // pipeline
  m.def(
      "run_pipeline",
      [](const fs::path& config, std::optional<fs::path> work_dir, std::optional<std::uint64_t> seed) {
        PipelineConfig c = load_pipeline_config(config);
        if (work_dir) c.work_dir = *work_dir;
        if (seed) c.seed = *seed;
        std::ostringstream log;
        PipelineResult r;
        {
          py::gil_scoped_release nogil;
          r = run_pipeline(c, &log);
        }
        py::dict out;
        out["selection"] = r.selection;
        out["acoustic"] = r.acoustic;
        out["text"] = r.text;
        out["report"] = render_report(r.report);
        out["log"] = log.str();
        return out;
      },
      py::arg("config"), py::arg("work_dir") = py::none(), py::arg("seed") = py::none());
}
