#include "alda/corpus_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "alda/error.hpp"
#include "binary_io.hpp"
#include "text_util.hpp"

namespace alda {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kFeatureMagic = "ALDF";
constexpr std::uint32_t kFeatureVersion = 1;
constexpr std::uint64_t kFeatureHeaderBytes = 4 + 4 + 8 + 4;

std::string resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_absolute() || base.empty()) return path.lexically_normal().string();
  return (base / path).lexically_normal().string();
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace

std::string_view to_string(ManifestRole role) {
  switch (role) {
    case ManifestRole::kPool: return "pool";
    case ManifestRole::kDev: return "dev";
    case ManifestRole::kTest: return "test";
  }
  return "pool";
}

ManifestRole parse_role(std::string_view text) {
  if (text == "pool") return ManifestRole::kPool;
  if (text == "dev") return ManifestRole::kDev;
  if (text == "test") return ManifestRole::kTest;
  throw ValidationError("unknown manifest role '" + std::string(text) + "'");
}

double Manifest::hours(const Utterance& utt) const {
  if (utt.duration_s) return *utt.duration_s / 3600.0;
  return static_cast<double>(utt.num_frames) / fps / 3600.0;
}

double Manifest::total_hours() const {
  double total = 0.0;
  for (const auto& u : utterances) total += hours(u);
  return total;
}

std::optional<std::size_t> Manifest::find(std::string_view id) const {
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    if (utterances[i].id == id) return i;
  }
  return std::nullopt;
}

Manifest read_manifest(const fs::path& path, const ManifestReadOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  const std::string where = path.string();

  Manifest manifest;
  manifest.role = options.role;
  std::unordered_map<std::string, std::size_t> first_line;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      auto body = text::trim(std::string_view(line).substr(1));
      if (body.starts_with("fps=")) {
        double fps = 0.0;
        if (!parse_number(text::trim(body.substr(4)), fps) || !(fps > 0.0)) {
          throw FormatError(where + ":" + std::to_string(line_no) + ": invalid fps header");
        }
        manifest.fps = fps;
      } else if (body.starts_with("role=")) {
        manifest.role = parse_role(text::trim(body.substr(5)));
      }
      continue;
    }

    auto fields = text::split(line, '\t');
    auto fail = [&](const std::string& why) {
      return FormatError(where + ":" + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != 6 && fields.size() != 7) {
      throw fail("expected 6 or 7 tab-separated fields, got " + std::to_string(fields.size()));
    }
    Utterance utt;
    utt.id = std::string(fields[0]);
    if (utt.id.empty()) throw fail("empty utterance id");
    if (fields[1].empty()) throw fail("empty feature path");
    utt.feature_path = resolve(base, std::string(fields[1]));
    if (!parse_number(fields[2], utt.num_frames)) throw fail("invalid num_frames");
    if (!parse_number(fields[3], utt.frame_dim) || utt.frame_dim == 0) {
      throw fail("invalid frame_dim");
    }
    if (fields[4] != "-") {
      double d = 0.0;
      if (!parse_number(fields[4], d) || !(d >= 0.0) || !std::isfinite(d)) {
        throw fail("invalid duration_s");
      }
      utt.duration_s = d;
    }
    utt.domain_tag = std::string(fields[5]);
    if (fields.size() == 7 && !fields[6].empty()) {
      utt.transcript_path = resolve(base, std::string(fields[6]));
    }

    auto [it, inserted] = first_line.emplace(utt.id, line_no);
    if (!inserted) {
      throw FormatError(where + ": duplicate utterance id '" + utt.id + "' on lines " +
                        std::to_string(it->second) + " and " + std::to_string(line_no));
    }
    if (options.validate_files) {
      if (!fs::exists(utt.feature_path)) throw fail("missing feature file " + utt.feature_path);
      std::ifstream f(utt.feature_path, std::ios::binary);
      detail::expect_magic(f, kFeatureMagic, utt.feature_path);
      (void)detail::get<std::uint32_t>(f, utt.feature_path);
      auto frames = detail::get<std::uint64_t>(f, utt.feature_path);
      auto dim = detail::get<std::uint32_t>(f, utt.feature_path);
      if (frames != utt.num_frames || dim != utt.frame_dim) {
        throw fail("feature file shape " + std::to_string(frames) + "x" + std::to_string(dim) +
                   " does not match manifest");
      }
    }
    manifest.utterances.push_back(std::move(utt));
  }
  return manifest;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "# fps=" << text::format_shortest(manifest.fps) << "\n";
  out << "# role=" << to_string(manifest.role) << "\n";
  for (const auto& u : manifest.utterances) {
    out << u.id << '\t' << u.feature_path << '\t' << u.num_frames << '\t' << u.frame_dim << '\t'
        << (u.duration_s ? text::format_shortest(*u.duration_s) : std::string("-")) << '\t'
        << u.domain_tag;
    if (u.transcript_path) out << '\t' << *u.transcript_path;
    out << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

FeatureMatrix read_features(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path.string());
  const std::string what = path.string();
  detail::expect_magic(in, kFeatureMagic, what);
  auto version = detail::get<std::uint32_t>(in, what);
  if (version != kFeatureVersion) {
    throw FormatError(what + ": unsupported feature format version " + std::to_string(version));
  }
  auto frames = detail::get<std::uint64_t>(in, what);
  auto dim = detail::get<std::uint32_t>(in, what);
  if (dim == 0) throw FormatError(what + ": frame_dim is zero");

  std::error_code ec;
  auto size = fs::file_size(path, ec);
  const std::uint64_t expected = kFeatureHeaderBytes + frames * dim * sizeof(float);
  if (!ec && size < expected) {
    throw FormatError(what + ": truncated payload (" + std::to_string(size) + " bytes, expected " +
                      std::to_string(expected) + ")");
  }
  if (!ec && size > expected) {
    throw FormatError(what + ": trailing bytes after payload");
  }

  FeatureMatrix m(frames, dim);
  detail::get_array(in, std::span<float>(m.data()), what);
  for (float v : m.data()) {
    if (!std::isfinite(v)) throw FormatError(what + ": non-finite value in features");
  }
  return m;
}

FeatureMatrix read_features(const Utterance& utt) {
  auto m = read_features(fs::path(utt.feature_path));
  if (m.rows() != utt.num_frames || m.cols() != utt.frame_dim) {
    throw FormatError(utt.feature_path + ": shape " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()) + " does not match manifest entry for '" + utt.id +
                      "' (" + std::to_string(utt.num_frames) + "x" +
                      std::to_string(utt.frame_dim) + ")");
  }
  return m;
}

void write_features(const FeatureMatrix& matrix, const fs::path& path) {
  for (float v : matrix.data()) {
    if (!std::isfinite(v)) throw ValidationError("refusing to write non-finite features");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file " + path.string());
  detail::put_magic(out, kFeatureMagic);
  detail::put<std::uint32_t>(out, kFeatureVersion);
  detail::put<std::uint64_t>(out, matrix.rows());
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(matrix.cols()));
  detail::put_array(out, std::span<const float>(matrix.data()));
  if (!out) throw IoError("failed writing feature file " + path.string());
}

std::string load_transcript(const Utterance& utt) {
  if (!utt.transcript_path) return {};
  std::ifstream in(*utt.transcript_path);
  if (!in) throw IoError("cannot open transcript " + *utt.transcript_path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

void validate(const SynthSpec& spec) {
  if (spec.frame_dim == 0) throw ValidationError("synth: frame_dim must be positive");
  if (spec.domains.empty()) throw ValidationError("synth: at least one domain required");
  if (spec.min_frames > spec.max_frames) throw ValidationError("synth: min_frames > max_frames");
  if (spec.min_words > spec.max_words) throw ValidationError("synth: min_words > max_words");
  if (!(spec.fps > 0.0)) throw ValidationError("synth: fps must be positive");
  for (const auto& d : spec.domains) {
    if (d.components.empty()) {
      throw ValidationError("synth: domain '" + d.tag + "' has zero components");
    }
    for (const auto& c : d.components) {
      if (!(c.weight > 0.0)) throw ValidationError("synth: non-positive component weight");
      if (c.mean.size() != spec.frame_dim || c.variance.size() != spec.frame_dim) {
        throw ValidationError("synth: component dimension mismatch in domain '" + d.tag + "'");
      }
      for (double v : c.variance) {
        if (!(v > 0.0)) throw ValidationError("synth: non-positive variance in domain '" + d.tag + "'");
      }
    }
  }
  for (const auto& set : spec.sets) {
    for (const auto& [tag, n] : set.counts) {
      bool known = std::any_of(spec.domains.begin(), spec.domains.end(),
                               [&](const SynthDomain& d) { return d.tag == tag; });
      if (!known) throw ValidationError("synth: set '" + set.name + "' names unknown domain " + tag);
    }
  }
}

std::vector<Manifest> generate_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed,
                                                const fs::path& out) {
  validate(spec);
  const fs::path out_dir = fs::absolute(out).lexically_normal();
  fs::create_directories(out_dir / "feats");
  const bool with_text = std::any_of(spec.domains.begin(), spec.domains.end(),
                                     [](const SynthDomain& d) { return !d.words.empty(); }) ||
                         !spec.common_words.empty();
  if (with_text) fs::create_directories(out_dir / "text");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform_index = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  std::vector<Manifest> manifests;
  for (const auto& set : spec.sets) {
    Manifest manifest;
    manifest.role = set.role;
    manifest.fps = spec.fps;
    for (const auto& [tag, count] : set.counts) {
      const auto& domain = *std::find_if(spec.domains.begin(), spec.domains.end(),
                                         [&](const SynthDomain& d) { return d.tag == tag; });
      std::vector<double> weights;
      for (const auto& c : domain.components) weights.push_back(c.weight);
      std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());

      for (std::size_t i = 0; i < count; ++i) {
        Utterance utt;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%05zu", i);
        utt.id = set.name + "-" + tag + "-" + buf;
        utt.domain_tag = tag;
        const std::size_t frames = uniform_index(spec.min_frames, spec.max_frames);
        FeatureMatrix m(frames, spec.frame_dim);
        for (std::size_t t = 0; t < frames; ++t) {
          const auto& comp = domain.components[pick(rng)];
          for (std::size_t j = 0; j < spec.frame_dim; ++j) {
            m(t, j) = static_cast<float>(comp.mean[j] + std::sqrt(comp.variance[j]) * normal(rng));
          }
        }
        const std::string feat_rel = "feats/" + utt.id + ".aldf";
        write_features(m, out_dir / feat_rel);
        utt.feature_path = (out_dir / feat_rel).lexically_normal().string();
        utt.num_frames = frames;
        utt.frame_dim = spec.frame_dim;
        utt.duration_s = static_cast<double>(frames) / spec.fps;

        if (with_text) {
          const std::size_t n_words = uniform_index(spec.min_words, spec.max_words);
          std::string transcript;
          for (std::size_t w = 0; w < n_words; ++w) {
            const bool common = domain.words.empty() ||
                                (!spec.common_words.empty() && unit(rng) < spec.common_word_prob);
            const auto& bag = common ? spec.common_words : domain.words;
            if (!transcript.empty()) transcript += ' ';
            transcript += bag[uniform_index(0, bag.size() - 1)];
          }
          const std::string text_rel = "text/" + utt.id + ".txt";
          std::ofstream t(out_dir / text_rel, std::ios::binary);
          if (!t) throw IoError("cannot write transcript " + (out_dir / text_rel).string());
          t << transcript << '\n';
          utt.transcript_path = (out_dir / text_rel).lexically_normal().string();
        }
        manifest.utterances.push_back(std::move(utt));
      }
    }
    write_manifest(manifest, out_dir / (set.name + ".tsv"));
    manifests.push_back(std::move(manifest));
  }
  return manifests;
}

SynthSpec make_preset_spec(const SynthPreset& preset, std::uint64_t seed) {
  if (preset.n_domains == 0 || preset.components_per_domain == 0 || preset.frame_dim == 0) {
    throw ValidationError("synth preset: domains, components and frame_dim must be positive");
  }
  static const char* const kTags[] = {"meeting", "media", "audiobook", "telephony", "talks",
                                      "lectures", "command", "dictation"};
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SynthSpec spec;
  spec.frame_dim = preset.frame_dim;
  spec.min_frames = preset.min_frames;
  spec.max_frames = preset.max_frames;
  for (std::size_t w = 0; w < 40; ++w) spec.common_words.push_back("common" + std::to_string(w));
  spec.common_word_prob = 0.5;
  spec.min_words = 8;
  spec.max_words = 20;

  for (std::size_t d = 0; d < preset.n_domains; ++d) {
    SynthDomain domain;
    domain.tag = d < std::size(kTags) ? kTags[d] : "domain" + std::to_string(d);
    for (std::size_t c = 0; c < preset.components_per_domain; ++c) {
      SynthComponent comp;
      comp.weight = 0.5 + unit(rng);
      for (std::uint32_t j = 0; j < preset.frame_dim; ++j) {
        comp.mean.push_back(preset.mean_spread * normal(rng));
        comp.variance.push_back(0.5 + unit(rng));
      }
      domain.components.push_back(std::move(comp));
    }
    for (std::size_t w = 0; w < 30; ++w) domain.words.push_back(domain.tag + std::to_string(w));
    spec.domains.push_back(std::move(domain));
  }

  SynthSet pool{"pool", ManifestRole::kPool, {}};
  for (const auto& d : spec.domains) pool.counts.emplace_back(d.tag, preset.pool_per_domain);
  SynthSet dev{"dev", ManifestRole::kDev, {{spec.domains[0].tag, preset.dev_count}}};
  spec.sets = {pool, dev};
  return spec;
}

// ---------------------------------------------------------------------------
// JSON

using nlohmann::json;

std::string synth_spec_to_json(const SynthSpec& spec) {
  json j;
  j["frame_dim"] = spec.frame_dim;
  j["fps"] = spec.fps;
  j["min_frames"] = spec.min_frames;
  j["max_frames"] = spec.max_frames;
  j["common_words"] = spec.common_words;
  j["common_word_prob"] = spec.common_word_prob;
  j["min_words"] = spec.min_words;
  j["max_words"] = spec.max_words;
  j["domains"] = json::array();
  for (const auto& d : spec.domains) {
    json jd{{"tag", d.tag}, {"words", d.words}, {"components", json::array()}};
    for (const auto& c : d.components) {
      jd["components"].push_back({{"weight", c.weight}, {"mean", c.mean}, {"variance", c.variance}});
    }
    j["domains"].push_back(std::move(jd));
  }
  j["sets"] = json::array();
  for (const auto& s : spec.sets) {
    json counts = json::object();
    for (const auto& [tag, n] : s.counts) counts[tag] = n;
    j["sets"].push_back({{"name", s.name}, {"role", to_string(s.role)}, {"counts", counts}});
  }
  return j.dump(2);
}

SynthSpec synth_spec_from_json(std::string_view text) {
  SynthSpec spec;
  try {
    auto j = json::parse(text);
    spec.frame_dim = j.at("frame_dim").get<std::uint32_t>();
    spec.fps = j.value("fps", 100.0);
    spec.min_frames = j.at("min_frames").get<std::size_t>();
    spec.max_frames = j.at("max_frames").get<std::size_t>();
    spec.common_words = j.value("common_words", std::vector<std::string>{});
    spec.common_word_prob = j.value("common_word_prob", 0.3);
    spec.min_words = j.value("min_words", std::size_t{5});
    spec.max_words = j.value("max_words", std::size_t{15});
    for (const auto& jd : j.at("domains")) {
      SynthDomain d;
      d.tag = jd.at("tag").get<std::string>();
      d.words = jd.value("words", std::vector<std::string>{});
      for (const auto& jc : jd.at("components")) {
        d.components.push_back({jc.value("weight", 1.0), jc.at("mean").get<std::vector<double>>(),
                                jc.at("variance").get<std::vector<double>>()});
      }
      spec.domains.push_back(std::move(d));
    }
    // nlohmann's default object is key-sorted; set counts keep domain order.
    for (const auto& js : j.at("sets")) {
      SynthSet s;
      s.name = js.at("name").get<std::string>();
      s.role = parse_role(js.value("role", std::string("pool")));
      const auto& counts = js.at("counts");
      for (const auto& d : spec.domains) {
        if (counts.contains(d.tag)) s.counts.emplace_back(d.tag, counts.at(d.tag).get<std::size_t>());
      }
      for (const auto& [tag, _] : counts.items()) {
        bool known = std::any_of(spec.domains.begin(), spec.domains.end(),
                                 [&](const SynthDomain& d) { return d.tag == tag; });
        if (!known) throw ValidationError("synth: set '" + s.name + "' names unknown domain " + tag);
      }
      spec.sets.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("synth spec: ") + e.what());
  }
  validate(spec);
  return spec;
}

}  // namespace alda
