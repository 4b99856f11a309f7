#pragma once

// Corpus manifests, binary feature files and the labeled synthetic corpus
// generator used for desk-scale experiments.
//
// Manifest lines are tab separated:
//   id  feature_path  num_frames  frame_dim  duration_s  domain_tag  [transcript_path]
// `#` starts a comment line; `# fps=<float>` and `# role=<pool|dev|test>`
// are recognized header comments. A duration of `-` means "absent" and is
// derived from num_frames / fps when hours are needed.
//
// Feature files: magic "ALDF", u32 version (1), u64 num_frames,
// u32 frame_dim, then num_frames*frame_dim f32 values row-major, all
// little-endian, no padding.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "alda/matrix.hpp"

namespace alda {

struct Utterance {
  std::string id;
  std::string feature_path;
  std::uint64_t num_frames = 0;
  std::uint32_t frame_dim = 0;
  std::optional<double> duration_s;
  std::string domain_tag;
  std::optional<std::string> transcript_path;

  bool operator==(const Utterance&) const = default;
};

enum class ManifestRole { kPool, kDev, kTest };

std::string_view to_string(ManifestRole role);
ManifestRole parse_role(std::string_view text);

struct Manifest {
  std::vector<Utterance> utterances;
  ManifestRole role = ManifestRole::kPool;
  double fps = 100.0;

  double hours(const Utterance& utt) const;
  double total_hours() const;
  // Index of the utterance with the given id, if present. Linear scan.
  std::optional<std::size_t> find(std::string_view id) const;

  bool operator==(const Manifest&) const = default;
};

using FeatureMatrix = Matrix<float>;

struct ManifestReadOptions {
  // Check that every feature file exists and its header matches the line.
  bool validate_files = false;
  ManifestRole role = ManifestRole::kPool;
};

// Relative feature and transcript paths are resolved against the manifest's
// directory. Throws FormatError with the offending line number on parse
// errors and duplicate ids.
Manifest read_manifest(const std::filesystem::path& path, const ManifestReadOptions& options = {});
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

// Loads the feature file referenced by `utt` and checks it against the
// manifest shape. Throws FormatError on bad magic, truncation, non-finite
// values or shape mismatch.
FeatureMatrix read_features(const Utterance& utt);
FeatureMatrix read_features(const std::filesystem::path& path);
void write_features(const FeatureMatrix& matrix, const std::filesystem::path& path);

// Empty string when the utterance has no transcript.
std::string load_transcript(const Utterance& utt);

// ---------------------------------------------------------------------------
// Synthetic corpora

struct SynthComponent {
  double weight = 1.0;
  std::vector<double> mean;
  std::vector<double> variance;
};

struct SynthDomain {
  std::string tag;
  std::vector<SynthComponent> components;
  // Transcript vocabulary specific to the domain. No transcripts are written
  // when both this and SynthSpec::common_words are empty.
  std::vector<std::string> words;
};

// One output manifest: how many utterances to draw from each domain.
struct SynthSet {
  std::string name;
  ManifestRole role = ManifestRole::kPool;
  std::vector<std::pair<std::string, std::size_t>> counts;  // domain tag -> utterances
};

struct SynthSpec {
  std::uint32_t frame_dim = 0;
  double fps = 100.0;
  std::size_t min_frames = 10;
  std::size_t max_frames = 10;
  std::vector<SynthDomain> domains;
  std::vector<SynthSet> sets;
  std::vector<std::string> common_words;
  double common_word_prob = 0.3;
  std::size_t min_words = 5;
  std::size_t max_words = 15;
};

// Throws ValidationError for empty domain lists, zero components,
// non-positive variances or weights, and dimension mismatches.
void validate(const SynthSpec& spec);

// Writes <out_dir>/<set>.tsv plus feature files under <out_dir>/feats and
// transcripts under <out_dir>/text. Returns the manifests in `spec.sets`
// order. Output bytes depend only on (spec, seed).
std::vector<Manifest> generate_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed,
                                                const std::filesystem::path& out_dir);

// Desk-scale preset: `n_domains` domains with random, distinct diagonal
// mixtures and domain-flavoured transcripts. Produces a "pool" set with
// `pool_per_domain` utterances of every domain and a "dev" set with
// `dev_count` utterances of domain 0.
struct SynthPreset {
  std::size_t n_domains = 5;
  std::size_t pool_per_domain = 200;
  std::size_t dev_count = 50;
  std::uint32_t frame_dim = 13;
  std::size_t components_per_domain = 4;
  std::size_t min_frames = 80;
  std::size_t max_frames = 160;
  double mean_spread = 2.0;
};
SynthSpec make_preset_spec(const SynthPreset& preset, std::uint64_t seed);

std::string synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(std::string_view json);

}  // namespace alda
