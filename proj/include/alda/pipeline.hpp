#pragma once

// End-to-end selection pipeline:
//   train-gmm -> quantize -> tfidf -> train-lda -> posteriors -> cluster
//   -> select [-> text tfidf -> text lda -> text posteriors -> text cluster
//   -> text select] -> combine -> report
//
// Every stage reads its inputs from, and writes its outputs to, the work
// directory. A stage is skipped when the content hash of its inputs and
// parameters matches the one recorded for its current artifacts.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "alda/error.hpp"
#include "alda/gmm.hpp"
#include "alda/kmeans.hpp"
#include "alda/lda.hpp"
#include "alda/report.hpp"
#include "alda/selector.hpp"

namespace alda {

enum class FrameSource { kDev, kPool, kDevAndPool };
enum class DocSource { kDev, kPool, kAll };

struct PipelineConfig {
  std::filesystem::path pool_manifest;
  std::filesystem::path dev_manifest;
  std::filesystem::path work_dir;

  // [quantizer]
  std::size_t gmm_components = 1024;
  GmmConfig gmm;
  std::size_t gmm_max_frames = 1'000'000;
  FrameSource gmm_train_on = FrameSource::kDevAndPool;

  // [docmodel]
  DocSource idf_source = DocSource::kAll;
  std::size_t text_vocab_cap = 2048;

  // [lda]
  LdaConfig lda;
  DocSource lda_train_on = DocSource::kAll;

  // [cluster]
  KMeansConfig cluster;

  // [select]
  SelectionConfig selection;

  // [text]
  bool text_enabled = false;
  std::size_t text_topics = 0;  // 0: same as lda topics
  double text_lambda = 0.0;     // 0: same as select lambda
  double text_alpha = 0.0;      // 0: same as lda alpha

  // [report]
  std::string target_domain;  // optional; adds enrichment metrics to the log

  // [run]
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  PipelineConfig();
  // Range and path checks; throws ValidationError.
  void validate() const;
};

// Sectioned key = value file. Relative paths are resolved against the
// config file's directory. Unknown keys are rejected.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
std::string render_pipeline_config(const PipelineConfig& config);

// Raised for failures inside a stage; the message names the stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& cause)
      : Error("stage " + stage + ": " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct StageRecord {
  std::string name;
  bool skipped = false;
  std::string note;
};

struct PipelineResult {
  SelectionResult acoustic;
  std::optional<SelectionResult> text;
  SelectionResult selection;  // final (union when the text path is on)
  CompositionReport report;
  std::vector<StageRecord> stages;
  std::filesystem::path selection_manifest;
  std::filesystem::path audit_file;
};

// Validates the config, takes the work-dir lock and runs every stage.
PipelineResult run_pipeline(const PipelineConfig& config, std::ostream* log = nullptr);

struct SweepRow {
  double lambda = 0.0;
  std::size_t utterances = 0;
  double hours = 0.0;
  double fraction_of_pool = 0.0;  // by hours
};

// Runs (or reuses) the stages up to clustering, then selection + report for
// every lambda. Outputs go to <work_dir>/sweep/.
std::vector<SweepRow> sweep_lambda(const PipelineConfig& config, const std::vector<double>& lambdas,
                                   std::ostream* log = nullptr);

}  // namespace alda
