#pragma once

// Config-driven orchestration behind the `emofilm` command-line tool.
//
// Relative paths in a config are resolved against the directory holding the
// config file (or the working directory when running on built-in defaults).

#include "emofilm/annotator.hpp"
#include "emofilm/efilm.hpp"
#include "emofilm/synth.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace emofilm::cli {

inline constexpr const char* kConfigEnvVar = "EMOFILM_CONFIG";

enum ExitCode : int { kOk = 0, kValidationFailure = 1, kRuntimeFailure = 2 };

nlohmann::json default_config();

/// "a.b.c=value": value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// 16 hex digits of FNV-1a 64 over the compact dump.
std::string config_hash(const nlohmann::json& config);

struct PipelineConfig {
  nlohmann::json raw;
  std::filesystem::path base_dir;
  std::uint64_t seed = 7;

  std::filesystem::path corpus_dir, checkpoint_dir, report_dir;

  int feature_dim = 16;
  double noise_sigma = 1.0;
  double separation = 16.0;
  std::vector<CorpusSpec> parts;

  AnnotatorConfig annotator_model;
  TrainConfig annotator_train;
  AnnotatorLossConfig annotator_loss;

  EFiLMConfig tts_model;
  TrainConfig tts_train;
  GenLossConfig tts_loss;
  AnnotationSource annotation_source = AnnotationSource::GoldWordLevel;

  std::string synth_mode = "greedy";  // greedy | sampled | oracle
  int max_len = 64;
  std::string synth_annotations = "predicted";  // gold | predicted
  std::string synth_split = "test";
  int plot_limit = 6;

  /// Validates and derives every component seed from `seed`.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

  std::filesystem::path corpus_index() const { return corpus_dir / "index.json"; }
  std::filesystem::path annotator_checkpoint() const { return checkpoint_dir / "annotator.json"; }
  std::filesystem::path efilm_checkpoint() const { return checkpoint_dir / "efilm.json"; }
  std::filesystem::path annotations_file() const { return report_dir / "annotations.json"; }
  std::filesystem::path generations_file() const { return report_dir / "generations.json"; }
  std::filesystem::path report_file() const { return report_dir / "report.json"; }
};

using Produced = std::vector<std::filesystem::path>;

Produced gen_data(const PipelineConfig& c, std::ostream& log);
Produced train_annotator_step(const PipelineConfig& c, std::ostream& log);
Produced annotate_step(const PipelineConfig& c, std::ostream& log);
Produced train_tts_step(const PipelineConfig& c, std::ostream& log);
Produced synthesize_step(const PipelineConfig& c, std::ostream& log);
Produced evaluate_step(const PipelineConfig& c, std::ostream& log);
Produced plot_step(const PipelineConfig& c, std::ostream& log);

/// Human-readable summary of a checkpoint file.
void describe_checkpoint(const std::filesystem::path& path, std::ostream& out);

/// SVG overlay of gold (dashed) and generated (solid) category posteriors.
std::string trajectory_svg(const std::string& title, const Matrix& gold, const Matrix& generated);

/// Full command-line entry point; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace emofilm::cli
