#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace maestro {

struct CloudMaskConfig {
  bool enabled = false;
  double threshold = 0.0;
};

// Per-sensor geometry and spectral layout.
struct ModalitySpec {
  std::string name;
  double gsd_m = 1.0;           // native meters per pixel of the stored tiles
  std::size_t image_size = 0;   // I_m, pixels after resampling
  std::size_t patch_size = 1;   // P_m
  std::size_t temporal_bins = 1;  // D_m, 0 excludes the modality
  std::size_t channels = 1;     // C_m
  std::vector<std::vector<std::size_t>> band_groups;
  double norm_factor = 1.0;
  CloudMaskConfig cloud_mask;

  bool active() const { return temporal_bins > 0; }
  std::size_t grid_side() const { return image_size / patch_size; }
  std::size_t num_positions() const { return grid_side() * grid_side(); }
  std::size_t num_groups() const { return band_groups.size(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
};

enum class Task { kClassification, kSegmentation };

struct DatasetSpec {
  std::string name;
  double tile_extent_m = 0.0;
  double crop_extent_m = 0.0;
  std::vector<ModalitySpec> modalities;
  std::vector<std::vector<std::string>> modality_groups;
  double reference_grid_resolution_m = 0.0;
  Task task = Task::kClassification;
  std::size_t num_classes = 0;  // including ignored classes
  std::vector<std::size_t> ignored_class_ids;

  const ModalitySpec& modality(const std::string& name) const;
  std::optional<std::size_t> modality_index(const std::string& name) const;
  // Indices of modalities with D_m > 0, in declaration order.
  std::vector<std::size_t> active_modalities() const;
  std::size_t repetition_factor() const;
  // Side length of the token grid of reference (crop / reference resolution).
  std::size_t reference_side() const;
};

enum class FusionMode { kShared, kMonotemp, kMod, kGroup, kInterGroup };
enum class Multispectral { kJointToken, kTokenBased };
enum class TargetNorm { kNone, kPatch, kPatchGroup };

struct StructuredProbs {
  double modality = 0.25;
  double spatial = 0.25;
  double temporal = 0.25;
};

struct FusionConfig {
  FusionMode mode = FusionMode::kGroup;
  Multispectral multispectral = Multispectral::kJointToken;
  TargetNorm target_norm = TargetNorm::kPatchGroup;
  double mask_ratio = 0.75;
  StructuredProbs structured_probs;
};

struct ModelDims {
  std::size_t encoder_width = 768;
  std::size_t encoder_depth = 12;
  std::size_t decoder_width = 512;
  std::size_t decoder_depth = 3;
  std::size_t heads = 12;
  std::size_t decoder_heads = 16;
  std::size_t n_fusion_blocks = 3;
};

struct PhaseSchedule {
  double base_lr = 1e-5;
  std::size_t batch_size = 1;
  std::size_t epochs = 1;
  double final_div = 1e4;
};

struct TrainingConfig {
  PhaseSchedule pretrain{3e-5, 96, 100, 1e4};
  PhaseSchedule probe{1e-5, 96, 10, 1e4};
  PhaseSchedule finetune{1e-5, 96, 50, 2.0};
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double warmup_fraction = 0.2;
};

// Everything a run needs: the four spec types plus optimizer constants.
struct RunSpec {
  DatasetSpec dataset;
  FusionConfig fusion;
  ModelDims dims;
  TrainingConfig training;
};

struct ValidationIssue {
  std::string path;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool ok() const { return issues.empty(); }
  std::string summary() const;
};

ValidationReport validate(const DatasetSpec& dataset, const FusionConfig& fusion, const ModelDims& dims);
inline ValidationReport validate(const RunSpec& run) { return validate(run.dataset, run.fusion, run.dims); }
// Throws ValidationError carrying the report summary when validation fails.
void require_valid(const RunSpec& run);

struct TokenCounts {
  std::size_t positions = 0;
  std::size_t bins = 0;
  std::size_t sequence_length = 0;
};

TokenCounts token_counts(const ModalitySpec& m, Multispectral flavor);
std::size_t total_tokens(const DatasetSpec& dataset, Multispectral flavor);
std::size_t lcm_token_grid(const std::vector<ModalitySpec>& specs);

// Nearest integer, halves rounded up.
std::size_t nint(double x);

// String forms used in config files and on the command line.
std::string to_string(FusionMode mode);
std::string to_string(Multispectral flavor);
std::string to_string(TargetNorm norm);
std::string to_string(Task task);
FusionMode parse_fusion_mode(const std::string& s);
Multispectral parse_multispectral(const std::string& s);
TargetNorm parse_target_norm(const std::string& s);
Task parse_task(const std::string& s);

void to_json(nlohmann::json& j, const CloudMaskConfig& c);
void from_json(const nlohmann::json& j, CloudMaskConfig& c);
void to_json(nlohmann::json& j, const ModalitySpec& m);
void from_json(const nlohmann::json& j, ModalitySpec& m);
void to_json(nlohmann::json& j, const DatasetSpec& d);
void from_json(const nlohmann::json& j, DatasetSpec& d);
void to_json(nlohmann::json& j, const FusionConfig& f);
void from_json(const nlohmann::json& j, FusionConfig& f);
void to_json(nlohmann::json& j, const ModelDims& d);
void from_json(const nlohmann::json& j, ModelDims& d);
void to_json(nlohmann::json& j, const PhaseSchedule& p);
void from_json(const nlohmann::json& j, PhaseSchedule& p);
void to_json(nlohmann::json& j, const TrainingConfig& t);
void from_json(const nlohmann::json& j, TrainingConfig& t);
void to_json(nlohmann::json& j, const RunSpec& r);
void from_json(const nlohmann::json& j, RunSpec& r);

RunSpec load_run_spec(const std::filesystem::path& path);
void save_run_spec(const RunSpec& run, const std::filesystem::path& path);

// Preset lookup: `name` may be a bare preset name (e.g. "treesatai_ts") or a
// path to a JSON file. Bare names are searched in MAESTRO_PRESET_DIR, then in
// the directory baked in at build time.
std::filesystem::path preset_path(const std::string& name);
RunSpec load_preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace maestro
