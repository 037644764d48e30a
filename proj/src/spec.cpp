#include "maestro/spec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "maestro/errors.hpp"
#include "maestro/tensor.hpp"

#ifndef MAESTRO_PRESET_DIR
#define MAESTRO_PRESET_DIR "presets"
#endif

namespace maestro {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t nint(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

namespace {

// True when x is within a relative 1e-9 of a positive integer.
bool is_integral(double x, std::size_t* out = nullptr) {
  const double r = std::round(x);
  if (r < 1.0 || std::abs(x - r) > 1e-9 * std::max(1.0, std::abs(x))) return false;
  if (out) *out = static_cast<std::size_t>(r);
  return true;
}

}  // namespace

const ModalitySpec& DatasetSpec::modality(const std::string& n) const {
  for (const auto& m : modalities) {
    if (m.name == n) return m;
  }
  throw ValidationError("unknown modality '" + n + "'");
}

std::optional<std::size_t> DatasetSpec::modality_index(const std::string& n) const {
  for (std::size_t i = 0; i < modalities.size(); ++i) {
    if (modalities[i].name == n) return i;
  }
  return std::nullopt;
}

std::vector<std::size_t> DatasetSpec::active_modalities() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < modalities.size(); ++i) {
    if (modalities[i].active()) out.push_back(i);
  }
  return out;
}

std::size_t DatasetSpec::repetition_factor() const {
  const double ratio = tile_extent_m / crop_extent_m;
  return std::max<std::size_t>(1, nint(ratio * ratio));
}

std::size_t DatasetSpec::reference_side() const {
  if (reference_grid_resolution_m <= 0.0) return 0;
  return nint(crop_extent_m / reference_grid_resolution_m);
}

std::string ValidationReport::summary() const {
  if (ok()) return "pass";
  std::ostringstream os;
  for (std::size_t i = 0; i < issues.size(); ++i) {
    if (i) os << "; ";
    os << issues[i].path << ": " << issues[i].message;
  }
  return os.str();
}

ValidationReport validate(const DatasetSpec& ds, const FusionConfig& fusion, const ModelDims& dims) {
  ValidationReport rep;
  auto fail = [&](std::string path, std::string msg) { rep.issues.push_back({std::move(path), std::move(msg)}); };

  if (ds.tile_extent_m <= 0.0) fail("dataset.tile_extent_m", "must be positive");
  if (ds.crop_extent_m <= 0.0) fail("dataset.crop_extent_m", "must be positive");
  if (ds.crop_extent_m > ds.tile_extent_m) fail("dataset.crop_extent_m", "crop larger than tile");
  if (ds.modalities.empty()) fail("dataset.modalities", "no modalities declared");

  std::set<std::string> names;
  bool any_active = false;
  for (std::size_t i = 0; i < ds.modalities.size(); ++i) {
    const auto& m = ds.modalities[i];
    const std::string p = "dataset.modalities[" + std::to_string(i) + "]";
    if (m.name.empty()) fail(p + ".name", "empty name");
    if (!names.insert(m.name).second) fail(p + ".name", "duplicate modality '" + m.name + "'");
    any_active = any_active || m.active();
    if (m.gsd_m <= 0.0) fail(p + ".gsd_m", "must be positive");
    if (m.patch_size == 0 || m.image_size == 0) {
      fail(p + ".patch_size", "image and patch size must be positive");
    } else if (m.image_size % m.patch_size != 0) {
      fail(p + ".patch_size", "patch does not divide image");
    }
    if (m.channels == 0) fail(p + ".channels", "need at least one channel");
    if (m.norm_factor <= 0.0) fail(p + ".norm_factor", "must be positive");
    if (m.cloud_mask.threshold < 0.0 || m.cloud_mask.threshold > 1.0) {
      fail(p + ".cloud_mask.threshold", "must lie in [0, 1]");
    }
    // band groups: disjoint, covering, non-empty partition of channel indices
    std::vector<int> seen(m.channels, 0);
    bool partition_ok = !m.band_groups.empty();
    if (m.band_groups.empty()) fail(p + ".band_groups", "no band groups");
    for (std::size_t g = 0; g < m.band_groups.size(); ++g) {
      if (m.band_groups[g].empty()) {
        fail(p + ".band_groups[" + std::to_string(g) + "]", "empty band group");
        partition_ok = false;
      }
      for (std::size_t c : m.band_groups[g]) {
        if (c >= m.channels) {
          fail(p + ".band_groups[" + std::to_string(g) + "]", "channel index " + std::to_string(c) + " out of range");
          partition_ok = false;
        } else if (seen[c]++) {
          fail(p + ".band_groups", "partition not disjoint (channel " + std::to_string(c) + " repeated)");
          partition_ok = false;
        }
      }
    }
    if (partition_ok) {
      for (std::size_t c = 0; c < m.channels; ++c) {
        if (!seen[c]) {
          fail(p + ".band_groups", "partition not covering (channel " + std::to_string(c) + " missing)");
          break;
        }
      }
    }
    if (m.gsd_m > 0.0 && ds.crop_extent_m > 0.0) {
      if (!is_integral(ds.crop_extent_m / m.gsd_m)) fail(p + ".gsd_m", "crop does not cover an integer number of pixels");
      if (!is_integral(ds.tile_extent_m / m.gsd_m)) fail(p + ".gsd_m", "tile does not cover an integer number of pixels");
    }
  }
  if (!ds.modalities.empty() && !any_active) fail("dataset.modalities", "every modality has zero temporal bins");

  // modality groups partition the active modalities
  std::set<std::string> grouped;
  for (std::size_t g = 0; g < ds.modality_groups.size(); ++g) {
    const std::string p = "dataset.modality_groups[" + std::to_string(g) + "]";
    if (ds.modality_groups[g].empty()) fail(p, "empty modality group");
    for (const auto& n : ds.modality_groups[g]) {
      if (!names.count(n)) fail(p, "unknown modality '" + n + "'");
      if (!grouped.insert(n).second) fail(p, "modality '" + n + "' in more than one group");
    }
  }
  for (const auto& m : ds.modalities) {
    if (m.active() && !grouped.count(m.name)) fail("dataset.modality_groups", "modality '" + m.name + "' not in any group");
  }

  if (ds.num_classes == 0) fail("dataset.num_classes", "must be positive");
  for (std::size_t c : ds.ignored_class_ids) {
    if (c >= ds.num_classes) fail("dataset.ignored_class_ids", "class id " + std::to_string(c) + " out of range");
  }
  if (ds.task == Task::kSegmentation) {
    if (ds.reference_grid_resolution_m <= 0.0 || !is_integral(ds.crop_extent_m / ds.reference_grid_resolution_m)) {
      fail("dataset.reference_grid_resolution_m", "crop must span an integer number of reference cells");
    }
  }

  if (!(fusion.mask_ratio > 0.0 && fusion.mask_ratio < 1.0)) fail("fusion.mask_ratio", "must lie in (0, 1)");
  auto prob = [&](double v, const char* name) {
    if (v < 0.0 || v > 1.0) fail(std::string("fusion.structured_probs.") + name, "must lie in [0, 1]");
  };
  prob(fusion.structured_probs.modality, "modality");
  prob(fusion.structured_probs.spatial, "spatial");
  prob(fusion.structured_probs.temporal, "temporal");

  if (dims.encoder_width <= 8) fail("model.encoder_width", "must exceed 8 (temporal encodings use 8 dims)");
  if (dims.decoder_width <= 8) fail("model.decoder_width", "must exceed 8 (temporal encodings use 8 dims)");
  if (dims.encoder_width > 8 && (dims.encoder_width - 8) % 4 != 0) fail("model.encoder_width", "width - 8 must be divisible by 4");
  if (dims.decoder_width > 8 && (dims.decoder_width - 8) % 4 != 0) fail("model.decoder_width", "width - 8 must be divisible by 4");
  if (dims.heads == 0) {
    fail("model.heads", "must be positive");
  } else {
    if (dims.encoder_width % dims.heads) fail("model.heads", "does not divide encoder width");
  }
  if (dims.decoder_heads == 0) {
    fail("model.decoder_heads", "must be positive");
  } else {
    if (dims.decoder_width % dims.decoder_heads) fail("model.decoder_heads", "does not divide decoder width");
  }
  if (dims.encoder_depth == 0) fail("model.encoder_depth", "must be positive");
  if (dims.decoder_depth == 0) fail("model.decoder_depth", "must be positive");
  if (fusion.mode == FusionMode::kInterGroup && dims.n_fusion_blocks > dims.encoder_depth) {
    fail("model.n_fusion_blocks", "more fusion blocks than encoder blocks");
  }
  return rep;
}

void require_valid(const RunSpec& run) {
  auto rep = validate(run);
  if (!rep.ok()) throw ValidationError("invalid configuration: " + rep.summary());
}

TokenCounts token_counts(const ModalitySpec& m, Multispectral flavor) {
  TokenCounts tc;
  tc.positions = m.num_positions();
  tc.bins = m.temporal_bins;
  tc.sequence_length = tc.positions * tc.bins;
  if (flavor == Multispectral::kTokenBased) tc.sequence_length *= m.num_groups();
  return tc;
}

std::size_t total_tokens(const DatasetSpec& dataset, Multispectral flavor) {
  std::size_t n = 0;
  for (const auto& m : dataset.modalities) n += token_counts(m, flavor).sequence_length;
  return n;
}

std::size_t lcm_token_grid(const std::vector<ModalitySpec>& specs) {
  std::size_t l = 0;
  for (const auto& m : specs) {
    if (!m.active()) continue;
    const std::size_t g = m.grid_side();
    l = (l == 0) ? g : std::lcm(l, g);
  }
  if (l == 0) throw ValidationError("lcm_token_grid: no active modality");
  return l;
}

// ---------------------------------------------------------------------------
// string forms

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kShared: return "shared";
    case FusionMode::kMonotemp: return "monotemp";
    case FusionMode::kMod: return "mod";
    case FusionMode::kGroup: return "group";
    case FusionMode::kInterGroup: return "inter-group";
  }
  return "?";
}

std::string to_string(Multispectral flavor) {
  return flavor == Multispectral::kJointToken ? "joint-token" : "token-based";
}

std::string to_string(TargetNorm norm) {
  switch (norm) {
    case TargetNorm::kNone: return "none";
    case TargetNorm::kPatch: return "patch";
    case TargetNorm::kPatchGroup: return "patch-group";
  }
  return "?";
}

std::string to_string(Task task) { return task == Task::kClassification ? "classification" : "segmentation"; }

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "shared") return FusionMode::kShared;
  if (s == "monotemp") return FusionMode::kMonotemp;
  if (s == "mod") return FusionMode::kMod;
  if (s == "group") return FusionMode::kGroup;
  if (s == "inter-group" || s == "intergroup") return FusionMode::kInterGroup;
  throw ValidationError("unknown fusion mode '" + s + "'");
}

Multispectral parse_multispectral(const std::string& s) {
  if (s == "joint-token" || s == "joint") return Multispectral::kJointToken;
  if (s == "token-based" || s == "token") return Multispectral::kTokenBased;
  throw ValidationError("unknown multispectral flavor '" + s + "'");
}

TargetNorm parse_target_norm(const std::string& s) {
  if (s == "none") return TargetNorm::kNone;
  if (s == "patch") return TargetNorm::kPatch;
  if (s == "patch-group") return TargetNorm::kPatchGroup;
  throw ValidationError("unknown target normalization '" + s + "'");
}

Task parse_task(const std::string& s) {
  if (s == "classification") return Task::kClassification;
  if (s == "segmentation") return Task::kSegmentation;
  throw ValidationError("unknown task '" + s + "'");
}

// ---------------------------------------------------------------------------
// JSON

using nlohmann::json;

void to_json(json& j, const CloudMaskConfig& c) { j = json{{"enabled", c.enabled}, {"threshold", c.threshold}}; }

void from_json(const json& j, CloudMaskConfig& c) {
  c.enabled = j.value("enabled", false);
  c.threshold = j.value("threshold", 0.0);
}

void to_json(json& j, const ModalitySpec& m) {
  j = json{{"name", m.name},
           {"gsd_m", m.gsd_m},
           {"image_size", m.image_size},
           {"patch_size", m.patch_size},
           {"temporal_bins", m.temporal_bins},
           {"channels", m.channels},
           {"band_groups", m.band_groups},
           {"norm_factor", m.norm_factor},
           {"cloud_mask", m.cloud_mask}};
}

void from_json(const json& j, ModalitySpec& m) {
  j.at("name").get_to(m.name);
  j.at("gsd_m").get_to(m.gsd_m);
  j.at("image_size").get_to(m.image_size);
  j.at("patch_size").get_to(m.patch_size);
  j.at("temporal_bins").get_to(m.temporal_bins);
  j.at("channels").get_to(m.channels);
  j.at("band_groups").get_to(m.band_groups);
  m.norm_factor = j.value("norm_factor", 1.0);
  if (j.contains("cloud_mask")) j.at("cloud_mask").get_to(m.cloud_mask);
}

void to_json(json& j, const DatasetSpec& d) {
  j = json{{"name", d.name},
           {"tile_extent_m", d.tile_extent_m},
           {"crop_extent_m", d.crop_extent_m},
           {"modalities", d.modalities},
           {"modality_groups", d.modality_groups},
           {"reference_grid_resolution_m", d.reference_grid_resolution_m},
           {"task", to_string(d.task)},
           {"num_classes", d.num_classes},
           {"ignored_class_ids", d.ignored_class_ids}};
}

void from_json(const json& j, DatasetSpec& d) {
  d.name = j.value("name", std::string{});
  j.at("tile_extent_m").get_to(d.tile_extent_m);
  d.crop_extent_m = j.value("crop_extent_m", d.tile_extent_m);
  j.at("modalities").get_to(d.modalities);
  if (j.contains("modality_groups")) {
    j.at("modality_groups").get_to(d.modality_groups);
  } else {
    d.modality_groups.clear();
    for (const auto& m : d.modalities) d.modality_groups.push_back({m.name});
  }
  d.reference_grid_resolution_m = j.value("reference_grid_resolution_m", 0.0);
  d.task = parse_task(j.value("task", std::string("classification")));
  j.at("num_classes").get_to(d.num_classes);
  d.ignored_class_ids = j.value("ignored_class_ids", std::vector<std::size_t>{});
}

void to_json(json& j, const FusionConfig& f) {
  j = json{{"mode", to_string(f.mode)},
           {"multispectral", to_string(f.multispectral)},
           {"target_norm", to_string(f.target_norm)},
           {"mask_ratio", f.mask_ratio},
           {"structured_probs",
            {{"modality", f.structured_probs.modality},
             {"spatial", f.structured_probs.spatial},
             {"temporal", f.structured_probs.temporal}}}};
}

void from_json(const json& j, FusionConfig& f) {
  f = FusionConfig{};
  if (j.contains("mode")) f.mode = parse_fusion_mode(j.at("mode").get<std::string>());
  if (j.contains("multispectral")) f.multispectral = parse_multispectral(j.at("multispectral").get<std::string>());
  if (j.contains("target_norm")) f.target_norm = parse_target_norm(j.at("target_norm").get<std::string>());
  f.mask_ratio = j.value("mask_ratio", 0.75);
  if (j.contains("structured_probs")) {
    const auto& p = j.at("structured_probs");
    // null disables an axis
    auto axis = [&](const char* k, double def) {
      if (!p.contains(k)) return def;
      if (p.at(k).is_null()) return 0.0;
      return p.at(k).get<double>();
    };
    f.structured_probs.modality = axis("modality", 0.25);
    f.structured_probs.spatial = axis("spatial", 0.25);
    f.structured_probs.temporal = axis("temporal", 0.25);
  }
}

void to_json(json& j, const ModelDims& d) {
  j = json{{"encoder_width", d.encoder_width},   {"encoder_depth", d.encoder_depth},
           {"decoder_width", d.decoder_width},   {"decoder_depth", d.decoder_depth},
           {"heads", d.heads}, {"decoder_heads", d.decoder_heads},                   {"n_fusion_blocks", d.n_fusion_blocks}};
}

void from_json(const json& j, ModelDims& d) {
  d = ModelDims{};
  d.encoder_width = j.value("encoder_width", d.encoder_width);
  d.encoder_depth = j.value("encoder_depth", d.encoder_depth);
  d.decoder_width = j.value("decoder_width", d.decoder_width);
  d.decoder_depth = j.value("decoder_depth", d.decoder_depth);
  d.heads = j.value("heads", d.heads);
  d.decoder_heads = j.value("decoder_heads", d.decoder_heads);
  d.n_fusion_blocks = j.value("n_fusion_blocks", d.n_fusion_blocks);
}

void to_json(json& j, const PhaseSchedule& p) {
  j = json{{"base_lr", p.base_lr}, {"batch_size", p.batch_size}, {"epochs", p.epochs}, {"final_div", p.final_div}};
}

void from_json(const json& j, PhaseSchedule& p) {
  p.base_lr = j.value("base_lr", p.base_lr);
  p.batch_size = j.value("batch_size", p.batch_size);
  p.epochs = j.value("epochs", p.epochs);
  p.final_div = j.value("final_div", p.final_div);
}

void to_json(json& j, const TrainingConfig& t) {
  j = json{{"pretrain", t.pretrain}, {"probe", t.probe},         {"finetune", t.finetune},
           {"weight_decay", t.weight_decay}, {"beta1", t.beta1}, {"beta2", t.beta2},
           {"warmup_fraction", t.warmup_fraction}};
}

void from_json(const json& j, TrainingConfig& t) {
  t = TrainingConfig{};
  if (j.contains("pretrain")) from_json(j.at("pretrain"), t.pretrain);
  if (j.contains("probe")) from_json(j.at("probe"), t.probe);
  if (j.contains("finetune")) from_json(j.at("finetune"), t.finetune);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.warmup_fraction = j.value("warmup_fraction", t.warmup_fraction);
}

void to_json(json& j, const RunSpec& r) {
  j = json{{"dataset", r.dataset}, {"fusion", r.fusion}, {"model", r.dims}, {"training", r.training}};
}

void from_json(const json& j, RunSpec& r) {
  j.at("dataset").get_to(r.dataset);
  if (j.contains("fusion")) {
    j.at("fusion").get_to(r.fusion);
  } else {
    r.fusion = FusionConfig{};
  }
  if (j.contains("model")) {
    j.at("model").get_to(r.dims);
  } else {
    r.dims = ModelDims{};
  }
  if (j.contains("training")) {
    j.at("training").get_to(r.training);
  } else {
    r.training = TrainingConfig{};
  }
}

RunSpec load_run_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
  try {
    return j.get<RunSpec>();
  } catch (const json::exception& e) {
    throw ValidationError("bad config " + path.string() + ": " + e.what());
  }
}

void save_run_spec(const RunSpec& run, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << json(run).dump(2) << "\n";
}

namespace {

std::vector<std::filesystem::path> preset_dirs() {
  std::vector<std::filesystem::path> dirs;
  if (const char* env = std::getenv("MAESTRO_PRESET_DIR")) dirs.emplace_back(env);
  dirs.emplace_back(MAESTRO_PRESET_DIR);
  return dirs;
}

}  // namespace

std::filesystem::path preset_path(const std::string& name) {
  std::filesystem::path direct(name);
  if (direct.has_extension() && std::filesystem::exists(direct)) return direct;
  for (const auto& dir : preset_dirs()) {
    auto p = dir / (name + ".json");
    if (std::filesystem::exists(p)) return p;
  }
  throw ValidationError("unknown preset '" + name + "'");
}

RunSpec load_preset(const std::string& name) { return load_run_spec(preset_path(name)); }

std::vector<std::string> preset_names() {
  std::set<std::string> names;
  for (const auto& dir : preset_dirs()) {
    if (!std::filesystem::is_directory(dir)) continue;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.path().extension() == ".json") names.insert(e.path().stem().string());
    }
  }
  return {names.begin(), names.end()};
}

}  // namespace maestro
