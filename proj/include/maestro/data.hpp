#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maestro/spec.hpp"
#include "maestro/temporal.hpp"
#include "maestro/tensor.hpp"

namespace maestro {

// Tile tensor file: "MTRO", u16 version, u8 dtype (0 = f32), u8 ndim, u32 dims,
// then the row-major payload, all little-endian.
inline constexpr std::uint16_t kTileFormatVersion = 1;

void write_tensor(const std::filesystem::path& path, const TensorF& tensor);
// Throws IoError whose message starts with "bad magic", "unsupported",
// "truncated" or "shape mismatch" (the latter when `expected` is non-empty and
// differs).
TensorF read_tensor(const std::filesystem::path& path, const Shape& expected = {});

void write_times(const std::filesystem::path& path, const std::vector<TimeRecord>& times);
std::vector<TimeRecord> read_times(const std::filesystem::path& path);

struct TileLabel {
  std::vector<std::size_t> classes;         // classification: class ids present
  Tensor<std::uint16_t> class_map;          // segmentation: [side, side]
};

struct TileRecord {
  std::string id;
  std::vector<RawSeries> series;  // indexed like DatasetSpec::modalities; inactive entries are empty
  TileLabel label;
};

struct Dataset {
  DatasetSpec spec;
  std::size_t label_side = 0;  // label pixels per tile side (segmentation)
  std::vector<TileRecord> tiles;
};

// Label pixels per tile side: that of the finest active modality.
std::size_t label_side_for(const DatasetSpec& ds);

// How the synthetic signal is rendered. Per pixel, time step t and channel c
// of band group g:
//   illum_t * (gain_g * (signature[class][c] + amplitude * sin(2 pi f_class doy
//              / 365.25 + phase_class + tile_phase) + noise * N(0, 1)) + offset_g)
//   + b_{t, block, g}
// with illum_t = exp(illumination_jitter * N(0, 1)) per acquisition and
// b = block_offset_jitter * N(0, 1) per patch-sized pixel block and group.
struct GroupTransform {
  double gain = 1.0;
  double offset = 0.0;
};

struct ModalityRecipe {
  std::string name;
  std::size_t series_length = 12;        // raw steps per tile
  std::vector<GroupTransform> groups;    // per band group; missing = identity
  std::vector<std::size_t> informative_groups;  // groups carrying the class signature; empty = all
  double amplitude = 0.0;                // phenology amplitude
};

struct SyntheticRecipe {
  std::string name = "toy";
  std::uint64_t seed = 0;
  std::size_t num_tiles = 64;
  std::size_t num_classes = 2;
  std::size_t class_cells = 1;   // latent class grid per tile side; 1 = one class per tile
  bool spectral_signatures = true;  // false: every class shares one signature
  double signature_spread = 1.0;
  std::vector<double> frequencies;  // cycles per year per class; empty = all 1
  std::vector<double> phases;       // radians per class; empty = all 0
  bool random_tile_phase = false;
  double noise = 0.05;
  double cloud_probability = 0.0;
  // Log-std of a multiplicative factor drawn per (tile, modality, time step)
  // and applied to every pixel and channel of that acquisition.
  double illumination_jitter = 0.0;
  // Std of an additive offset drawn per (tile, modality, time step, block of
  // patch_size x patch_size pixels, band group).
  double block_offset_jitter = 0.0;
  std::vector<ModalityRecipe> modalities;

  const ModalityRecipe* modality(const std::string& name) const;
};

void to_json(nlohmann::json& j, const SyntheticRecipe& r);
void from_json(const nlohmann::json& j, SyntheticRecipe& r);
SyntheticRecipe load_recipe(const std::filesystem::path& path);

// Validates the spec, then renders num_tiles tiles. Tile k draws from its own
// random stream, so output does not depend on generation order.
Dataset generate(const SyntheticRecipe& recipe, const DatasetSpec& spec);

// Writes manifest.json plus one tensor file per (tile, modality) and returns
// the manifest.
nlohmann::json write_dataset(const Dataset& data, const std::filesystem::path& dir);
nlohmann::json read_manifest(const std::filesystem::path& dir);
RawSeries read_tile(const std::filesystem::path& dir, const nlohmann::json& manifest, const std::string& tile_id,
                    const std::string& modality);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace maestro
