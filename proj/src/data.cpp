#include "maestro/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "maestro/errors.hpp"
#include "maestro/rng.hpp"

namespace maestro {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "tile I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'T', 'R', 'O'};

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
bool get(std::istream& is, V& v) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof(V)));
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  return os;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return is;
}

}  // namespace

void write_tensor(const fs::path& path, const TensorF& tensor) {
  auto os = open_out(path);
  os.write(kMagic, 4);
  put<std::uint16_t>(os, kTileFormatVersion);
  put<std::uint8_t>(os, 0);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(tensor.ndim()));
  for (std::size_t d : tensor.shape()) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(tensor.data()), static_cast<std::streamsize>(tensor.size() * sizeof(float)));
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

TensorF read_tensor(const fs::path& path, const Shape& expected) {
  auto is = open_in(path);
  const std::string where = " in '" + path.string() + "'";
  char magic[4];
  if (!is.read(magic, 4)) throw IoError("truncated header" + where);
  if (std::memcmp(magic, kMagic, 4) != 0) throw IoError("bad magic" + where);
  std::uint16_t version = 0;
  std::uint8_t dtype = 0, ndim = 0;
  if (!get(is, version) || !get(is, dtype) || !get(is, ndim)) throw IoError("truncated header" + where);
  if (version != kTileFormatVersion) throw IoError("unsupported version " + std::to_string(version) + where);
  if (dtype != 0) throw IoError("unsupported dtype " + std::to_string(dtype) + where);
  Shape shape(ndim);
  for (auto& d : shape) {
    std::uint32_t v = 0;
    if (!get(is, v)) throw IoError("truncated header" + where);
    d = v;
  }
  if (!expected.empty() && expected != shape) {
    throw IoError("shape mismatch" + where + ": file " + shape_string(shape) + ", expected " + shape_string(expected));
  }
  TensorF t(shape);
  if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
    throw IoError("truncated payload" + where);
  }
  return t;
}

void write_times(const fs::path& path, const std::vector<TimeRecord>& times) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& t : times) j.push_back({t.absolute_day, t.day_of_year, t.hour_of_day});
  auto os = open_out(path);
  os << j.dump();
}

std::vector<TimeRecord> read_times(const fs::path& path) {
  auto is = open_in(path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed time list in '" + path.string() + "': " + e.what());
  }
  std::vector<TimeRecord> out;
  for (const auto& e : j) {
    TimeRecord t;
    t.absolute_day = e.at(0).get<std::int64_t>();
    t.day_of_year = e.at(1).get<double>();
    t.hour_of_day = e.at(2).get<double>();
    out.push_back(t);
  }
  return out;
}

std::size_t label_side_for(const DatasetSpec& ds) {
  std::size_t best = 0;
  for (std::size_t i : ds.active_modalities()) best = std::max(best, tile_pixels(ds, ds.modalities[i]));
  return best;
}

// Recipe JSON -----------------------------------------------------------------

const ModalityRecipe* SyntheticRecipe::modality(const std::string& n) const {
  for (const auto& m : modalities)
    if (m.name == n) return &m;
  return nullptr;
}

void to_json(nlohmann::json& j, const SyntheticRecipe& r) {
  nlohmann::json mods = nlohmann::json::array();
  for (const auto& m : r.modalities) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : m.groups) groups.push_back({{"gain", g.gain}, {"offset", g.offset}});
    mods.push_back({{"name", m.name},
                    {"series_length", m.series_length},
                    {"groups", groups},
                    {"informative_groups", m.informative_groups},
                    {"amplitude", m.amplitude}});
  }
  j = {{"name", r.name},
       {"seed", r.seed},
       {"num_tiles", r.num_tiles},
       {"num_classes", r.num_classes},
       {"class_cells", r.class_cells},
       {"spectral_signatures", r.spectral_signatures},
       {"signature_spread", r.signature_spread},
       {"frequencies", r.frequencies},
       {"phases", r.phases},
       {"random_tile_phase", r.random_tile_phase},
       {"noise", r.noise},
       {"cloud_probability", r.cloud_probability},
       {"illumination_jitter", r.illumination_jitter},
       {"block_offset_jitter", r.block_offset_jitter},
       {"modalities", mods}};
}

void from_json(const nlohmann::json& j, SyntheticRecipe& r) {
  r = SyntheticRecipe{};
  r.name = j.value("name", r.name);
  r.seed = j.value("seed", r.seed);
  r.num_tiles = j.value("num_tiles", r.num_tiles);
  r.num_classes = j.value("num_classes", r.num_classes);
  r.class_cells = j.value("class_cells", r.class_cells);
  r.spectral_signatures = j.value("spectral_signatures", r.spectral_signatures);
  r.signature_spread = j.value("signature_spread", r.signature_spread);
  r.frequencies = j.value("frequencies", r.frequencies);
  r.phases = j.value("phases", r.phases);
  r.random_tile_phase = j.value("random_tile_phase", r.random_tile_phase);
  r.noise = j.value("noise", r.noise);
  r.cloud_probability = j.value("cloud_probability", r.cloud_probability);
  r.illumination_jitter = j.value("illumination_jitter", r.illumination_jitter);
  r.block_offset_jitter = j.value("block_offset_jitter", r.block_offset_jitter);
  for (const auto& m : j.value("modalities", nlohmann::json::array())) {
    ModalityRecipe mr;
    mr.name = m.at("name").get<std::string>();
    mr.series_length = m.value("series_length", mr.series_length);
    for (const auto& g : m.value("groups", nlohmann::json::array())) {
      mr.groups.push_back({g.value("gain", 1.0), g.value("offset", 0.0)});
    }
    mr.informative_groups = m.value("informative_groups", mr.informative_groups);
    mr.amplitude = m.value("amplitude", mr.amplitude);
    r.modalities.push_back(std::move(mr));
  }
}

SyntheticRecipe load_recipe(const fs::path& path) {
  auto is = open_in(path);
  try {
    nlohmann::json j;
    is >> j;
    return j.get<SyntheticRecipe>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed recipe '" + path.string() + "': " + e.what());
  }
}

// Generation ----------------------------------------------------------------

namespace {

void check_recipe(const SyntheticRecipe& r, const DatasetSpec& spec) {
  if (r.num_classes < 2) throw ValidationError("recipe: at least two classes required");
  if (r.num_tiles == 0) throw ValidationError("recipe: num_tiles must be positive");
  if (r.class_cells == 0) throw ValidationError("recipe: class_cells must be positive");
  if (!r.frequencies.empty() && r.frequencies.size() != r.num_classes) {
    throw ValidationError("recipe: one frequency per class required");
  }
  if (!r.phases.empty() && r.phases.size() != r.num_classes) throw ValidationError("recipe: one phase per class required");
  if (r.noise < 0.0 || r.illumination_jitter < 0.0 || r.block_offset_jitter < 0.0) {
    throw ValidationError("recipe: noise scales must be non-negative");
  }
  if (!(r.cloud_probability >= 0.0 && r.cloud_probability <= 1.0)) {
    throw ValidationError("recipe: cloud_probability outside [0, 1]");
  }
  if (spec.num_classes != r.num_classes) throw ValidationError("recipe and dataset disagree on the class count");
  for (const auto& m : r.modalities) {
    const auto idx = spec.modality_index(m.name);
    if (!idx) throw ValidationError("recipe names unknown modality '" + m.name + "'");
    const auto& ms = spec.modalities[*idx];
    if (m.groups.size() > ms.num_groups()) throw ValidationError("recipe: more group transforms than band groups");
    for (std::size_t g : m.informative_groups)
      if (g >= ms.num_groups()) throw ValidationError("recipe: informative group out of range");
    if (ms.active() && m.series_length < ms.temporal_bins) {
      throw ValidationError("recipe: series for '" + m.name + "' shorter than its bin count");
    }
  }
}

}  // namespace

Dataset generate(const SyntheticRecipe& recipe, const DatasetSpec& spec) {
  {
    FusionConfig fusion;
    ModelDims dims{16, 1, 16, 1, 2, 2, 0};
    const auto report = validate(spec, fusion, dims);
    if (!report.ok()) throw ValidationError(report.summary());
  }
  check_recipe(recipe, spec);

  Dataset out;
  out.spec = spec;
  out.label_side = label_side_for(spec);
  const std::size_t k_classes = recipe.num_classes;

  // Class signatures per (class, modality, channel).
  Rng sig_rng(RngKey{recipe.seed, 0, 0, Purpose::kSynth, 1});
  std::vector<std::vector<std::vector<double>>> signature(k_classes);
  for (std::size_t k = 0; k < k_classes; ++k) {
    signature[k].resize(spec.modalities.size());
    for (std::size_t i = 0; i < spec.modalities.size(); ++i) {
      signature[k][i].resize(spec.modalities[i].channels);
      for (auto& v : signature[k][i]) v = sig_rng.uniform(0.0, recipe.signature_spread);
      if (!recipe.spectral_signatures && k > 0) signature[k][i] = signature[0][i];
    }
  }

  for (std::size_t tile = 0; tile < recipe.num_tiles; ++tile) {
    Rng rng(RngKey{recipe.seed, 0, tile, Purpose::kSynth, 0});
    TileRecord rec;
    rec.id = "tile_" + std::to_string(tile);

    const std::size_t cells = recipe.class_cells;
    std::vector<std::size_t> cell_class(cells * cells);
    for (auto& c : cell_class) c = rng.uniform_index(k_classes);
    const double tile_phase = recipe.random_tile_phase ? rng.uniform(0.0, 2.0 * std::numbers::pi) : 0.0;

    const std::size_t ls = out.label_side;
    rec.label.class_map = Tensor<std::uint16_t>({ls, ls});
    std::vector<bool> present(k_classes, false);
    for (std::size_t y = 0; y < ls; ++y)
      for (std::size_t x = 0; x < ls; ++x) {
        const std::size_t c = cell_class[(y * cells / ls) * cells + x * cells / ls];
        rec.label.class_map.at({y, x}) = static_cast<std::uint16_t>(c);
        present[c] = true;
      }
    for (std::size_t c = 0; c < k_classes; ++c)
      if (present[c]) rec.label.classes.push_back(c);

    rec.series.resize(spec.modalities.size());
    for (std::size_t i = 0; i < spec.modalities.size(); ++i) {
      const ModalitySpec& ms = spec.modalities[i];
      if (!ms.active()) continue;
      const ModalityRecipe* mr = recipe.modality(ms.name);
      const ModalityRecipe fallback{ms.name, std::max<std::size_t>(ms.temporal_bins, 1), {}, {}, 0.0};
      const ModalityRecipe& r = mr ? *mr : fallback;
      const std::size_t steps = r.series_length;
      const std::size_t side = tile_pixels(spec, ms);

      // Times spread over one year, one step per equal sub-interval.
      RawSeries& s = rec.series[i];
      for (std::size_t t = 0; t < steps; ++t) {
        const double offset = (static_cast<double>(t) + rng.uniform01()) * 365.0 / static_cast<double>(steps);
        TimeRecord tr;
        tr.absolute_day = 730 + static_cast<std::int64_t>(offset);
        tr.day_of_year = static_cast<double>(tr.absolute_day % 365) + 1.0;
        tr.hour_of_day = 10.0 + rng.uniform(0.0, 2.0);
        s.times.push_back(tr);
      }

      std::vector<std::size_t> group_of(ms.channels, 0);
      for (std::size_t g = 0; g < ms.num_groups(); ++g)
        for (std::size_t c : ms.band_groups[g]) group_of[c] = g;
      std::vector<bool> informative(ms.num_groups(), r.informative_groups.empty());
      for (std::size_t g : r.informative_groups) informative[g] = true;
      std::vector<double> nuisance(ms.channels);
      for (auto& v : nuisance) v = rng.uniform(0.0, recipe.signature_spread);

      std::vector<std::uint8_t> cloudy(steps, 0);
      if (ms.cloud_mask.enabled)
        for (auto& c : cloudy) c = rng.bernoulli(recipe.cloud_probability);
      std::vector<double> illum(steps, 1.0);
      if (recipe.illumination_jitter > 0.0)
        for (auto& f : illum) f = std::exp(recipe.illumination_jitter * rng.normal());
      const std::size_t blocks = (side + ms.patch_size - 1) / ms.patch_size;
      std::vector<double> block_offset;  // [t][by][bx][g]
      if (recipe.block_offset_jitter > 0.0) {
        block_offset.resize(steps * blocks * blocks * ms.num_groups());
        for (auto& b : block_offset) b = recipe.block_offset_jitter * rng.normal();
      }

      s.data = TensorF({steps, ms.channels, side, side});
      if (ms.cloud_mask.enabled) s.cloud_mask = TensorF({steps, side, side});
      for (std::size_t t = 0; t < steps; ++t) {
        const double doy = s.times[t].day_of_year;
        for (std::size_t y = 0; y < side; ++y)
          for (std::size_t x = 0; x < side; ++x) {
            const std::size_t ly = (2 * y + 1) * ls / (2 * side), lx = (2 * x + 1) * ls / (2 * side);
            const std::size_t k = rec.label.class_map.at({ly, lx});
            const double freq = recipe.frequencies.empty() ? 1.0 : recipe.frequencies[k];
            const double phase = recipe.phases.empty() ? 0.0 : recipe.phases[k];
            const double pheno =
                r.amplitude * std::sin(2.0 * std::numbers::pi * freq * doy / 365.25 + phase + tile_phase);
            for (std::size_t c = 0; c < ms.channels; ++c) {
              const std::size_t g = group_of[c];
              const GroupTransform tf = g < r.groups.size() ? r.groups[g] : GroupTransform{};
              const double base = informative[g] ? signature[k][i][c] : nuisance[c];
              double v = illum[t] * (tf.gain * (base + pheno + recipe.noise * rng.normal()) + tf.offset);
              if (!block_offset.empty()) {
                v += block_offset[((t * blocks + y / ms.patch_size) * blocks + x / ms.patch_size) * ms.num_groups() + g];
              }
              if (cloudy[t]) v = tf.gain * 3.0 + tf.offset;
              s.data.at({t, c, y, x}) = static_cast<float>(v);
            }
            if (s.cloud_mask) s.cloud_mask->at({t, y, x}) = cloudy[t] ? 1.0f : 0.0f;
          }
      }
    }
    if (spec.task == Task::kClassification) rec.label.class_map = {};
    out.tiles.push_back(std::move(rec));
  }
  return out;
}

// Dataset files ---------------------------------------------------------------

nlohmann::json write_dataset(const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir / "tiles");
  nlohmann::json tiles = nlohmann::json::array();
  for (const auto& tile : data.tiles) {
    nlohmann::json mods = nlohmann::json::object();
    for (std::size_t i = 0; i < data.spec.modalities.size(); ++i) {
      const RawSeries& s = tile.series[i];
      if (s.data.empty()) continue;
      const std::string stem = "tiles/" + tile.id + "_" + data.spec.modalities[i].name;
      write_tensor(dir / (stem + ".bin"), s.data);
      write_times(dir / (stem + ".times.json"), s.times);
      nlohmann::json entry = {{"data", stem + ".bin"}, {"shape", s.data.shape()}, {"times", stem + ".times.json"}};
      if (s.cloud_mask) {
        write_tensor(dir / (stem + ".cloud.bin"), *s.cloud_mask);
        entry["cloud"] = stem + ".cloud.bin";
      }
      mods[data.spec.modalities[i].name] = entry;
    }
    nlohmann::json t = {{"id", tile.id}, {"modalities", mods}, {"classes", tile.label.classes}};
    if (data.spec.task == Task::kSegmentation) {
      const std::string label = "tiles/" + tile.id + ".label.u16";
      auto os = open_out(dir / label);
      os.write(reinterpret_cast<const char*>(tile.label.class_map.data()),
               static_cast<std::streamsize>(tile.label.class_map.size() * sizeof(std::uint16_t)));
      t["label_map"] = label;
    }
    tiles.push_back(std::move(t));
  }
  nlohmann::json manifest = {{"format", "maestro-tiles"},
                             {"version", kTileFormatVersion},
                             {"dataset", data.spec},
                             {"label_side", data.label_side},
                             {"tiles", tiles}};
  auto os = open_out(dir / "manifest.json");
  os << manifest.dump(2) << '\n';
  return manifest;
}

nlohmann::json read_manifest(const fs::path& dir) {
  auto is = open_in(dir / "manifest.json");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest in '" + dir.string() + "': " + e.what());
  }
  if (j.value("format", "") != "maestro-tiles") throw IoError("not a tile manifest: '" + dir.string() + "'");
  return j;
}

RawSeries read_tile(const fs::path& dir, const nlohmann::json& manifest, const std::string& tile_id,
                    const std::string& modality) {
  for (const auto& t : manifest.at("tiles")) {
    if (t.at("id") != tile_id) continue;
    const auto& mods = t.at("modalities");
    if (!mods.contains(modality)) throw IoError("tile '" + tile_id + "' has no modality '" + modality + "'");
    const auto& e = mods.at(modality);
    RawSeries s;
    const Shape shape = e.at("shape").get<Shape>();
    s.data = read_tensor(dir / e.at("data").get<std::string>(), shape);
    s.times = read_times(dir / e.at("times").get<std::string>());
    if (s.times.size() != shape.at(0)) throw IoError("shape mismatch: time list length differs from series length");
    if (e.contains("cloud")) {
      s.cloud_mask = read_tensor(dir / e.at("cloud").get<std::string>(), Shape{shape[0], shape[2], shape[3]});
    }
    return s;
  }
  throw IoError("unknown tile '" + tile_id + "'");
}

Dataset load_dataset(const fs::path& dir) {
  const nlohmann::json manifest = read_manifest(dir);
  Dataset data;
  data.spec = manifest.at("dataset").get<DatasetSpec>();
  data.label_side = manifest.at("label_side").get<std::size_t>();
  for (const auto& t : manifest.at("tiles")) {
    TileRecord rec;
    rec.id = t.at("id").get<std::string>();
    rec.series.resize(data.spec.modalities.size());
    for (std::size_t i = 0; i < data.spec.modalities.size(); ++i) {
      if (!data.spec.modalities[i].active()) continue;
      rec.series[i] = read_tile(dir, manifest, rec.id, data.spec.modalities[i].name);
    }
    rec.label.classes = t.at("classes").get<std::vector<std::size_t>>();
    if (t.contains("label_map")) {
      const std::size_t ls = data.label_side;
      rec.label.class_map = Tensor<std::uint16_t>({ls, ls});
      auto is = open_in(dir / t.at("label_map").get<std::string>());
      if (!is.read(reinterpret_cast<char*>(rec.label.class_map.data()),
                   static_cast<std::streamsize>(ls * ls * sizeof(std::uint16_t)))) {
        throw IoError("truncated label map for tile '" + rec.id + "'");
      }
    }
    data.tiles.push_back(std::move(rec));
  }
  return data;
}

}  // namespace maestro
