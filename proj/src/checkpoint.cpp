#include "maestro/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "maestro/errors.hpp"

namespace maestro {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'M', 'S', 'T', 'R'};

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
void get(std::istream& is, V& v, const std::string& where) {
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) throw IoError("truncated checkpoint" + where);
}

}  // namespace

void save_checkpoint(const fs::path& path, const nn::ParamStore<float>& params) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(kMagic, 4);
  put<std::uint16_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    const auto& m = params.value(i);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, 2);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols));
    os.write(reinterpret_cast<const char*>(m.data.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  }
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

nn::ParamStore<float> load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::string where = " '" + path.string() + "'";
  char magic[4];
  if (!is.read(magic, 4)) throw IoError("truncated checkpoint" + where);
  if (std::memcmp(magic, kMagic, 4) != 0) throw IoError("bad checkpoint magic" + where);
  std::uint16_t version = 0;
  get(is, version, where);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version" + where);
  std::uint32_t count = 0;
  get(is, count, where);
  nn::ParamStore<float> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    get(is, len, where);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError("truncated checkpoint" + where);
    std::uint8_t ndim = 0;
    get(is, ndim, where);
    if (ndim != 2) throw IoError("unsupported tensor rank in checkpoint" + where);
    std::uint32_t rows = 0, cols = 0;
    get(is, rows, where);
    get(is, cols, where);
    nn::Matrix<float> m(rows, cols);
    if (!is.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(m.size() * sizeof(float)))) {
      throw IoError("truncated checkpoint" + where);
    }
    params.add(name, std::move(m));
  }
  return params;
}

std::size_t copy_matching(nn::ParamStore<float>& dst, const nn::ParamStore<float>& src,
                          const std::function<bool(std::size_t)>& required) {
  std::size_t copied = 0;
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const std::string& name = dst.name(i);
    if (!src.contains(name)) {
      if (required(i)) throw ValidationError("incompatible checkpoint: missing parameter '" + name + "'");
      continue;
    }
    const auto& from = src.value(src.id(name));
    auto& to = dst.value(i);
    if (from.rows != to.rows || from.cols != to.cols) {
      throw ValidationError("incompatible checkpoint: shape of '" + name + "' differs");
    }
    to.data = from.data;
    ++copied;
  }
  return copied;
}

std::uint64_t param_checksum(const nn::ParamStore<float>& params, const std::function<bool(std::size_t)>& include) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ull;
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!include(i)) continue;
    mix(params.name(i).data(), params.name(i).size());
    mix(params.value(i).data.data(), params.value(i).size() * sizeof(float));
  }
  return h;
}

}  // namespace maestro
