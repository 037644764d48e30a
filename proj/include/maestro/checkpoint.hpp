#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>

#include "maestro/autodiff.hpp"

namespace maestro {

// "MSTR", u16 version, u32 record count, then per record: u32 name length,
// UTF-8 name, u8 ndim, u32 dims, f32 payload (row-major, little-endian).
inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const nn::ParamStore<float>& params);
nn::ParamStore<float> load_checkpoint(const std::filesystem::path& path);

// Copies every source tensor whose name exists in `dst`. Parameters of `dst`
// selected by `required` must be present in `src` with identical shapes,
// otherwise ValidationError ("incompatible checkpoint"). Returns copies made.
std::size_t copy_matching(nn::ParamStore<float>& dst, const nn::ParamStore<float>& src,
                          const std::function<bool(std::size_t)>& required);

// FNV-1a over names and raw bytes of the parameters selected by `include`.
std::uint64_t param_checksum(const nn::ParamStore<float>& params, const std::function<bool(std::size_t)>& include);

}  // namespace maestro
