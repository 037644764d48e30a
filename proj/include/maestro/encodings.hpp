#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "maestro/autodiff.hpp"
#include "maestro/spec.hpp"
#include "maestro/temporal.hpp"

namespace maestro {

inline constexpr std::size_t kTemporalDims = 8;

// Row-major [positions, width] table of spatial encodings for one modality.
struct PositionalTable {
  std::size_t lcm_side = 0;
  std::size_t grid_side = 0;
  std::size_t width = 0;
  std::vector<double> values;

  std::size_t positions() const { return grid_side * grid_side; }
  const double* row(std::size_t p) const { return values.data() + p * width; }
};

// 2-D sine-cosine table on a side x side grid. The first half of the width
// encodes the row index, the second half the column index; each half is
// [sin(pos * w_k)..., cos(pos * w_k)...] with w_k = 10000^(-k / (width / 4)).
std::vector<double> sincos_grid(std::size_t side, std::size_t width);

// Tables for every modality (inactive ones stay empty), built on the lcm grid
// and block-averaged down to each modality's token grid. `width` excludes the
// temporal dimensions.
std::vector<PositionalTable> spatial_tables(const std::vector<ModalitySpec>& specs, std::size_t width);

// (sin, cos) of the day-of-year phase, (sin, cos) of the hour phase, then the
// offset from the reference day in years, repeated four times.
std::array<double, kTemporalDims> temporal_features(const TimeRecord& t, double ref_day);
inline std::array<double, kTemporalDims> temporal_features(const TimeRecord& t, const TimeRecord& ref) {
  return temporal_features(t, static_cast<double>(ref.absolute_day));
}

// Median absolute day over all given time stamps (mean of the middle pair for
// even counts).
double reference_day(const std::vector<TimeRecord>& times);

// Additive encodings for one modality's tokens in (bin, position, stream)
// order: [bins * positions * streams, table.width + 8].
template <typename T>
nn::Matrix<T> token_encodings(const PositionalTable& table, const std::vector<TimeRecord>& bin_times, double ref_day,
                              std::size_t streams);

// tokens + encodings (elementwise).
template <typename T>
nn::Var attach(nn::Graph<T>& g, nn::Var tokens, const nn::Matrix<T>& encodings);

}  // namespace maestro
