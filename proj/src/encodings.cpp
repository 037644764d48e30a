#include "maestro/encodings.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "maestro/errors.hpp"

namespace maestro {

namespace {
constexpr double kYearDays = 365.25;
}

std::vector<double> sincos_grid(std::size_t side, std::size_t width) {
  if (width == 0 || width % 4) throw ValidationError("spatial encoding width must be a positive multiple of 4");
  const std::size_t quarter = width / 4;
  std::vector<double> omega(quarter);
  for (std::size_t k = 0; k < quarter; ++k) {
    omega[k] = 1.0 / std::pow(10000.0, static_cast<double>(k) / static_cast<double>(quarter));
  }
  std::vector<double> out(side * side * width);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      double* row = out.data() + (r * side + c) * width;
      for (std::size_t k = 0; k < quarter; ++k) {
        row[k] = std::sin(static_cast<double>(r) * omega[k]);
        row[quarter + k] = std::cos(static_cast<double>(r) * omega[k]);
        row[2 * quarter + k] = std::sin(static_cast<double>(c) * omega[k]);
        row[3 * quarter + k] = std::cos(static_cast<double>(c) * omega[k]);
      }
    }
  return out;
}

std::vector<PositionalTable> spatial_tables(const std::vector<ModalitySpec>& specs, std::size_t width) {
  const std::size_t lcm = lcm_token_grid(specs);
  const std::vector<double> fine = sincos_grid(lcm, width);
  std::vector<PositionalTable> tables(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!specs[i].active()) continue;
    PositionalTable& t = tables[i];
    t.lcm_side = lcm;
    t.grid_side = specs[i].grid_side();
    t.width = width;
    t.values.assign(t.positions() * width, 0.0);
    const std::size_t block = lcm / t.grid_side;
    const double inv = 1.0 / static_cast<double>(block * block);
    for (std::size_t r = 0; r < t.grid_side; ++r)
      for (std::size_t c = 0; c < t.grid_side; ++c) {
        double* dst = t.values.data() + (r * t.grid_side + c) * width;
        for (std::size_t br = 0; br < block; ++br)
          for (std::size_t bc = 0; bc < block; ++bc) {
            const double* src = fine.data() + ((r * block + br) * lcm + c * block + bc) * width;
            for (std::size_t k = 0; k < width; ++k) dst[k] += src[k];
          }
        for (std::size_t k = 0; k < width; ++k) dst[k] *= inv;
      }
  }
  return tables;
}

std::array<double, kTemporalDims> temporal_features(const TimeRecord& t, double ref_day) {
  const double day_phase = 2.0 * std::numbers::pi * t.day_of_year / kYearDays;
  const double hour_phase = 2.0 * std::numbers::pi * t.hour_of_day / 24.0;
  const double delta = (static_cast<double>(t.absolute_day) - ref_day) / kYearDays;
  return {std::sin(day_phase), std::cos(day_phase), std::sin(hour_phase), std::cos(hour_phase),
          delta, delta, delta, delta};
}

double reference_day(const std::vector<TimeRecord>& times) {
  if (times.empty()) return 0.0;
  std::vector<std::int64_t> days;
  days.reserve(times.size());
  for (const auto& t : times) days.push_back(t.absolute_day);
  std::sort(days.begin(), days.end());
  const std::size_t n = days.size();
  if (n % 2) return static_cast<double>(days[n / 2]);
  return 0.5 * (static_cast<double>(days[n / 2 - 1]) + static_cast<double>(days[n / 2]));
}

template <typename T>
nn::Matrix<T> token_encodings(const PositionalTable& table, const std::vector<TimeRecord>& bin_times, double ref_day,
                              std::size_t streams) {
  const std::size_t n = table.positions(), width = table.width + kTemporalDims;
  nn::Matrix<T> out(bin_times.size() * n * streams, width);
  for (std::size_t d = 0; d < bin_times.size(); ++d) {
    const auto temporal = temporal_features(bin_times[d], ref_day);
    for (std::size_t p = 0; p < n; ++p) {
      const double* spatial = table.row(p);
      for (std::size_t s = 0; s < streams; ++s) {
        auto row = out.row((d * n + p) * streams + s);
        for (std::size_t k = 0; k < table.width; ++k) row[k] = static_cast<T>(spatial[k]);
        for (std::size_t k = 0; k < kTemporalDims; ++k) row[table.width + k] = static_cast<T>(temporal[k]);
      }
    }
  }
  return out;
}

template <typename T>
nn::Var attach(nn::Graph<T>& g, nn::Var tokens, const nn::Matrix<T>& encodings) {
  if (g.rows(tokens) != encodings.rows || g.cols(tokens) != encodings.cols) {
    throw ValidationError("attach: encoding shape does not match tokens");
  }
  return g.add(tokens, g.constant(encodings));
}

template nn::Matrix<float> token_encodings<float>(const PositionalTable&, const std::vector<TimeRecord>&, double,
                                                  std::size_t);
template nn::Matrix<double> token_encodings<double>(const PositionalTable&, const std::vector<TimeRecord>&, double,
                                                    std::size_t);
template nn::Var attach<float>(nn::Graph<float>&, nn::Var, const nn::Matrix<float>&);
template nn::Var attach<double>(nn::Graph<double>&, nn::Var, const nn::Matrix<double>&);

}  // namespace maestro
