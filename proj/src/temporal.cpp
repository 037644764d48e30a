#include "maestro/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "maestro/errors.hpp"

namespace maestro {

IndexRange truncate_series(std::size_t num_steps, std::size_t num_bins, Rng& rng) {
  if (num_bins == 0) throw ValidationError("truncate_series: zero bins");
  if (num_steps < num_bins) {
    throw ValidationError("series shorter than bin count (" + std::to_string(num_steps) + " < " +
                          std::to_string(num_bins) + ")");
  }
  const std::size_t length = num_bins * (num_steps / num_bins);
  const std::size_t slack = num_steps - length;
  const std::size_t offset = slack == 0 ? 0 : rng.uniform_index(slack + 1);
  return {offset, offset + length};
}

std::vector<IndexRange> bin_series(IndexRange range, std::size_t num_bins) {
  if (num_bins == 0 || range.size() % num_bins != 0) {
    throw ValidationError("bin_series: " + std::to_string(num_bins) + " bins do not divide range of " +
                          std::to_string(range.size()));
  }
  const std::size_t width = range.size() / num_bins;
  std::vector<IndexRange> bins(num_bins);
  for (std::size_t b = 0; b < num_bins; ++b) bins[b] = {range.begin + b * width, range.begin + (b + 1) * width};
  return bins;
}

std::vector<std::size_t> valid_steps(IndexRange bin, const TensorF* cloud, double threshold) {
  if (bin.size() == 0) throw ValidationError("empty temporal bin");
  std::vector<std::size_t> steps;
  for (std::size_t t = bin.begin; t < bin.end; ++t) {
    bool ok = true;
    if (cloud) {
      for (float v : cloud->slab(t)) {
        if (v > threshold) {
          ok = false;
          break;
        }
      }
    }
    if (ok) steps.push_back(t);
  }
  if (steps.empty()) {
    steps.resize(bin.size());
    std::iota(steps.begin(), steps.end(), bin.begin);
  }
  return steps;
}

std::size_t select_train(IndexRange bin, const TensorF* cloud, double threshold, Rng& rng) {
  const auto steps = valid_steps(bin, cloud, threshold);
  return steps[rng.uniform_index(steps.size())];
}

std::size_t select_eval(IndexRange bin, const TensorF& data, const TensorF* cloud, double threshold) {
  const auto steps = valid_steps(bin, cloud, threshold);
  if (steps.size() == 1) return steps.front();
  const std::size_t frame = data.size() / data.dim(0);
  std::vector<double> median(frame);
  std::vector<double> column(steps.size());
  for (std::size_t px = 0; px < frame; ++px) {
    for (std::size_t s = 0; s < steps.size(); ++s) column[s] = data.slab(steps[s])[px];
    const std::size_t mid = column.size() / 2;
    std::nth_element(column.begin(), column.begin() + mid, column.end());
    double med = column[mid];
    if (column.size() % 2 == 0) {
      const double lower = *std::max_element(column.begin(), column.begin() + mid);
      med = 0.5 * (med + lower);
    }
    median[px] = med;
  }
  std::size_t best = steps.front();
  double best_mad = std::numeric_limits<double>::infinity();
  for (std::size_t t : steps) {
    const auto x = data.slab(t);
    double mad = 0.0;
    for (std::size_t px = 0; px < frame; ++px) mad += std::abs(static_cast<double>(x[px]) - median[px]);
    mad /= static_cast<double>(frame);
    if (mad < best_mad) {
      best_mad = mad;
      best = t;
    }
  }
  return best;
}

std::size_t tile_pixels(const DatasetSpec& ds, const ModalitySpec& m) { return nint(ds.tile_extent_m / m.gsd_m); }

std::size_t crop_pixels(const DatasetSpec& ds, const ModalitySpec& m) { return nint(ds.crop_extent_m / m.gsd_m); }

CropSample sample_crop(const DatasetSpec& ds, Phase phase, std::size_t repetition_index, Rng& rng) {
  const auto active = ds.active_modalities();
  if (active.empty()) throw ValidationError("sample_crop: no active modality");
  // Offsets are multiples of tile / units, where units divides every
  // modality's tile pixel count; this keeps every window pixel-aligned.
  std::size_t units = 0;
  for (std::size_t i : active) units = std::gcd(units, tile_pixels(ds, ds.modalities[i]));
  std::size_t max_unit = std::numeric_limits<std::size_t>::max();
  for (std::size_t i : active) {
    const auto& m = ds.modalities[i];
    const std::size_t tp = tile_pixels(ds, m);
    const std::size_t cp = crop_pixels(ds, m);
    max_unit = std::min(max_unit, (tp - cp) * units / tp);
  }

  CropSample out;
  out.units_per_tile = units;
  if (phase == Phase::kTrain) {
    out.unit_row = rng.uniform_index(max_unit + 1);
    out.unit_col = rng.uniform_index(max_unit + 1);
  } else {
    const std::size_t side = std::max<std::size_t>(1, nint(ds.tile_extent_m / ds.crop_extent_m));
    const std::size_t k = repetition_index % (side * side);
    const std::size_t i = k / side;
    const std::size_t j = k % side;
    out.unit_row = side == 1 ? 0 : i * max_unit / (side - 1);
    out.unit_col = side == 1 ? 0 : j * max_unit / (side - 1);
  }
  out.windows.resize(ds.modalities.size());
  for (std::size_t i : active) {
    const auto& m = ds.modalities[i];
    const std::size_t tp = tile_pixels(ds, m);
    out.windows[i] = {out.unit_row * tp / units, out.unit_col * tp / units, crop_pixels(ds, m)};
  }
  return out;
}

DiscretizedSeries discretize(const RawSeries& raw, const ModalitySpec& m, const PixelWindow& window, Phase phase,
                             Rng& truncate_rng, Rng& select_rng) {
  const auto& shape = raw.data.shape();
  if (shape.size() != 4) throw ValidationError("raw series must be [T, C, H, W]");
  const std::size_t num_steps = shape[0], channels = shape[1], height = shape[2], width = shape[3];
  if (channels != m.channels) throw ValidationError("modality " + m.name + ": channel count mismatch");
  if (raw.times.size() != num_steps) throw ValidationError("modality " + m.name + ": time list length mismatch");
  if (window.row + window.size > height || window.col + window.size > width) {
    throw ValidationError("modality " + m.name + ": crop window outside tile");
  }
  const std::size_t ws = window.size;

  // crop every step to the window
  TensorF cropped({num_steps, channels, ws, ws});
  for (std::size_t t = 0; t < num_steps; ++t)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t r = 0; r < ws; ++r)
        for (std::size_t q = 0; q < ws; ++q)
          cropped.at({t, c, r, q}) = raw.data.at({t, c, window.row + r, window.col + q});
  std::optional<TensorF> cloud;
  if (m.cloud_mask.enabled && raw.cloud_mask) {
    cloud = TensorF({num_steps, ws, ws});
    for (std::size_t t = 0; t < num_steps; ++t)
      for (std::size_t r = 0; r < ws; ++r)
        for (std::size_t q = 0; q < ws; ++q) cloud->at({t, r, q}) = raw.cloud_mask->at({t, window.row + r, window.col + q});
  }
  const TensorF* cloud_ptr = cloud ? &*cloud : nullptr;

  const std::size_t bins_wanted = m.temporal_bins;
  const IndexRange range = truncate_series(num_steps, bins_wanted, truncate_rng);
  DiscretizedSeries out;
  out.bins = bin_series(range, bins_wanted);

  const std::size_t size = m.image_size;
  out.data = TensorF({bins_wanted, channels, size, size});
  const float inv_norm = static_cast<float>(1.0 / m.norm_factor);
  for (std::size_t b = 0; b < bins_wanted; ++b) {
    const std::size_t t = phase == Phase::kTrain ? select_train(out.bins[b], cloud_ptr, m.cloud_mask.threshold, select_rng)
                                                 : select_eval(out.bins[b], cropped, cloud_ptr, m.cloud_mask.threshold);
    out.selected_indices.push_back(t);
    out.selected_times.push_back(raw.times[t]);
    // nearest-neighbour resample from ws to image_size
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t r = 0; r < size; ++r)
        for (std::size_t q = 0; q < size; ++q) {
          const std::size_t sr = r * ws / size;
          const std::size_t sq = q * ws / size;
          out.data.at({b, c, r, q}) = cropped.at({t, c, sr, sq}) * inv_norm;
        }
  }
  return out;
}

std::size_t d4_inverse(std::size_t k) {
  if (k >= 8) throw ValidationError("D4 element out of range");
  if (k >= 4) return k;  // reflections are involutions
  return (4 - k) % 4;
}

std::size_t d4_compose(std::size_t second, std::size_t first) {
  if (second >= 8 || first >= 8) throw ValidationError("D4 element out of range");
  // R^a F^f R^b F^g = R^(a + (f ? -b : b)) F^(f xor g)
  const std::size_t ra = second % 4, fa = second / 4;
  const std::size_t rb = first % 4, fb = first / 4;
  const std::size_t r = (ra + (fa ? 4 - rb : rb)) % 4;
  return r + 4 * (fa ^ fb);
}

template <typename T>
Tensor<T> d4_transform(const Tensor<T>& x, std::size_t k) {
  if (k >= 8) throw ValidationError("D4 element out of range");
  if (x.ndim() < 2) throw ValidationError("d4_transform needs at least 2 dims");
  const std::size_t n = x.dim(x.ndim() - 1);
  if (x.dim(x.ndim() - 2) != n) throw ValidationError("d4_transform needs square spatial dims");
  Tensor<T> out(x.shape());
  const std::size_t plane = n * n;
  const std::size_t planes = x.size() / plane;
  const bool flip = k >= 4;
  const std::size_t turns = k % 4;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      std::size_t i = a, j = flip ? n - 1 - b : b;
      for (std::size_t r = 0; r < turns; ++r) {
        const std::size_t ni = n - 1 - j;
        j = i;
        i = ni;
      }
      for (std::size_t p = 0; p < planes; ++p) out[p * plane + i * n + j] = x[p * plane + a * n + b];
    }
  }
  return out;
}

template Tensor<float> d4_transform(const Tensor<float>&, std::size_t);
template Tensor<double> d4_transform(const Tensor<double>&, std::size_t);
template Tensor<std::uint16_t> d4_transform(const Tensor<std::uint16_t>&, std::size_t);

}  // namespace maestro
