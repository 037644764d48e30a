#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "maestro/rng.hpp"
#include "maestro/spec.hpp"
#include "maestro/tensor.hpp"

namespace maestro {

struct TimeRecord {
  double day_of_year = 1.0;  // 1..366
  double hour_of_day = 0.0;  // [0, 24)
  std::int64_t absolute_day = 0;

  friend bool operator==(const TimeRecord&, const TimeRecord&) = default;
};

// One modality's full time series over a tile.
struct RawSeries {
  TensorF data;  // [T, C, H, W]
  std::vector<TimeRecord> times;
  std::optional<TensorF> cloud_mask;  // [T, H, W], probabilities
};

// Half-open index range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

struct DiscretizedSeries {
  TensorF data;  // [D, C, I, I], already divided by the modality norm factor
  std::vector<TimeRecord> selected_times;
  std::vector<std::size_t> selected_indices;
  std::vector<IndexRange> bins;
};

enum class Phase { kTrain, kEval };

// Random contiguous window of length D * floor(T / D).
IndexRange truncate_series(std::size_t num_steps, std::size_t num_bins, Rng& rng);

// Splits a range into `num_bins` equal contiguous bins.
std::vector<IndexRange> bin_series(IndexRange range, std::size_t num_bins);

// `cloud` is [T, H, W] or null. A step is valid when no pixel exceeds the
// threshold; with no valid step the whole bin is eligible.
std::vector<std::size_t> valid_steps(IndexRange bin, const TensorF* cloud, double threshold);
std::size_t select_train(IndexRange bin, const TensorF* cloud, double threshold, Rng& rng);
// Step closest (mean absolute deviation) to the pixel-wise median over the
// eligible steps. Ties go to the lowest index.
std::size_t select_eval(IndexRange bin, const TensorF& data, const TensorF* cloud, double threshold);

// Square pixel window within a tile.
struct PixelWindow {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t size = 0;
  friend bool operator==(const PixelWindow&, const PixelWindow&) = default;
};

struct CropSample {
  // Offset in alignment units (tile_extent / units_per_tile).
  std::size_t unit_row = 0;
  std::size_t unit_col = 0;
  std::size_t units_per_tile = 1;
  std::vector<PixelWindow> windows;  // indexed like DatasetSpec::modalities
};

std::size_t tile_pixels(const DatasetSpec& ds, const ModalitySpec& m);
std::size_t crop_pixels(const DatasetSpec& ds, const ModalitySpec& m);

// Train: uniform over all pixel-aligned crops. Eval: window `repetition_index`
// of the non-overlapping partition (row-major).
CropSample sample_crop(const DatasetSpec& ds, Phase phase, std::size_t repetition_index, Rng& rng);

// Crops, truncates, bins, selects one step per bin, resamples to I_m (nearest)
// and divides by the norm factor.
DiscretizedSeries discretize(const RawSeries& raw, const ModalitySpec& m, const PixelWindow& window, Phase phase,
                             Rng& truncate_rng, Rng& select_rng);

// Dihedral group D4: element k = rotation (k % 4 quarter turns counter-clockwise)
// applied after an optional horizontal flip (k >= 4).
std::size_t d4_inverse(std::size_t k);
// Element equivalent to applying `first` then `second`.
std::size_t d4_compose(std::size_t second, std::size_t first);

template <typename T>
Tensor<T> d4_transform(const Tensor<T>& x, std::size_t k);

}  // namespace maestro
