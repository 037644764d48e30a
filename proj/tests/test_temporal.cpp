#include <cstdint>
#include <set>

#include "doctest.h"
#include "maestro/errors.hpp"
#include "maestro/temporal.hpp"
#include "stat_oracles.hpp"

using namespace maestro;

namespace {

Rng rng_for(std::uint64_t seed, Purpose p = Purpose::kTruncate) { return Rng(RngKey{seed, 0, 0, p, 0}); }

TensorF frames(const std::vector<std::vector<float>>& steps) {
  // steps[t] is a 1 x 1 x n image
  const std::size_t n = steps[0].size();
  TensorF t({steps.size(), 1, 1, n});
  for (std::size_t s = 0; s < steps.size(); ++s)
    for (std::size_t i = 0; i < n; ++i) t.at({s, 0, 0, i}) = steps[s][i];
  return t;
}

TensorF cloud_flags(const std::vector<float>& per_step) {
  TensorF c({per_step.size(), 1, 1});
  for (std::size_t s = 0; s < per_step.size(); ++s) c[s] = per_step[s];
  return c;
}

}  // namespace

TEST_CASE("truncate_series") {
  auto rng = rng_for(1);
  CHECK(truncate_series(16, 4, rng) == IndexRange{0, 16});
  CHECK_THROWS_WITH_AS(truncate_series(3, 4, rng), doctest::Contains("series shorter than bin count"), ValidationError);

  std::vector<double> counts(3, 0.0);
  for (std::uint64_t seed = 0; seed < 6000; ++seed) {
    auto r = rng_for(seed);
    const auto range = truncate_series(70, 4, r);
    REQUIRE(range.size() == 68);
    REQUIRE(range.begin <= 2);
    counts[range.begin] += 1.0;
  }
  CHECK(testing::chi_square_uniform_p(counts) > 0.01);
}

TEST_CASE("bin_series") {
  const auto bins = bin_series({1, 69}, 4);
  REQUIRE(bins.size() == 4);
  for (std::size_t b = 0; b < 4; ++b) CHECK(bins[b] == IndexRange{1 + 17 * b, 1 + 17 * (b + 1)});
  const auto singles = bin_series({0, 16}, 16);
  for (std::size_t b = 0; b < 16; ++b) CHECK(singles[b].size() == 1);
  CHECK(bin_series({0, 12}, 1).front() == IndexRange{0, 12});
  CHECK_THROWS_AS(bin_series({0, 10}, 4), ValidationError);
}

TEST_CASE("select_train is uniform over valid steps") {
  std::vector<double> counts(3, 0.0);
  for (std::uint64_t seed = 0; seed < 6000; ++seed) {
    auto r = rng_for(seed, Purpose::kSelect);
    counts[select_train({0, 3}, nullptr, 0.0, r) - 0] += 1.0;
  }
  CHECK(testing::chi_square_uniform_p(counts) > 0.01);

  const TensorF one_valid = cloud_flags({0.0f, 0.9f, 0.7f});
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto r = rng_for(seed, Purpose::kSelect);
    CHECK(select_train({0, 3}, &one_valid, 0.5, r) == 0);
  }

  const TensorF all_cloudy = cloud_flags({0.8f, 0.9f, 0.7f});
  std::vector<double> fallback(3, 0.0);
  for (std::uint64_t seed = 0; seed < 6000; ++seed) {
    auto r = rng_for(seed, Purpose::kSelect);
    fallback[select_train({0, 3}, &all_cloudy, 0.5, r)] += 1.0;
  }
  CHECK(testing::chi_square_uniform_p(fallback) > 0.01);
}

TEST_CASE("select_eval picks the most representative step") {
  const TensorF data = frames({{1, 1}, {1, 3}, {9, 9}});
  CHECK(select_eval({0, 3}, data, nullptr, 0.0) == 1);
  CHECK(select_eval({2, 3}, data, nullptr, 0.0) == 2);
  const TensorF twins = frames({{4, 5}, {4, 5}});
  CHECK(select_eval({0, 2}, twins, nullptr, 0.0) == 0);
  // cloudy step 1 is excluded; median of {step0, step2} is [5,5]
  const TensorF cloud = cloud_flags({0.0f, 1.0f, 0.0f});
  CHECK(select_eval({0, 3}, data, &cloud, 0.5) == 0);
}

TEST_CASE("eval crops partition the tile") {
  const RunSpec run = load_preset("pastis_hd");
  const auto& ds = run.dataset;
  CHECK(ds.repetition_factor() == 64);
  const std::size_t spot = *ds.modality_index("spot");
  const std::size_t s2 = *ds.modality_index("s2");
  std::vector<int> covered(1280 * 1280, 0);
  std::set<std::pair<std::size_t, std::size_t>> offsets;
  auto rng = rng_for(0, Purpose::kCrop);
  for (std::size_t k = 0; k < 64; ++k) {
    const auto crop = sample_crop(ds, Phase::kEval, k, rng);
    const auto& w = crop.windows[spot];
    CHECK(w.size == 160);
    CHECK(crop.windows[s2].size == 16);
    offsets.insert({w.row, w.col});
    for (std::size_t r = w.row; r < w.row + w.size; ++r)
      for (std::size_t c = w.col; c < w.col + w.size; ++c) covered[r * 1280 + c]++;
  }
  CHECK(offsets.size() == 64);
  for (int v : covered) REQUIRE(v == 1);
}

TEST_CASE("train crops stay pixel aligned and geographically synchronous") {
  const RunSpec run = load_preset("pastis_hd");
  const auto& ds = run.dataset;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    auto rng = rng_for(seed, Purpose::kCrop);
    const auto crop = sample_crop(ds, Phase::kTrain, 0, rng);
    for (std::size_t i = 0; i < ds.modalities.size(); ++i) {
      const auto& m = ds.modalities[i];
      const auto& w = crop.windows[i];
      const std::size_t tp = tile_pixels(ds, m);
      REQUIRE(w.row + w.size <= tp);
      REQUIRE(w.col + w.size <= tp);
      // metric offsets agree exactly: row / tile_px equal as rationals
      const auto& ref = crop.windows[0];
      const std::size_t tp0 = tile_pixels(ds, ds.modalities[0]);
      REQUIRE(w.row * tp0 == ref.row * tp);
      REQUIRE(w.col * tp0 == ref.col * tp);
      REQUIRE(w.size * tp0 == ref.size * tp);
    }
  }
  const RunSpec ts = load_preset("treesatai_ts");
  auto rng = rng_for(3, Purpose::kCrop);
  const auto whole = sample_crop(ts.dataset, Phase::kTrain, 0, rng);
  CHECK(whole.windows[0] == PixelWindow{0, 0, 300});
  CHECK(whole.windows[3] == PixelWindow{0, 0, 6});
}

TEST_CASE("discretize in eval mode is seed independent") {
  ModalitySpec m;
  m.name = "s";
  m.image_size = 4;
  m.patch_size = 2;
  m.temporal_bins = 3;
  m.channels = 2;
  m.band_groups = {{0, 1}};
  m.norm_factor = 10.0;
  RawSeries raw;
  raw.data = TensorF({10, 2, 4, 4});
  Rng fill(5);
  for (auto& v : raw.data.values()) v = static_cast<float>(fill.uniform(0, 100));
  for (std::size_t t = 0; t < 10; ++t) raw.times.push_back({static_cast<double>(10 + t * 30), 10.0, static_cast<std::int64_t>(t * 30)});

  auto r1 = rng_for(1), s1 = rng_for(1, Purpose::kSelect);
  auto r2 = rng_for(1), s2 = rng_for(2, Purpose::kSelect);
  const auto a = discretize(raw, m, {0, 0, 4}, Phase::kEval, r1, s1);
  const auto b = discretize(raw, m, {0, 0, 4}, Phase::kEval, r2, s2);
  CHECK(a.data == b.data);
  CHECK(a.data.shape() == Shape{3, 2, 4, 4});
  for (std::size_t b2 = 0; b2 < 3; ++b2) {
    CHECK(a.selected_indices[b2] >= a.bins[b2].begin);
    CHECK(a.selected_indices[b2] < a.bins[b2].end);
  }
  // norm factor applied
  const std::size_t t0 = a.selected_indices[0];
  CHECK(a.data.at({0, 1, 2, 3}) == doctest::Approx(raw.data.at({t0, 1, 2, 3}) / 10.0));
}

TEST_CASE("discretize resamples to the configured image size") {
  ModalitySpec m;
  m.name = "s";
  m.image_size = 4;
  m.patch_size = 2;
  m.temporal_bins = 1;
  m.channels = 1;
  m.band_groups = {{0}};
  RawSeries raw;
  raw.data = TensorF({1, 1, 2, 2}, {1, 2, 3, 4});
  raw.times = {{1, 0, 0}};
  auto r = rng_for(0), s = rng_for(0);
  const auto out = discretize(raw, m, {0, 0, 2}, Phase::kTrain, r, s);
  CHECK(out.data.storage() == std::vector<float>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
}

TEST_CASE("D4 group laws") {
  TensorF x({2, 3, 5, 5});
  Rng rng(11);
  for (auto& v : x.values()) v = static_cast<float>(rng.normal());

  CHECK(d4_transform(x, 0) == x);
  TensorF r = x;
  for (int i = 0; i < 4; ++i) r = d4_transform(r, 1);
  CHECK(r == x);
  for (std::size_t k = 0; k < 8; ++k) {
    CAPTURE(k);
    CHECK(d4_transform(d4_transform(x, k), d4_inverse(k)) == x);
    CHECK(d4_compose(d4_inverse(k), k) == 0);
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(d4_transform(d4_transform(x, k), j) == d4_transform(x, d4_compose(j, k)));
    }
  }
  // all eight elements act differently on a generic image
  std::set<std::vector<float>> images;
  for (std::size_t k = 0; k < 8; ++k) images.insert(d4_transform(x, k).storage());
  CHECK(images.size() == 8);
  // the leading axes are untouched
  const auto y = d4_transform(x, 5);
  CHECK(y.shape() == x.shape());

  Tensor<std::uint16_t> labels({3, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8});
  // a quarter turn counter-clockwise moves the top-right corner to the top-left
  CHECK(d4_transform(labels, 1).at({0, 0}) == 2);
  CHECK_THROWS_AS(d4_transform(TensorF({2, 3}), 1), ValidationError);
}
