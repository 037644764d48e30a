#include <cmath>
#include <numbers>

#include "doctest.h"
#include "maestro/encodings.hpp"
#include "maestro/errors.hpp"

using namespace maestro;

namespace {

ModalitySpec square(const char* name, std::size_t image, std::size_t patch, std::size_t bins = 1) {
  ModalitySpec m;
  m.name = name;
  m.image_size = image;
  m.patch_size = patch;
  m.temporal_bins = bins;
  m.channels = 1;
  m.band_groups = {{0}};
  return m;
}

}  // namespace

TEST_CASE("sincos grid golden values, width 4") {
  const auto t = sincos_grid(2, 4);
  REQUIRE(t.size() == 16);
  // (r, c) = (0, 0), (0, 1), (1, 0), (1, 1); single frequency 1.
  const double want[4][4] = {{0, 1, 0, 1},
                             {0, 1, std::sin(1.0), std::cos(1.0)},
                             {std::sin(1.0), std::cos(1.0), 0, 1},
                             {std::sin(1.0), std::cos(1.0), std::sin(1.0), std::cos(1.0)}};
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t k = 0; k < 4; ++k) CHECK(t[p * 4 + k] == doctest::Approx(want[p][k]).epsilon(1e-15));
}

TEST_CASE("sincos grid golden values, width 8") {
  const auto t = sincos_grid(3, 8);
  // Frequencies 1 and 1/100. Row (r, c) = (2, 1).
  const double* row = t.data() + (2 * 3 + 1) * 8;
  const double want[8] = {std::sin(2.0), std::sin(0.02), std::cos(2.0), std::cos(0.02),
                          std::sin(1.0), std::sin(0.01), std::cos(1.0), std::cos(0.01)};
  for (std::size_t k = 0; k < 8; ++k) CHECK(row[k] == doctest::Approx(want[k]).epsilon(1e-15));
}

TEST_CASE("sincos grid rejects widths not divisible by four") {
  CHECK_THROWS_AS(sincos_grid(2, 6), ValidationError);
  CHECK_THROWS_AS(sincos_grid(2, 0), ValidationError);
}

TEST_CASE("spatial tables: finest modality equals the raw grid; coarser ones are block means") {
  const std::vector<ModalitySpec> specs{square("fine", 12, 2), square("coarse", 12, 6), square("off", 12, 3, 0)};
  const auto tables = spatial_tables(specs, 8);
  REQUIRE(tables.size() == 3);
  CHECK(tables[2].values.empty());
  CHECK(tables[0].lcm_side == 6);
  CHECK(tables[0].grid_side == 6);
  CHECK(tables[1].grid_side == 2);
  CHECK(tables[0].values == sincos_grid(6, 8));

  const auto fine = sincos_grid(6, 8);
  // Coarse position (1, 0) averages fine rows 3..5, columns 0..2.
  for (std::size_t k = 0; k < 8; ++k) {
    double sum = 0.0;
    for (std::size_t r = 3; r < 6; ++r)
      for (std::size_t c = 0; c < 3; ++c) sum += fine[(r * 6 + c) * 8 + k];
    CHECK(tables[1].row(2)[k] == doctest::Approx(sum / 9.0).epsilon(1e-14));
  }
}

TEST_CASE("spatial tables: lcm of 4 and 6 is 12") {
  const auto tables = spatial_tables({square("a", 8, 2), square("b", 12, 2)}, 4);
  CHECK(tables[0].lcm_side == 12);
  CHECK(tables[0].positions() == 16);
  CHECK(tables[1].positions() == 36);
}

TEST_CASE("temporal features at quarter phases") {
  TimeRecord t;
  t.day_of_year = 365.25 / 4.0;
  t.hour_of_day = 18.0;
  t.absolute_day = 1000;
  const auto f = temporal_features(t, 1000.0 - 365.25);
  CHECK(f[0] == doctest::Approx(1.0));
  CHECK(std::abs(f[1]) < 1e-15);
  CHECK(f[2] == doctest::Approx(-1.0));
  CHECK(std::abs(f[3]) < 1e-15);
  for (std::size_t k = 4; k < 8; ++k) CHECK(f[k] == doctest::Approx(1.0));
}

TEST_CASE("temporal features: reference day gives zero offset; phases wrap yearly and daily") {
  TimeRecord ref{200.0, 12.0, 5000};
  const auto f = temporal_features(ref, ref);
  for (std::size_t k = 4; k < 8; ++k) CHECK(f[k] == 0.0);
  CHECK(f[2] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(f[3] == doctest::Approx(-1.0));

  TimeRecord a{10.0, 3.0, 0}, b{10.0 + 365.25, 3.0 + 24.0, 0};
  const auto fa = temporal_features(a, 0.0), fb = temporal_features(b, 0.0);
  for (std::size_t k = 0; k < 4; ++k) CHECK(fa[k] == doctest::Approx(fb[k]).epsilon(1e-12));

  TimeRecord before{1.0, 0.0, 5000 - 73};
  CHECK(temporal_features(before, ref)[4] == doctest::Approx(-73.0 / 365.25));
}

TEST_CASE("reference day is the median absolute day") {
  auto at = [](std::int64_t d) { return TimeRecord{1.0, 0.0, d}; };
  CHECK(reference_day({}) == 0.0);
  CHECK(reference_day({at(7)}) == 7.0);
  CHECK(reference_day({at(30), at(10), at(20)}) == 20.0);
  CHECK(reference_day({at(40), at(10), at(20), at(31)}) == 25.5);
}

TEST_CASE("token encodings follow (bin, position, stream) order") {
  const auto tables = spatial_tables({square("m", 4, 2, 3)}, 4);
  const std::vector<TimeRecord> times{{10.0, 0.0, 100}, {50.0, 6.0, 140}, {90.0, 12.0, 180}};
  const double ref = reference_day(times);
  const auto enc = token_encodings<double>(tables[0], times, ref, 2);
  CHECK(enc.rows == 3 * 4 * 2);
  CHECK(enc.cols == 12);
  for (std::size_t d = 0; d < 3; ++d) {
    const auto tf = temporal_features(times[d], ref);
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t s = 0; s < 2; ++s) {
        const std::size_t row = (d * 4 + p) * 2 + s;
        for (std::size_t k = 0; k < 4; ++k) CHECK(enc(row, k) == tables[0].row(p)[k]);
        for (std::size_t k = 0; k < 8; ++k) CHECK(enc(row, 4 + k) == tf[k]);
      }
  }
}

TEST_CASE("attach adds encodings and passes gradients through unchanged") {
  const auto tables = spatial_tables({square("m", 4, 2, 2)}, 4);
  const std::vector<TimeRecord> times{{10.0, 0.0, 100}, {200.0, 0.0, 290}};
  const auto enc = token_encodings<double>(tables[0], times, 195.0, 1);
  nn::ParamStore<double> ps;
  nn::Matrix<double> init(enc.rows, enc.cols);
  for (std::size_t i = 0; i < init.data.size(); ++i) init.data[i] = 0.25 * static_cast<double>(i % 7);
  const auto id = ps.add("x", init);
  nn::Graph<double> g(&ps);
  const auto y = attach(g, g.param(id), enc);
  for (std::size_t i = 0; i < enc.data.size(); ++i) CHECK(g.value(y).data[i] == init.data[i] + enc.data[i]);
  const auto x = g.param(id);
  g.backward(g.sum(attach(g, x, enc)));
  for (double v : g.grad(x)) CHECK(v == 1.0);

  nn::Graph<double> bad(&ps);
  CHECK_THROWS_AS(attach(bad, bad.param(id), nn::Matrix<double>(enc.rows, enc.cols + 1)), ValidationError);
}
