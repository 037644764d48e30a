#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "maestro/errors.hpp"
#include "maestro/masking.hpp"

using namespace maestro;

namespace {

DatasetSpec two_modalities() {
  ModalitySpec a;
  a.name = "a";
  a.image_size = 4;
  a.patch_size = 2;
  a.temporal_bins = 3;
  a.channels = 4;
  a.band_groups = {{0, 1}, {2, 3}};
  ModalitySpec b = a;
  b.name = "b";
  b.image_size = 6;
  b.patch_size = 3;
  b.temporal_bins = 1;
  b.channels = 1;
  b.band_groups = {{0}};
  DatasetSpec ds;
  ds.name = "two";
  ds.modalities = {a, b};
  return ds;
}

std::size_t count(const std::vector<std::uint8_t>& m) {
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
}

}  // namespace

TEST_CASE("layout offsets and token order") {
  const DatasetSpec ds = two_modalities();
  const auto joint = TokenLayout::build(ds, Multispectral::kJointToken);
  REQUIRE(joint.slots.size() == 2);
  CHECK(joint.slots[0].count() == 12);
  CHECK(joint.slots[1].offset == 12);
  CHECK(joint.total == 16);

  const auto tb = TokenLayout::build(ds, Multispectral::kTokenBased);
  CHECK(tb.slots[0].streams == 2);
  CHECK(tb.total == 4 * 3 * 2 + 4);
  CHECK(tb.slots[0].index(2, 1, 1) == (2 * 4 + 1) * 2 + 1);
  CHECK(tb.slot_of(23) == 0);
  CHECK(tb.slot_of(24) == 1);
  CHECK_THROWS_AS(tb.slot_of(28), ValidationError);
}

TEST_CASE("layout skips inactive modalities") {
  DatasetSpec ds = two_modalities();
  ds.modalities[0].temporal_bins = 0;
  const auto layout = TokenLayout::build(ds, Multispectral::kJointToken);
  REQUIRE(layout.slots.size() == 1);
  CHECK(layout.slots[0].modality == 1);
  CHECK(layout.slots[0].offset == 0);
}

TEST_CASE("TreeSat layout has 441 tokens and masks 331") {
  const RunSpec run = load_preset("treesatai_ts");
  const auto layout = TokenLayout::build(run.dataset, run.fusion.multispectral);
  CHECK(layout.total == 441);
  Rng s(1), a(2);
  CHECK(sample_mask(layout, run.fusion, s, a).masked_count == 331);
}

TEST_CASE("zero probabilities give an empty structured mask; ones mask everything") {
  const auto layout = TokenLayout::build(two_modalities(), Multispectral::kTokenBased);
  Rng rng(3);
  CHECK(count(structured_mask(layout, {0.0, 0.0, 0.0}, rng)) == 0);
  CHECK(count(structured_mask(layout, {1.0, 0.0, 0.0}, rng)) == layout.total);
  CHECK(count(structured_mask(layout, {0.0, 1.0, 0.0}, rng)) == layout.total);
  CHECK(count(structured_mask(layout, {0.0, 0.0, 1.0}, rng)) == layout.total);
  CHECK_THROWS_AS(structured_mask(layout, {1.5, 0.0, 0.0}, rng), ValidationError);
  CHECK_THROWS_AS(structured_mask(layout, {0.0, -0.1, 0.0}, rng), ValidationError);
}

TEST_CASE("structured mask is constant over streams and over bins of a masked position") {
  const auto layout = TokenLayout::build(two_modalities(), Multispectral::kTokenBased);
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = structured_mask(layout, {0.0, 0.5, 0.0}, rng);
    const auto& slot = layout.slots[0];
    for (std::size_t p = 0; p < slot.positions; ++p) {
      const auto ref = m[slot.index(0, p, 0)];
      for (std::size_t d = 0; d < slot.bins; ++d)
        for (std::size_t s = 0; s < slot.streams; ++s) CHECK(m[slot.index(d, p, s)] == ref);
    }
  }
}

TEST_CASE("Monte-Carlo marginals match the independent-union oracle") {
  const auto layout = TokenLayout::build(two_modalities(), Multispectral::kJointToken);
  const StructuredProbs probs{0.25, 0.25, 0.25};
  const double p_one = 1.0 - std::pow(0.75, 3);
  // Two tokens of slot 0 differing in both bin and position share only the
  // modality draw.
  const double p_neither = 0.75 * std::pow(0.75, 2) * std::pow(0.75, 2);
  const std::size_t u = layout.slots[0].index(0, 0, 0), v = layout.slots[0].index(2, 3, 0);
  const int n = 40000;
  Rng rng(5);
  double hits = 0.0, both_clear = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto m = structured_mask(layout, probs, rng);
    hits += m[u];
    both_clear += (!m[u] && !m[v]);
  }
  auto z = [n](double observed, double p) { return std::abs(observed / n - p) / std::sqrt(p * (1 - p) / n); };
  CHECK(z(hits, p_one) < 4.5);
  CHECK(z(both_clear, p_neither) < 4.5);
}

TEST_CASE("adjust_to_ratio reaches exactly nint(ratio * N), only flipping in one direction") {
  Rng rng(6);
  std::vector<std::uint8_t> base(40, 0);
  for (std::size_t i = 0; i < 10; ++i) base[i * 4] = 1;  // 10 of 40 masked

  const auto up = adjust_to_ratio(base, 0.75, rng);
  CHECK(up.masked_count == 30);
  CHECK(count(up.masked) == 30);
  CHECK(up.structured == base);
  for (std::size_t i = 0; i < 40; ++i)
    if (base[i]) CHECK(up.masked[i] == 1);

  const auto down = adjust_to_ratio(base, 0.1, rng);
  CHECK(count(down.masked) == 4);
  for (std::size_t i = 0; i < 40; ++i)
    if (!base[i]) CHECK(down.masked[i] == 0);

  const auto same = adjust_to_ratio(base, 0.25, rng);
  CHECK(same.masked == base);
}

TEST_CASE("adjust_to_ratio rounds to nearest") {
  Rng rng(7);
  CHECK(adjust_to_ratio(std::vector<std::uint8_t>(7, 0), 0.5, rng).masked_count == 4);   // 3.5
  CHECK(adjust_to_ratio(std::vector<std::uint8_t>(9, 0), 0.75, rng).masked_count == 7);  // 6.75
}

TEST_CASE("degenerate masks are rejected") {
  Rng rng(8);
  CHECK_THROWS_AS(adjust_to_ratio({}, 0.5, rng), ValidationError);
  CHECK_THROWS_AS(adjust_to_ratio(std::vector<std::uint8_t>(4, 0), 0.1, rng), ValidationError);   // 0 masked
  CHECK_THROWS_AS(adjust_to_ratio(std::vector<std::uint8_t>(4, 0), 0.9, rng), ValidationError);   // all masked
  CHECK_THROWS_AS(adjust_to_ratio(std::vector<std::uint8_t>(4, 0), 1.0, rng), ValidationError);
}

TEST_CASE("sample_mask is a pure function of its two streams") {
  const DatasetSpec ds = two_modalities();
  const auto layout = TokenLayout::build(ds, Multispectral::kTokenBased);
  FusionConfig fusion;
  Rng s1(RngKey{1, 2, 3, Purpose::kMaskStructured, 0}), a1(RngKey{1, 2, 3, Purpose::kMaskAdjust, 0});
  Rng s2(RngKey{1, 2, 3, Purpose::kMaskStructured, 0}), a2(RngKey{1, 2, 3, Purpose::kMaskAdjust, 0});
  const auto p1 = sample_mask(layout, fusion, s1, a1), p2 = sample_mask(layout, fusion, s2, a2);
  CHECK(p1.masked == p2.masked);
  CHECK(p1.structured == p2.structured);
}

TEST_CASE("audit rows cover both stages and write as CSV") {
  FusionConfig fusion;
  const auto rows = audit_masks(two_modalities(), fusion, 9, 2000);
  bool saw_final_overall = false;
  for (const auto& r : rows) {
    CHECK(r.masked_fraction >= 0.0);
    CHECK(r.masked_fraction <= 1.0);
    if (r.stage == "final" && r.axis == "overall") {
      saw_final_overall = true;
      CHECK(r.masked_fraction == doctest::Approx(12.0 / 16.0).epsilon(1e-12));
    }
    if (r.stage == "structured" && r.axis == "modality") {
      CHECK(std::abs(r.masked_fraction - (1.0 - std::pow(0.75, 3))) < 0.03);
    }
  }
  CHECK(saw_final_overall);
  std::ostringstream os;
  write_audit_csv(os, rows);
  const std::string csv = os.str();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(rows.size() + 1));
}
