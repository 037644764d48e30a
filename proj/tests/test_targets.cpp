#include <cmath>

#include "doctest.h"
#include "maestro/errors.hpp"
#include "maestro/targets.hpp"

using namespace maestro;

namespace {

PatchGrid grid_of(std::size_t positions, std::size_t bins, std::size_t patch, std::size_t channels,
                  std::vector<float> values) {
  PatchGrid g;
  g.patches = TensorF({positions, bins, patch * patch * channels}, std::move(values));
  g.patch_size = patch;
  g.channels = channels;
  return g;
}

ModalitySpec pixel_modality(std::size_t side, std::size_t bins, std::vector<std::vector<std::size_t>> groups) {
  ModalitySpec m;
  m.name = "m";
  m.image_size = side;
  m.patch_size = 1;
  m.temporal_bins = bins;
  std::size_t c = 0;
  for (const auto& g : groups) c += g.size();
  m.channels = c;
  m.band_groups = std::move(groups);
  return m;
}

}  // namespace

TEST_CASE("two-value patch standardizes to -1 and +1") {
  const auto out = normalize_targets(grid_of(1, 1, 1, 2, {1.0f, 3.0f}), {{0, 1}}, TargetNorm::kPatch);
  CHECK(out.values.storage() == std::vector<float>{-1.0f, 1.0f});
  REQUIRE(out.stats.size() == 1);
  CHECK(out.stats[0].mean == 2.0);
  CHECK(out.stats[0].std == 1.0);
  CHECK(out.units_per_patch == 1);
}

TEST_CASE("constant patch maps to zeros with its std recorded as zero") {
  const auto out = normalize_targets(grid_of(2, 1, 2, 1, std::vector<float>(8, 7.0f)), {{0}}, TargetNorm::kPatch);
  for (float v : out.values.storage()) CHECK(v == 0.0f);
  CHECK(out.stats[0].std == 0.0);
}

TEST_CASE("mode none is the identity with no statistics") {
  const auto g = grid_of(1, 2, 1, 3, {1, 2, 3, 4, 5, 6});
  const auto out = normalize_targets(g, {{0, 1, 2}}, TargetNorm::kNone);
  CHECK(out.values == g.patches);
  CHECK(out.stats.empty());
}

TEST_CASE("patch-group normalizes each band group separately") {
  // One 1x1 patch with channels {0, 2} in group 0 and {1, 3} in group 1.
  const auto g = grid_of(1, 1, 1, 4, {0.0f, 10.0f, 2.0f, 30.0f});
  const auto out = normalize_targets(g, {{0, 2}, {1, 3}}, TargetNorm::kPatchGroup);
  CHECK(out.units_per_patch == 2);
  CHECK(out.values.storage() == std::vector<float>{-1.0f, -1.0f, 1.0f, 1.0f});
  CHECK(out.stats[0].mean == 1.0);
  CHECK(out.stats[1].mean == 20.0);
  CHECK(out.stats[1].std == 10.0);
}

TEST_CASE("patch-group with a single group equals patch mode") {
  Rng rng(1);
  std::vector<float> v(3 * 2 * 2 * 2 * 3);
  for (auto& x : v) x = static_cast<float>(5.0 + 3.0 * rng.normal());
  const auto g = grid_of(3, 2, 2, 3, v);
  CHECK(normalize_targets(g, {{0, 1, 2}}, TargetNorm::kPatchGroup).values ==
        normalize_targets(g, {{0, 1, 2}}, TargetNorm::kPatch).values);
}

TEST_CASE("normalized units have zero mean and unit population std") {
  Rng rng(2);
  std::vector<float> v(4 * 3 * 4 * 2);
  for (auto& x : v) x = static_cast<float>(rng.normal() * 4.0 - 1.0);
  const auto out = normalize_targets(grid_of(4, 3, 2, 2, v), {{0}, {1}}, TargetNorm::kPatchGroup);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t d = 0; d < 3; ++d)
      for (std::size_t grp = 0; grp < 2; ++grp) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t k = 0; k < 4; ++k) {
          const double x = out.values.at({p, d, grp * 4 + k});
          sum += x;
          sq += x * x;
        }
        CHECK(std::abs(sum / 4) < 1e-6);
        CHECK(sq / 4 == doctest::Approx(1.0).epsilon(1e-5));
      }
}

TEST_CASE("normalization rejects bad inputs") {
  const auto g = grid_of(1, 1, 1, 2, {1.0f, 2.0f});
  CHECK_THROWS_AS(normalize_targets(g, {{0, 1}}, TargetNorm::kPatch, 0.0), ValidationError);
  CHECK_THROWS_AS(normalize_targets(g, {{0, 1}, {}}, TargetNorm::kPatchGroup), ValidationError);
}

TEST_CASE("row units per mode and flavor") {
  CHECK(row_units(TargetNorm::kPatchGroup, Multispectral::kJointToken, 3) == 3.0);
  CHECK(row_units(TargetNorm::kPatchGroup, Multispectral::kTokenBased, 3) == 1.0);
  CHECK(row_units(TargetNorm::kPatch, Multispectral::kJointToken, 3) == 1.0);
  CHECK(row_units(TargetNorm::kPatch, Multispectral::kTokenBased, 4) == 0.25);
  CHECK(row_units(TargetNorm::kNone, Multispectral::kJointToken, 2) == 1.0);
}

TEST_CASE("loss examples: two masked rows, unit error each gives 1.0; one gives 0.5") {
  DatasetSpec ds;
  ds.modalities = {pixel_modality(2, 1, {{0}})};
  const auto layout = TokenLayout::build(ds, Multispectral::kJointToken);
  MaskPlan plan;
  plan.total = 4;
  plan.masked = {1, 0, 1, 0};
  plan.masked_count = 2;
  const auto w = loss_weights(ds, layout, &plan, TargetNorm::kPatch, Multispectral::kJointToken, true);
  CHECK(w.denominator == 2.0);
  CHECK(w.weights[0][0] == std::vector<double>{0.5, 0.0, 0.5, 0.0});

  nn::Matrix<double> target(4, 1), recon(4, 1);
  recon(0, 0) = 1.0;
  recon(2, 0) = -1.0;
  recon(1, 0) = 100.0;  // visible rows do not count
  CHECK(reconstruction_loss({{target}}, {{recon}}, w) == 1.0);
  recon(2, 0) = 0.0;
  CHECK(reconstruction_loss({{target}}, {{recon}}, w) == 0.5);

  const auto all = loss_weights(ds, layout, &plan, TargetNorm::kPatch, Multispectral::kJointToken, false);
  CHECK(all.denominator == 4.0);
  CHECK(reconstruction_loss({{target}}, {{recon}}, all) == doctest::Approx(101.0 / 4.0));
}

TEST_CASE("loss weights sum to the inverse units per row; token-based rows share the group count") {
  DatasetSpec ds;
  ds.modalities = {pixel_modality(2, 2, {{0}, {1, 2}})};
  for (auto flavor : {Multispectral::kJointToken, Multispectral::kTokenBased})
    for (auto mode : {TargetNorm::kNone, TargetNorm::kPatch, TargetNorm::kPatchGroup}) {
      const auto layout = TokenLayout::build(ds, flavor);
      const auto w = loss_weights(ds, layout, nullptr, mode, flavor, false);
      const double units = row_units(mode, flavor, 2);
      CHECK(w.denominator == doctest::Approx(static_cast<double>(layout.total) * units));
      double sum = 0.0;
      for (const auto& stream : w.weights[0])
        for (double x : stream) sum += x;
      CHECK(sum * units == doctest::Approx(1.0));
    }
  CHECK_THROWS_AS(loss_weights(ds, TokenLayout::build(ds, Multispectral::kJointToken), nullptr, TargetNorm::kPatch,
                               Multispectral::kJointToken, true),
                  ValidationError);
}

TEST_CASE("taped loss matches the plain loss and its gradient is weight * sign") {
  DatasetSpec ds;
  ds.modalities = {pixel_modality(2, 1, {{0}, {1}})};
  const auto layout = TokenLayout::build(ds, Multispectral::kTokenBased);
  MaskPlan plan;
  plan.total = layout.total;
  plan.masked = {1, 1, 0, 1, 0, 0, 1, 0};
  const auto w = loss_weights(ds, layout, &plan, TargetNorm::kPatchGroup, Multispectral::kTokenBased, true);

  Rng rng(3);
  std::vector<std::vector<nn::Matrix<double>>> targets(1), recon(1);
  nn::ParamStore<double> ps;
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < 2; ++k) {
    nn::Matrix<double> t(4, 1), r(4, 1);
    for (auto& x : t.data) x = rng.normal();
    for (auto& x : r.data) x = rng.normal();
    targets[0].push_back(t);
    recon[0].push_back(r);
    ids.push_back(ps.add("r" + std::to_string(k), r));
  }
  nn::Graph<double> g(&ps);
  std::vector<std::vector<nn::Var>> vars(1);
  for (auto id : ids) vars[0].push_back(g.param(id));
  const auto loss = reconstruction_loss(g, targets, vars, w);
  CHECK(g.value(loss)(0, 0) == doctest::Approx(reconstruction_loss(targets, recon, w)).epsilon(1e-14));
  g.backward(loss);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t row = 0; row < 4; ++row) {
      const double diff = recon[0][k](row, 0) - targets[0][k](row, 0);
      CHECK(g.grad(vars[0][k])[row] == doctest::Approx(w.weights[0][k][row] * (diff > 0 ? 1.0 : -1.0)));
    }
}

TEST_CASE("plain loss rejects shape mismatches") {
  LossWeights w;
  w.weights = {{{1.0, 1.0}}};
  CHECK_THROWS_AS(reconstruction_loss({{nn::Matrix<double>(2, 1)}}, {{nn::Matrix<double>(2, 2)}}, w),
                  ValidationError);
}
