#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "maestro/errors.hpp"
#include "maestro/heads.hpp"

using namespace maestro;

namespace {

nn::Matrix<double> random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  nn::Matrix<double> m(r, c);
  for (auto& v : m.data) v = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("overlap weights: 10 cells onto 8") {
  const auto w = overlap_weights_1d(10, 8);
  REQUIRE(w.size() == 80);
  // Target cell 0 spans source [0, 1.25): all of cell 0 and a quarter of cell 1.
  CHECK(w[0] == doctest::Approx(0.8));
  CHECK(w[1] == doctest::Approx(0.2));
  CHECK(w[2] == 0.0);
  // Target cell 3 spans [3.75, 5): a quarter of cell 3 and all of cell 4.
  CHECK(w[3 * 10 + 3] == doctest::Approx(0.2));
  CHECK(w[3 * 10 + 4] == doctest::Approx(0.8));
  for (std::size_t i = 0; i < 8; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 10; ++j) sum += w[i * 10 + j];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("overlap weights: integer factors replicate or average") {
  const auto up = overlap_weights_1d(2, 4);
  CHECK(up == std::vector<double>{1, 0, 1, 0, 0, 1, 0, 1});
  const auto down = overlap_weights_1d(4, 2);
  CHECK(down == std::vector<double>{0.5, 0.5, 0, 0, 0, 0, 0.5, 0.5});
  CHECK(overlap_weights_1d(3, 3) == std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK_THROWS_AS(overlap_weights_1d(0, 3), ValidationError);
}

TEST_CASE("2-D alignment is the outer product of the 1-D weights") {
  const auto w = overlap_weights_1d(3, 2);
  const auto a = alignment_matrix<double>(3, 2);
  CHECK(a.rows == 4);
  CHECK(a.cols == 9);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t sr = 0; sr < 3; ++sr)
        for (std::size_t sc = 0; sc < 3; ++sc)
          CHECK(a(r * 2 + c, sr * 3 + sc) == doctest::Approx(w[r * 3 + sr] * w[c * 3 + sc]).epsilon(1e-15));
}

TEST_CASE("classification logits are invariant to token order and slot order") {
  nn::ParamStore<double> ps;
  Rng rng(1);
  const auto ids = add_head(ps, 8, 5, rng);
  const auto a = random_matrix(6, 8, rng), b = random_matrix(3, 8, rng);
  nn::Matrix<double> a_rev(6, 8);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 8; ++c) a_rev(r, c) = a(5 - r, c);

  nn::Graph<double> g(&ps);
  const auto x = g.value(classification_logits(g, {g.constant(a), g.constant(b)}, ids));
  const auto y = g.value(classification_logits(g, {g.constant(b), g.constant(a_rev)}, ids));
  CHECK(x.rows == 1);
  CHECK(x.cols == 5);
  for (std::size_t k = 0; k < 5; ++k) CHECK(x(0, k) == doctest::Approx(y(0, k)).epsilon(1e-12));
}

TEST_CASE("segmentation logits: one row per reference cell; cells see only aligned tokens") {
  ModalitySpec fine;
  fine.name = "fine";
  fine.image_size = 4;
  fine.patch_size = 1;
  fine.temporal_bins = 1;
  fine.channels = 1;
  fine.band_groups = {{0}};
  ModalitySpec coarse = fine;
  coarse.name = "coarse";
  coarse.patch_size = 2;
  coarse.temporal_bins = 2;
  DatasetSpec ds;
  ds.modalities = {fine, coarse};
  const auto layout = TokenLayout::build(ds, Multispectral::kJointToken);

  nn::ParamStore<double> ps;
  Rng rng(2);
  const auto ids = add_head(ps, 8, 3, rng);
  const auto t0 = random_matrix(16, 8, rng), t1 = random_matrix(8, 8, rng);
  nn::Graph<double> g(&ps);
  const auto base = g.value(segmentation_logits(g, {g.constant(t0), g.constant(t1)}, layout, 4, ids));
  CHECK(base.rows == 16);
  CHECK(base.cols == 3);

  // Changing fine token 0 only affects reference cell 0.
  auto t0b = t0;
  for (std::size_t c = 0; c < 8; ++c) t0b(0, c) += 1.0 + static_cast<double>(c);
  const auto moved = g.value(segmentation_logits(g, {g.constant(t0b), g.constant(t1)}, layout, 4, ids));
  for (std::size_t r = 0; r < 16; ++r) {
    double d = 0.0;
    for (std::size_t k = 0; k < 3; ++k) d = std::max(d, std::abs(moved(r, k) - base(r, k)));
    if (r == 0) {
      CHECK(d > 1e-9);
    } else {
      CHECK(d == 0.0);
    }
  }
}

TEST_CASE("nearest upsampling of logits") {
  nn::Graph<double> g;
  nn::Matrix<double> l(4, 1);
  l.data = {1, 2, 3, 4};
  const auto up = g.value(upsample_logits(g, g.constant(l), 2, 4));
  CHECK(up.data == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  const auto same = upsample_logits(g, g.constant(l), 2, 2);
  CHECK(g.value(same).data == l.data);
}

TEST_CASE("classification metrics on a hand-worked example") {
  const std::vector<std::vector<std::uint8_t>> labels = {{1, 0, 0}, {0, 1, 1}, {1, 1, 0}};
  const std::vector<std::vector<double>> probs = {{0.9, 0.2, 0.6}, {0.1, 0.7, 0.3}, {0.4, 0.3, 0.5}};
  // Per-class F1: 2/3 (support 2), 2/3 (support 2), 0 (support 1).
  const auto m = classification_metrics(probs, labels, {});
  CHECK(m.weighted_f1 == doctest::Approx(100.0 * 8.0 / 15.0));
  CHECK(m.top1 == doctest::Approx(200.0 / 3.0));
  // Dropping class 2 also removes it from the argmax.
  const auto ig = classification_metrics(probs, labels, {2});
  CHECK(ig.weighted_f1 == doctest::Approx(200.0 / 3.0));
  CHECK(ig.top1 == 100.0);
}

TEST_CASE("classification metrics match an independent precision/recall oracle") {
  Rng rng(3);
  const std::size_t n = 200, k = 6;
  std::vector<std::vector<double>> probs(n, std::vector<double>(k));
  std::vector<std::vector<std::uint8_t>> labels(n, std::vector<std::uint8_t>(k));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      labels[i][c] = rng.bernoulli(0.3);
      probs[i][c] = std::clamp(0.5 + (labels[i][c] ? 0.2 : -0.2) + 0.3 * rng.normal(), 0.0, 1.0);
    }
  double weighted = 0.0, support_total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = 0, pp = 0, support = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool pred = probs[i][c] >= 0.5;
      pp += pred;
      support += labels[i][c];
      tp += pred && labels[i][c];
    }
    const double precision = pp > 0 ? tp / pp : 0.0, recall = support > 0 ? tp / support : 0.0;
    const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    weighted += support * f1;
    support_total += support;
  }
  CHECK(classification_metrics(probs, labels, {}).weighted_f1 ==
        doctest::Approx(100.0 * weighted / support_total).epsilon(1e-12));
}

TEST_CASE("classification metrics reject ragged input") {
  CHECK_THROWS_AS(classification_metrics({{0.5}}, {}, {}), ValidationError);
  CHECK_THROWS_AS(classification_metrics({{0.5, 0.1}}, {{1}}, {}), ValidationError);
  CHECK(classification_metrics({}, {}, {}).top1 == 0.0);
}

TEST_CASE("segmentation metrics on a hand-worked example") {
  // Pixel 4 is labelled with the ignored class and pixel 5 is unlabelled.
  const std::vector<std::int32_t> labels = {0, 0, 1, 1, 2, -1};
  const std::vector<std::int32_t> predicted = {0, 1, 1, 1, 0, 0};
  const auto m = segmentation_metrics(predicted, labels, 3, {2});
  CHECK(m.miou == doctest::Approx(100.0 * (0.5 + 2.0 / 3.0) / 2.0));
  CHECK(m.pixel_accuracy == 75.0);
  CHECK_THROWS_AS(segmentation_metrics({0}, {0, 1}, 3, {}), ValidationError);
  CHECK_THROWS_AS(segmentation_metrics({7}, {0}, 3, {}), ValidationError);
}

TEST_CASE("perfect segmentation scores 100") {
  const std::vector<std::int32_t> labels = {0, 1, 2, 2, 1};
  const auto m = segmentation_metrics(labels, labels, 4, {});
  CHECK(m.miou == 100.0);
  CHECK(m.pixel_accuracy == 100.0);
}
