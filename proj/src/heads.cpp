#include "maestro/heads.hpp"

#include <algorithm>
#include <cmath>

#include "maestro/errors.hpp"

namespace maestro {

template <typename T>
HeadIds add_head(nn::ParamStore<T>& ps, std::size_t width, std::size_t classes, Rng& rng) {
  HeadIds ids;
  ids.pool = nn::add_attentive_pool(ps, "head.pool", width, rng);
  ids.proj = nn::add_linear(ps, "head.proj", width, classes, rng);
  return ids;
}

template <typename T>
nn::Var classification_logits(nn::Graph<T>& g, const std::vector<nn::Var>& slot_tokens, const HeadIds& ids) {
  if (slot_tokens.empty()) throw ValidationError("classification head needs at least one token");
  nn::Var all = slot_tokens.size() == 1 ? slot_tokens[0] : g.concat_rows(slot_tokens);
  return nn::linear(g, nn::attentive_pool(g, all, ids.pool, g.rows(all)), ids.proj);
}

std::vector<double> overlap_weights_1d(std::size_t src, std::size_t dst) {
  if (src == 0 || dst == 0) throw ValidationError("alignment of an empty grid");
  // Cell i of dst covers [i * src, (i + 1) * src) in units of 1 / (src * dst).
  std::vector<double> w(dst * src, 0.0);
  for (std::size_t i = 0; i < dst; ++i) {
    const std::size_t lo = i * src, hi = (i + 1) * src;
    for (std::size_t j = 0; j < src; ++j) {
      const std::size_t jlo = j * dst, jhi = (j + 1) * dst;
      const std::size_t a = std::max(lo, jlo), b = std::min(hi, jhi);
      if (b > a) w[i * src + j] = static_cast<double>(b - a) / static_cast<double>(src);
    }
  }
  return w;
}

template <typename T>
nn::Matrix<T> alignment_matrix(std::size_t src, std::size_t dst) {
  const auto w = overlap_weights_1d(src, dst);
  nn::Matrix<T> a(dst * dst, src * src);
  for (std::size_t r = 0; r < dst; ++r)
    for (std::size_t c = 0; c < dst; ++c)
      for (std::size_t sr = 0; sr < src; ++sr) {
        const double wr = w[r * src + sr];
        if (wr == 0.0) continue;
        for (std::size_t sc = 0; sc < src; ++sc) {
          a(r * dst + c, sr * src + sc) = static_cast<T>(wr * w[c * src + sc]);
        }
      }
  return a;
}

template <typename T>
nn::Var segmentation_logits(nn::Graph<T>& g, const std::vector<nn::Var>& slot_tokens, const TokenLayout& layout,
                            std::size_t ref_side, const HeadIds& ids) {
  std::vector<nn::Var> aligned;
  for (std::size_t s = 0; s < layout.slots.size(); ++s) {
    const ModalitySlot& slot = layout.slots[s];
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(slot.positions))));
    const nn::Matrix<T> align = alignment_matrix<T>(side, ref_side);
    for (std::size_t d = 0; d < slot.bins; ++d)
      for (std::size_t k = 0; k < slot.streams; ++k) {
        std::vector<std::uint32_t> rows(slot.positions);
        for (std::size_t p = 0; p < slot.positions; ++p) {
          rows[p] = static_cast<std::uint32_t>(slot.index(d, p, k) - slot.offset);
        }
        nn::Var slab = g.gather_rows(slot_tokens[s], std::move(rows));
        aligned.push_back(side == ref_side ? slab : g.matmul(g.constant(align), slab));
      }
  }
  const std::size_t cells = ref_side * ref_side, sets = aligned.size();
  std::vector<std::pair<std::uint32_t, std::uint32_t>> picks;
  picks.reserve(cells * sets);
  for (std::size_t r = 0; r < cells; ++r)
    for (std::size_t j = 0; j < sets; ++j) picks.emplace_back(static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(r));
  nn::Var grouped = g.pick_rows(aligned, std::move(picks));
  return nn::linear(g, nn::attentive_pool(g, grouped, ids.pool, sets), ids.proj);
}

template <typename T>
nn::Var upsample_logits(nn::Graph<T>& g, nn::Var logits, std::size_t ref_side, std::size_t label_side) {
  if (label_side == ref_side) return logits;
  std::vector<std::uint32_t> rows(label_side * label_side);
  for (std::size_t y = 0; y < label_side; ++y)
    for (std::size_t x = 0; x < label_side; ++x) {
      const std::size_t ry = y * ref_side / label_side, rx = x * ref_side / label_side;
      rows[y * label_side + x] = static_cast<std::uint32_t>(ry * ref_side + rx);
    }
  return g.gather_rows(logits, std::move(rows));
}

ClassificationMetrics classification_metrics(const std::vector<std::vector<double>>& probs,
                                             const std::vector<std::vector<std::uint8_t>>& labels,
                                             const std::vector<std::size_t>& ignored, double threshold) {
  if (probs.size() != labels.size()) throw ValidationError("metrics: prediction and label counts differ");
  ClassificationMetrics out;
  if (probs.empty()) return out;
  const std::size_t k = probs[0].size();
  std::vector<bool> skip(k, false);
  for (std::size_t c : ignored)
    if (c < k) skip[c] = true;
  std::vector<double> tp(k, 0.0), fp(k, 0.0), fn(k, 0.0);
  double correct = 0.0, ranked = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i].size() != k || labels[i].size() != k) throw ValidationError("metrics: class count mismatch");
    std::size_t best = k;
    for (std::size_t c = 0; c < k; ++c) {
      if (skip[c]) continue;
      const bool pred = probs[i][c] >= threshold, truth = labels[i][c] != 0;
      tp[c] += pred && truth;
      fp[c] += pred && !truth;
      fn[c] += !pred && truth;
      if (best == k || probs[i][c] > probs[i][best]) best = c;
    }
    bool any_truth = false;
    for (std::size_t c = 0; c < k; ++c) any_truth |= !skip[c] && labels[i][c];
    if (any_truth) {
      ranked += 1.0;
      correct += best < k && labels[i][best];
    }
  }
  double support_total = 0.0, f1_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (skip[c]) continue;
    const double support = tp[c] + fn[c];
    if (support == 0.0) continue;
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    f1_sum += support * (denom > 0.0 ? 2.0 * tp[c] / denom : 0.0);
    support_total += support;
  }
  out.weighted_f1 = support_total > 0.0 ? 100.0 * f1_sum / support_total : 0.0;
  out.top1 = ranked > 0.0 ? 100.0 * correct / ranked : 0.0;
  return out;
}

SegmentationMetrics segmentation_metrics(const std::vector<std::int32_t>& predicted,
                                         const std::vector<std::int32_t>& labels, std::size_t classes,
                                         const std::vector<std::size_t>& ignored) {
  if (predicted.size() != labels.size()) throw ValidationError("metrics: prediction and label sizes differ");
  std::vector<bool> skip(classes, false);
  for (std::size_t c : ignored)
    if (c < classes) skip[c] = true;
  std::vector<double> inter(classes, 0.0), pred_count(classes, 0.0), label_count(classes, 0.0);
  double correct = 0.0, counted = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::int32_t l = labels[i], p = predicted[i];
    if (l < 0 || static_cast<std::size_t>(l) >= classes || skip[static_cast<std::size_t>(l)]) continue;
    if (p < 0 || static_cast<std::size_t>(p) >= classes) throw ValidationError("metrics: prediction out of range");
    counted += 1.0;
    label_count[static_cast<std::size_t>(l)] += 1.0;
    pred_count[static_cast<std::size_t>(p)] += 1.0;
    if (l == p) {
      inter[static_cast<std::size_t>(l)] += 1.0;
      correct += 1.0;
    }
  }
  SegmentationMetrics out;
  double sum = 0.0, present = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (skip[c]) continue;
    const double uni = label_count[c] + pred_count[c] - inter[c];
    if (uni == 0.0) continue;
    sum += inter[c] / uni;
    present += 1.0;
  }
  out.miou = present > 0.0 ? 100.0 * sum / present : 0.0;
  out.pixel_accuracy = counted > 0.0 ? 100.0 * correct / counted : 0.0;
  return out;
}

#define MAESTRO_HEADS_INSTANTIATE(T)                                                                            \
  template HeadIds add_head<T>(nn::ParamStore<T>&, std::size_t, std::size_t, Rng&);                            \
  template nn::Var classification_logits<T>(nn::Graph<T>&, const std::vector<nn::Var>&, const HeadIds&);        \
  template nn::Matrix<T> alignment_matrix<T>(std::size_t, std::size_t);                                        \
  template nn::Var segmentation_logits<T>(nn::Graph<T>&, const std::vector<nn::Var>&, const TokenLayout&,      \
                                          std::size_t, const HeadIds&);                                         \
  template nn::Var upsample_logits<T>(nn::Graph<T>&, nn::Var, std::size_t, std::size_t);

MAESTRO_HEADS_INSTANTIATE(float)
MAESTRO_HEADS_INSTANTIATE(double)

}  // namespace maestro
