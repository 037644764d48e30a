#include "maestro/masking.hpp"

#include <algorithm>
#include <iomanip>

#include "maestro/errors.hpp"

namespace maestro {

TokenLayout TokenLayout::build(const DatasetSpec& ds, Multispectral flavor) {
  TokenLayout layout;
  for (std::size_t i : ds.active_modalities()) {
    const ModalitySpec& m = ds.modalities[i];
    ModalitySlot slot;
    slot.modality = i;
    slot.positions = m.num_positions();
    slot.bins = m.temporal_bins;
    slot.streams = flavor == Multispectral::kTokenBased ? m.num_groups() : 1;
    slot.offset = layout.total;
    layout.total += slot.count();
    layout.slots.push_back(slot);
  }
  return layout;
}

std::size_t TokenLayout::slot_of(std::size_t token) const {
  if (token >= total) throw ValidationError("token index outside layout");
  for (std::size_t s = slots.size(); s-- > 0;) {
    if (token >= slots[s].offset) return s;
  }
  throw ValidationError("token index outside layout");
}

std::vector<std::uint8_t> structured_mask(const TokenLayout& layout, const StructuredProbs& probs, Rng& rng) {
  for (double p : {probs.modality, probs.spatial, probs.temporal}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("structured masking probability outside [0, 1]");
  }
  std::vector<std::uint8_t> mask(layout.total, 0);
  for (const auto& slot : layout.slots) {
    const bool whole = rng.bernoulli(probs.modality);
    std::vector<std::uint8_t> pos(slot.positions), bin(slot.bins);
    for (auto& v : pos) v = rng.bernoulli(probs.spatial);
    for (auto& v : bin) v = rng.bernoulli(probs.temporal);
    for (std::size_t d = 0; d < slot.bins; ++d)
      for (std::size_t p = 0; p < slot.positions; ++p)
        for (std::size_t s = 0; s < slot.streams; ++s) mask[slot.index(d, p, s)] = whole || pos[p] || bin[d];
  }
  return mask;
}

MaskPlan adjust_to_ratio(std::vector<std::uint8_t> mask, double ratio, Rng& rng) {
  const std::size_t n = mask.size();
  if (n == 0) throw ValidationError("degenerate masking: no tokens");
  const std::size_t target = nint(ratio * static_cast<double>(n));
  if (target == 0 || target >= n) {
    throw ValidationError("degenerate masking: ratio " + std::to_string(ratio) + " over " + std::to_string(n) +
                          " tokens leaves " + (target == 0 ? "nothing to reconstruct" : "nothing visible"));
  }
  MaskPlan plan;
  plan.structured = mask;
  plan.total = n;
  std::size_t masked = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  if (masked != target) {
    const std::uint8_t from = masked < target ? 0 : 1;
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i] == from) candidates.push_back(i);
    rng.shuffle(std::span<std::size_t>(candidates));
    const std::size_t flips = masked < target ? target - masked : masked - target;
    for (std::size_t k = 0; k < flips; ++k) mask[candidates[k]] = 1 - from;
  }
  plan.masked = std::move(mask);
  plan.masked_count = target;
  return plan;
}

MaskPlan sample_mask(const TokenLayout& layout, const FusionConfig& fusion, Rng& structured_rng, Rng& adjust_rng) {
  return adjust_to_ratio(structured_mask(layout, fusion.structured_probs, structured_rng), fusion.mask_ratio,
                         adjust_rng);
}

std::vector<MaskAuditRow> audit_masks(const DatasetSpec& ds, const FusionConfig& fusion, std::uint64_t seed,
                                      std::size_t plans) {
  const TokenLayout layout = TokenLayout::build(ds, fusion.multispectral);
  std::vector<double> structured(layout.total, 0.0), final_(layout.total, 0.0);
  for (std::size_t k = 0; k < plans; ++k) {
    Rng srng(RngKey{seed, 0, k, Purpose::kMaskStructured, 0});
    Rng arng(RngKey{seed, 0, k, Purpose::kMaskAdjust, 0});
    const MaskPlan plan = sample_mask(layout, fusion, srng, arng);
    for (std::size_t i = 0; i < layout.total; ++i) {
      structured[i] += plan.structured[i];
      final_[i] += plan.masked[i];
    }
  }
  std::vector<MaskAuditRow> rows;
  const double scale = 1.0 / static_cast<double>(plans);
  for (const auto& [stage, counts] : {std::pair{"structured", &structured}, std::pair{"final", &final_}}) {
    double all = 0.0;
    for (const auto& slot : layout.slots) {
      const std::string& name = ds.modalities[slot.modality].name;
      double total = 0.0;
      std::vector<double> pos(slot.positions, 0.0), bin(slot.bins, 0.0);
      for (std::size_t d = 0; d < slot.bins; ++d)
        for (std::size_t p = 0; p < slot.positions; ++p)
          for (std::size_t s = 0; s < slot.streams; ++s) {
            const double v = (*counts)[slot.index(d, p, s)] * scale;
            total += v;
            pos[p] += v / static_cast<double>(slot.bins * slot.streams);
            bin[d] += v / static_cast<double>(slot.positions * slot.streams);
          }
      all += total;
      rows.push_back({stage, "modality", name, 0, total / static_cast<double>(slot.count())});
      for (std::size_t p = 0; p < slot.positions; ++p) rows.push_back({stage, "position", name, p, pos[p]});
      for (std::size_t d = 0; d < slot.bins; ++d) rows.push_back({stage, "bin", name, d, bin[d]});
    }
    rows.push_back({stage, "overall", "", 0, all / static_cast<double>(layout.total)});
  }
  return rows;
}

void write_audit_csv(std::ostream& os, const std::vector<MaskAuditRow>& rows) {
  os << "stage,axis,modality,index,masked_fraction\n";
  os << std::setprecision(6) << std::fixed;
  for (const auto& r : rows) {
    os << r.stage << ',' << r.axis << ',' << r.modality << ',' << r.index << ',' << r.masked_fraction << '\n';
  }
}

}  // namespace maestro
