#include "maestro/targets.hpp"

#include <algorithm>
#include <cmath>

#include "maestro/errors.hpp"

namespace maestro {

namespace {

UnitStats standardize(float* patch, const std::vector<std::size_t>& cols, double eps) {
  double mean = 0.0;
  for (std::size_t c : cols) mean += patch[c];
  mean /= static_cast<double>(cols.size());
  double var = 0.0;
  for (std::size_t c : cols) var += (patch[c] - mean) * (patch[c] - mean);
  var /= static_cast<double>(cols.size());
  const double sd = std::sqrt(var);
  const double denom = std::max(sd, eps);
  for (std::size_t c : cols) patch[c] = static_cast<float>((patch[c] - mean) / denom);
  return {mean, sd};
}

}  // namespace

NormalizedTargets normalize_targets(const PatchGrid& grid, const std::vector<std::vector<std::size_t>>& band_groups,
                                    TargetNorm mode, double eps) {
  if (!(eps > 0.0)) throw ValidationError("normalization epsilon must be positive");
  NormalizedTargets out;
  out.values = grid.patches;
  if (mode == TargetNorm::kNone) return out;

  const std::size_t pp = grid.patch_size * grid.patch_size;
  std::vector<std::vector<std::size_t>> units;
  if (mode == TargetNorm::kPatch) {
    std::vector<std::size_t> all(grid.patch_dim());
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
    units.push_back(std::move(all));
  } else {
    for (const auto& group : band_groups) {
      if (group.empty()) throw ValidationError("empty band group");
      std::vector<std::size_t> cols;
      for (std::size_t c : group)
        for (std::size_t k = 0; k < pp; ++k) cols.push_back(c * pp + k);
      units.push_back(std::move(cols));
    }
  }
  out.units_per_patch = units.size();
  out.stats.reserve(grid.positions() * grid.bins() * units.size());
  for (std::size_t p = 0; p < grid.positions(); ++p)
    for (std::size_t d = 0; d < grid.bins(); ++d) {
      float* patch = &out.values.at({p, d, 0});
      for (const auto& cols : units) out.stats.push_back(standardize(patch, cols, eps));
    }
  return out;
}

double row_units(TargetNorm mode, Multispectral flavor, std::size_t groups) {
  const double g = static_cast<double>(groups);
  const double per_patch = mode == TargetNorm::kPatchGroup ? g : 1.0;
  return flavor == Multispectral::kTokenBased ? per_patch / g : per_patch;
}

LossWeights loss_weights(const DatasetSpec& ds, const TokenLayout& layout, const MaskPlan* plan, TargetNorm mode,
                         Multispectral flavor, bool masked_only) {
  if (masked_only && plan == nullptr) throw ValidationError("masked-only loss requires a mask plan");
  LossWeights out;
  out.weights.resize(layout.slots.size());
  for (std::size_t s = 0; s < layout.slots.size(); ++s) {
    const ModalitySlot& slot = layout.slots[s];
    const double units = row_units(mode, flavor, ds.modalities[slot.modality].num_groups());
    out.weights[s].assign(slot.streams, std::vector<double>(slot.bins * slot.positions, 0.0));
    for (std::size_t d = 0; d < slot.bins; ++d)
      for (std::size_t p = 0; p < slot.positions; ++p)
        for (std::size_t k = 0; k < slot.streams; ++k) {
          const bool counted = !masked_only || plan->masked[slot.index(d, p, k)];
          if (!counted) continue;
          out.weights[s][k][d * slot.positions + p] = 1.0;
          out.denominator += units;
        }
  }
  if (out.denominator > 0.0) {
    for (auto& slot : out.weights)
      for (auto& stream : slot)
        for (auto& w : stream) w /= out.denominator;
  }
  return out;
}

double reconstruction_loss(const std::vector<std::vector<nn::Matrix<double>>>& targets,
                           const std::vector<std::vector<nn::Matrix<double>>>& recon, const LossWeights& weights) {
  double total = 0.0;
  for (std::size_t s = 0; s < targets.size(); ++s)
    for (std::size_t k = 0; k < targets[s].size(); ++k) {
      const auto& t = targets[s][k];
      const auto& r = recon.at(s).at(k);
      if (t.rows != r.rows || t.cols != r.cols) throw ValidationError("reconstruction shape does not match target");
      for (std::size_t row = 0; row < t.rows; ++row) {
        const double w = weights.weights[s][k][row];
        if (w == 0.0) continue;
        double l1 = 0.0;
        for (std::size_t c = 0; c < t.cols; ++c) l1 += std::abs(r(row, c) - t(row, c));
        total += w * l1;
      }
    }
  return total;
}

template <typename T>
nn::Var reconstruction_loss(nn::Graph<T>& g, const std::vector<std::vector<nn::Matrix<T>>>& targets,
                            const std::vector<std::vector<nn::Var>>& recon, const LossWeights& weights) {
  nn::Var total;
  for (std::size_t s = 0; s < targets.size(); ++s)
    for (std::size_t k = 0; k < targets[s].size(); ++k) {
      const auto& w = weights.weights[s][k];
      std::vector<T> row_weight(w.begin(), w.end());
      nn::Var term = g.weighted_l1(recon[s][k], targets[s][k], row_weight);
      total = total.valid() ? g.add(total, term) : term;
    }
  if (!total.valid()) throw ValidationError("reconstruction loss over zero streams");
  return total;
}

template nn::Var reconstruction_loss<float>(nn::Graph<float>&, const std::vector<std::vector<nn::Matrix<float>>>&,
                                            const std::vector<std::vector<nn::Var>>&, const LossWeights&);
template nn::Var reconstruction_loss<double>(nn::Graph<double>&, const std::vector<std::vector<nn::Matrix<double>>>&,
                                             const std::vector<std::vector<nn::Var>>&, const LossWeights&);

}  // namespace maestro
