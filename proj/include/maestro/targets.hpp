#pragma once

#include <cstddef>
#include <vector>

#include "maestro/autodiff.hpp"
#include "maestro/masking.hpp"
#include "maestro/spec.hpp"
#include "maestro/tokenizer.hpp"

namespace maestro {

inline constexpr double kTargetEps = 1e-6;

struct UnitStats {
  double mean = 0.0;
  double std = 1.0;  // population
};

// Same layout as the source PatchGrid. stats has one entry per
// (position, bin, unit): one unit for patch mode, one per band group for
// patch-group mode, none for mode none.
struct NormalizedTargets {
  TensorF values;
  std::vector<UnitStats> stats;
  std::size_t units_per_patch = 0;
};

// x -> (x - mean) / max(std, eps) over each normalization unit.
NormalizedTargets normalize_targets(const PatchGrid& grid, const std::vector<std::vector<std::size_t>>& band_groups,
                                    TargetNorm mode, double eps = kTargetEps);

// Normalization units carried by one reconstructed row. A joint-token row
// spans every band group; a token-based row spans one.
double row_units(TargetNorm mode, Multispectral flavor, std::size_t groups);

// Per-row loss weights, already divided by the total unit count.
// weights[slot][stream][row], rows in (bin, position) order.
struct LossWeights {
  std::vector<std::vector<std::vector<double>>> weights;
  double denominator = 0.0;
};

// With masked_only, only masked tokens contribute to numerator and
// denominator; otherwise every token does.
LossWeights loss_weights(const DatasetSpec& ds, const TokenLayout& layout, const MaskPlan* plan, TargetNorm mode,
                         Multispectral flavor, bool masked_only);

// Sum over rows of weight * L1 norm of (recon - target); plain arithmetic.
double reconstruction_loss(const std::vector<std::vector<nn::Matrix<double>>>& targets,
                           const std::vector<std::vector<nn::Matrix<double>>>& recon, const LossWeights& weights);

// Same quantity on the tape.
template <typename T>
nn::Var reconstruction_loss(nn::Graph<T>& g, const std::vector<std::vector<nn::Matrix<T>>>& targets,
                            const std::vector<std::vector<nn::Var>>& recon, const LossWeights& weights);

}  // namespace maestro
