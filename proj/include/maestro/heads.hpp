#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "maestro/layers.hpp"
#include "maestro/masking.hpp"
#include "maestro/spec.hpp"
#include "maestro/tensor.hpp"

namespace maestro {

struct HeadIds {
  nn::AttentivePoolIds pool;
  nn::LinearIds proj;
};

template <typename T>
HeadIds add_head(nn::ParamStore<T>& ps, std::size_t width, std::size_t classes, Rng& rng);

// Pools every token of every modality into one [1, classes] logit row.
template <typename T>
nn::Var classification_logits(nn::Graph<T>& g, const std::vector<nn::Var>& slot_tokens, const HeadIds& ids);

// Area-overlap resampling of a src x src token grid onto a dst x dst grid:
// [dst^2, src^2], rows sum to one. Integer upsampling replicates, integer
// downsampling averages blocks.
std::vector<double> overlap_weights_1d(std::size_t src, std::size_t dst);
template <typename T>
nn::Matrix<T> alignment_matrix(std::size_t src, std::size_t dst);

// Per reference position: pools all (modality, bin, stream) tokens aligned to
// that position and maps to class logits. Returns [ref^2, classes].
template <typename T>
nn::Var segmentation_logits(nn::Graph<T>& g, const std::vector<nn::Var>& slot_tokens, const TokenLayout& layout,
                            std::size_t ref_side, const HeadIds& ids);

// Nearest upsampling of [ref^2, K] logits to a label grid of label_side^2.
template <typename T>
nn::Var upsample_logits(nn::Graph<T>& g, nn::Var logits, std::size_t ref_side, std::size_t label_side);

// Metrics -------------------------------------------------------------------

struct ClassificationMetrics {
  double weighted_f1 = 0.0;  // percent
  double top1 = 0.0;         // percent, samples whose argmax class is one of their true labels
};

// probs: [n, K] sigmoid outputs; labels: multi-hot [n, K]. Classes listed in
// `ignored` are dropped from both averaging and argmax.
ClassificationMetrics classification_metrics(const std::vector<std::vector<double>>& probs,
                                             const std::vector<std::vector<std::uint8_t>>& labels,
                                             const std::vector<std::size_t>& ignored, double threshold = 0.5);

struct SegmentationMetrics {
  double miou = 0.0;            // percent, over classes with a non-empty union
  double pixel_accuracy = 0.0;  // percent
};

// Pixels labelled with an ignored class are skipped; predictions are taken
// over the remaining classes.
SegmentationMetrics segmentation_metrics(const std::vector<std::int32_t>& predicted,
                                         const std::vector<std::int32_t>& labels, std::size_t classes,
                                         const std::vector<std::size_t>& ignored);

}  // namespace maestro
