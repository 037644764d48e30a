#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "maestro/data.hpp"
#include "maestro/encodings.hpp"
#include "maestro/heads.hpp"
#include "maestro/masking.hpp"
#include "maestro/router.hpp"
#include "maestro/targets.hpp"
#include "maestro/tokenizer.hpp"

namespace maestro {

struct ModalityInput {
  PatchGrid grid;                  // [positions, bins, P*P*C], divided by the norm factor
  std::vector<TimeRecord> times;   // one per bin
};

// One discretized, cropped (and possibly augmented) tile ready for the model.
struct TileInput {
  std::vector<ModalityInput> slots;  // ordered like TokenLayout::slots
  double ref_day = 0.0;
  std::vector<std::size_t> classes;          // classification labels
  std::vector<std::int32_t> label_pixels;    // segmentation labels, row-major, -1 = ignored
  std::size_t label_side = 0;
};

struct SampleKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::size_t tile = 0;
  std::size_t repetition = 0;
};

// Crop, temporal discretization, optional D4 augmentation and patchification.
// All randomness derives from `key`; eval-phase samples ignore seed and epoch.
TileInput prepare_tile(const Dataset& data, const SampleKey& key, Phase phase, bool augment);

template <typename T>
class Model {
 public:
  Model(const RunSpec& run, std::uint64_t seed, bool with_decoder = true, bool with_head = true);

  const RunSpec& run() const { return run_; }
  const TokenLayout& layout() const { return layout_; }
  const RoutingPlan& plan() const { return plan_; }
  const RouterIds& router() const { return router_; }
  bool has_head() const { return head_.has_value(); }

  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }
  // Everything except the task head.
  bool is_backbone(std::size_t param) const;

  // Embedded tokens with encoder encodings, one [L_m, C_e] per slot.
  std::vector<nn::Var> embed_tokens(nn::Graph<T>& g, const TileInput& tile) const;

  struct Reconstruction {
    nn::Var loss;
    std::vector<std::vector<nn::Var>> streams;  // [slot][stream]
    std::vector<std::vector<nn::Matrix<T>>> targets;
    LossWeights weights;
  };
  Reconstruction pretrain_forward(nn::Graph<T>& g, const TileInput& tile, const MaskPlan& mask,
                                  bool masked_only = true) const;

  // Unmasked encoder output, one [L_m, C_e] per slot.
  std::vector<nn::Var> encode_all(nn::Graph<T>& g, const TileInput& tile) const;
  // Classification: [1, K]. Segmentation: [label_side^2, K].
  nn::Var logits(nn::Graph<T>& g, const TileInput& tile) const;
  // Mean binary cross-entropy (classification) or mean pixel cross-entropy
  // over non-ignored pixels (segmentation).
  nn::Var task_loss(nn::Graph<T>& g, nn::Var logits, const TileInput& tile) const;

 private:
  RunSpec run_;
  TokenLayout layout_;
  RoutingPlan plan_;
  nn::ParamStore<T> params_;
  std::vector<TokenizerIds> tokenizers_;
  RouterIds router_;
  std::optional<HeadIds> head_;
  std::vector<PositionalTable> encoder_tables_;
  std::vector<PositionalTable> decoder_tables_;
  std::size_t head_begin_ = 0;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace maestro
