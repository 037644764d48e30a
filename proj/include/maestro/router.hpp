#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maestro/layers.hpp"
#include "maestro/masking.hpp"
#include "maestro/spec.hpp"

namespace maestro {

// All tokens of one (modality, bin) pair.
struct SlabRef {
  std::size_t slot = 0;  // index into TokenLayout::slots
  std::size_t bin = 0;
  friend bool operator==(const SlabRef&, const SlabRef&) = default;
};

struct RoutedSequence {
  std::vector<SlabRef> members;
  std::size_t param_set = 0;
  std::size_t group = 0;             // modality group the members belong to
  std::vector<std::size_t> tokens;   // global token ids in sequence order
  std::size_t length() const { return tokens.size(); }
  friend bool operator==(const RoutedSequence&, const RoutedSequence&) = default;
};

struct RoutingPlan {
  FusionMode mode = FusionMode::kGroup;
  std::vector<RoutedSequence> sequences;
  std::vector<std::string> param_set_names;  // encoder (and mirrored decoder) sets
  // Blocks [0, boundary) run per sequence, [boundary, depth) over the
  // concatenation of all sequences with one extra shared set.
  std::optional<std::size_t> fusion_boundary;

  std::size_t encoder_param_sets() const { return param_set_names.size(); }
  std::size_t total_param_sets() const { return param_set_names.size() + (fusion_boundary ? 1 : 0); }
  std::vector<std::size_t> lengths() const;
  friend bool operator==(const RoutingPlan&, const RoutingPlan&) = default;
};

// Declared modality groups restricted to active modalities, plus singletons
// for ungrouped ones, ordered by first member. Entries are slot indices.
std::vector<std::vector<std::size_t>> modality_groups(const DatasetSpec& ds, const TokenLayout& layout);

RoutingPlan build_routing(const DatasetSpec& ds, const FusionConfig& fusion, const ModelDims& dims);

nlohmann::json routing_to_json(const RoutingPlan& plan, const DatasetSpec& ds, const TokenLayout& layout);

// Positions (within each sequence) of tokens that are not masked. A null plan
// keeps every token.
std::vector<std::vector<std::size_t>> visible_positions(const RoutingPlan& plan, const MaskPlan* mask);

struct EncoderSetIds {
  std::vector<nn::BlockIds> blocks;
  std::optional<nn::LayerNormIds> norm;
  std::optional<nn::LinearIds> to_decoder;
};

struct DecoderSetIds {
  std::vector<nn::BlockIds> blocks;
  nn::LayerNormIds norm;
};

struct RouterIds {
  std::vector<EncoderSetIds> encoder;  // per param set
  std::optional<EncoderSetIds> fusion;
  std::vector<DecoderSetIds> decoder;  // per param set; empty without decoder
};

template <typename T>
RouterIds add_router_params(nn::ParamStore<T>& ps, const RoutingPlan& plan, const ModelDims& dims, bool with_decoder,
                            Rng& rng);

// Runs the encoder over the visible tokens of each sequence. `tokens` holds
// one [L_m, C_e] matrix per slot. Returns per sequence the encoded visible
// tokens [V, C_e]; sequences without visible tokens yield an invalid Var.
template <typename T>
std::vector<nn::Var> encode_visible(nn::Graph<T>& g, const std::vector<nn::Var>& tokens, const TokenLayout& layout,
                                    const RoutingPlan& plan, const std::vector<std::vector<std::size_t>>& visible,
                                    const RouterIds& ids, std::size_t heads);

// Projects encodings to decoder width, fills masked slots with the owning
// modality's mask token, adds decoder encodings ([L_m, C_d] per slot), runs the
// decoder per sequence and returns one [L_m, C_d] matrix per slot.
template <typename T>
std::vector<nn::Var> decode_with_masks(nn::Graph<T>& g, const std::vector<nn::Var>& encoded, const TokenLayout& layout,
                                       const RoutingPlan& plan, const std::vector<std::vector<std::size_t>>& visible,
                                       const RouterIds& ids, const std::vector<std::size_t>& mask_tokens,
                                       const std::vector<nn::Matrix<T>>& decoder_encodings, std::size_t heads);

// Scatters per-sequence encodings of a fully visible forward back into one
// [L_m, C_e] matrix per slot.
template <typename T>
std::vector<nn::Var> scatter_to_slots(nn::Graph<T>& g, const std::vector<nn::Var>& encoded, const TokenLayout& layout,
                                      const RoutingPlan& plan);

}  // namespace maestro
