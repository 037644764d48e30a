#pragma once

#include <cstddef>
#include <string>

#include "maestro/autodiff.hpp"
#include "maestro/rng.hpp"

namespace maestro::nn {

// Dense layer y = x W + b with W stored [in, out].
struct LinearIds {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

// Pre-norm ViT block: x + Attn(LN(x)), then + MLP(LN(.)) with a 4x hidden
// width and GELU.
struct BlockIds {
  std::size_t ln1_gain = 0, ln1_bias = 0;
  LinearIds qkv, out;
  std::size_t ln2_gain = 0, ln2_bias = 0;
  LinearIds fc1, fc2;
};

struct LayerNormIds {
  std::size_t gain = 0, bias = 0;
};

// Single learned query attending over a token set.
struct AttentivePoolIds {
  std::size_t query = 0;
  std::size_t key = 0;
  LinearIds value;
};

template <typename T>
LinearIds add_linear(ParamStore<T>& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);
template <typename T>
LayerNormIds add_layer_norm(ParamStore<T>& ps, const std::string& prefix, std::size_t width);
template <typename T>
BlockIds add_block(ParamStore<T>& ps, const std::string& prefix, std::size_t width, Rng& rng);
template <typename T>
AttentivePoolIds add_attentive_pool(ParamStore<T>& ps, const std::string& prefix, std::size_t width, Rng& rng);

template <typename T>
Var linear(Graph<T>& g, Var x, const LinearIds& ids);
template <typename T>
Var layer_norm(Graph<T>& g, Var x, const LayerNormIds& ids);
template <typename T>
Var self_attention(Graph<T>& g, Var x, const LinearIds& qkv, const LinearIds& out, std::size_t heads);
template <typename T>
Var transformer_block(Graph<T>& g, Var x, const BlockIds& ids, std::size_t heads);
// x holds consecutive sets of `set_size` tokens; returns one pooled row per set.
template <typename T>
Var attentive_pool(Graph<T>& g, Var x, const AttentivePoolIds& ids, std::size_t set_size);

}  // namespace maestro::nn
