#include "maestro/router.hpp"

#include <algorithm>
#include <map>

#include "maestro/errors.hpp"

namespace maestro {

std::vector<std::size_t> RoutingPlan::lengths() const {
  std::vector<std::size_t> out;
  for (const auto& s : sequences) out.push_back(s.length());
  return out;
}

std::vector<std::vector<std::size_t>> modality_groups(const DatasetSpec& ds, const TokenLayout& layout) {
  std::map<std::size_t, std::size_t> slot_of_modality;
  for (std::size_t s = 0; s < layout.slots.size(); ++s) slot_of_modality[layout.slots[s].modality] = s;
  std::vector<std::vector<std::size_t>> groups;
  std::vector<bool> taken(layout.slots.size(), false);
  for (const auto& names : ds.modality_groups) {
    std::vector<std::size_t> members;
    for (const auto& name : names) {
      const auto idx = ds.modality_index(name);
      if (!idx) throw ValidationError("modality group names unknown modality '" + name + "'");
      const auto it = slot_of_modality.find(*idx);
      if (it == slot_of_modality.end()) continue;
      if (taken[it->second]) throw ValidationError("modality '" + name + "' appears in two groups");
      taken[it->second] = true;
      members.push_back(it->second);
    }
    std::sort(members.begin(), members.end());
    if (!members.empty()) groups.push_back(std::move(members));
  }
  for (std::size_t s = 0; s < layout.slots.size(); ++s)
    if (!taken[s]) groups.push_back({s});
  std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return groups;
}

RoutingPlan build_routing(const DatasetSpec& ds, const FusionConfig& fusion, const ModelDims& dims) {
  const TokenLayout layout = TokenLayout::build(ds, fusion.multispectral);
  const auto groups = modality_groups(ds, layout);
  std::vector<std::size_t> group_of(layout.slots.size());
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (std::size_t s : groups[g]) group_of[s] = g;

  RoutingPlan plan;
  plan.mode = fusion.mode;
  auto add_sequence = [&](std::vector<SlabRef> members, std::size_t set) {
    RoutedSequence seq;
    seq.param_set = set;
    seq.group = group_of[members.front().slot];
    for (const auto& m : members) {
      const ModalitySlot& slot = layout.slots[m.slot];
      const std::size_t begin = slot.offset + m.bin * slot.slab_size();
      for (std::size_t k = 0; k < slot.slab_size(); ++k) seq.tokens.push_back(begin + k);
    }
    seq.members = std::move(members);
    plan.sequences.push_back(std::move(seq));
  };
  auto name_of = [&](std::size_t slot) { return ds.modalities[layout.slots[slot].modality].name; };

  switch (fusion.mode) {
    case FusionMode::kShared:
      plan.param_set_names = {"shared"};
      for (std::size_t s = 0; s < layout.slots.size(); ++s)
        for (std::size_t d = 0; d < layout.slots[s].bins; ++d) add_sequence({{s, d}}, 0);
      break;
    case FusionMode::kMonotemp:
      for (std::size_t s = 0; s < layout.slots.size(); ++s) {
        plan.param_set_names.push_back(name_of(s));
        for (std::size_t d = 0; d < layout.slots[s].bins; ++d) add_sequence({{s, d}}, s);
      }
      break;
    case FusionMode::kMod:
      for (std::size_t s = 0; s < layout.slots.size(); ++s) {
        plan.param_set_names.push_back(name_of(s));
        std::vector<SlabRef> members;
        for (std::size_t d = 0; d < layout.slots[s].bins; ++d) members.push_back({s, d});
        add_sequence(std::move(members), s);
      }
      break;
    case FusionMode::kGroup:
    case FusionMode::kInterGroup:
      for (std::size_t g = 0; g < groups.size(); ++g) {
        std::string name;
        std::vector<SlabRef> members;
        for (std::size_t s : groups[g]) {
          name += (name.empty() ? "" : "+") + name_of(s);
          for (std::size_t d = 0; d < layout.slots[s].bins; ++d) members.push_back({s, d});
        }
        plan.param_set_names.push_back(name);
        add_sequence(std::move(members), g);
      }
      if (fusion.mode == FusionMode::kInterGroup && dims.n_fusion_blocks > 0) {
        if (dims.n_fusion_blocks > dims.encoder_depth) throw ValidationError("more fusion blocks than encoder blocks");
        plan.fusion_boundary = dims.encoder_depth - dims.n_fusion_blocks;
      }
      break;
  }
  return plan;
}

nlohmann::json routing_to_json(const RoutingPlan& plan, const DatasetSpec& ds, const TokenLayout& layout) {
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& s : plan.sequences) {
    nlohmann::json members = nlohmann::json::array();
    for (const auto& m : s.members) {
      members.push_back({{"modality", ds.modalities[layout.slots[m.slot].modality].name}, {"bin", m.bin}});
    }
    seqs.push_back({{"param_set", plan.param_set_names[s.param_set]},
                    {"group", s.group},
                    {"length", s.length()},
                    {"members", members}});
  }
  nlohmann::json j = {{"mode", to_string(plan.mode)},
                      {"encoder_param_sets", plan.encoder_param_sets()},
                      {"total_param_sets", plan.total_param_sets()},
                      {"param_sets", plan.param_set_names},
                      {"fusion_boundary", nullptr},
                      {"decoder", "mirrors encoder sequences"},
                      {"sequences", seqs}};
  if (plan.fusion_boundary) j["fusion_boundary"] = *plan.fusion_boundary;
  return j;
}

std::vector<std::vector<std::size_t>> visible_positions(const RoutingPlan& plan, const MaskPlan* mask) {
  std::vector<std::vector<std::size_t>> out(plan.sequences.size());
  for (std::size_t i = 0; i < plan.sequences.size(); ++i) {
    const auto& tokens = plan.sequences[i].tokens;
    for (std::size_t k = 0; k < tokens.size(); ++k)
      if (mask == nullptr || !mask->masked.at(tokens[k])) out[i].push_back(k);
  }
  return out;
}

template <typename T>
RouterIds add_router_params(nn::ParamStore<T>& ps, const RoutingPlan& plan, const ModelDims& dims, bool with_decoder,
                            Rng& rng) {
  RouterIds ids;
  const std::size_t per_set_blocks = plan.fusion_boundary.value_or(dims.encoder_depth);
  for (std::size_t s = 0; s < plan.encoder_param_sets(); ++s) {
    const std::string prefix = "enc." + plan.param_set_names[s];
    EncoderSetIds set;
    for (std::size_t b = 0; b < per_set_blocks; ++b) {
      set.blocks.push_back(nn::add_block(ps, prefix + ".block" + std::to_string(b), dims.encoder_width, rng));
    }
    if (!plan.fusion_boundary) set.norm = nn::add_layer_norm(ps, prefix + ".norm", dims.encoder_width);
    if (with_decoder) {
      set.to_decoder = nn::add_linear(ps, prefix + ".to_decoder", dims.encoder_width, dims.decoder_width, rng);
    }
    ids.encoder.push_back(std::move(set));
  }
  if (plan.fusion_boundary) {
    EncoderSetIds set;
    for (std::size_t b = *plan.fusion_boundary; b < dims.encoder_depth; ++b) {
      set.blocks.push_back(nn::add_block(ps, "enc.fusion.block" + std::to_string(b), dims.encoder_width, rng));
    }
    set.norm = nn::add_layer_norm(ps, "enc.fusion.norm", dims.encoder_width);
    ids.fusion = std::move(set);
  }
  if (with_decoder) {
    for (std::size_t s = 0; s < plan.encoder_param_sets(); ++s) {
      const std::string prefix = "dec." + plan.param_set_names[s];
      DecoderSetIds set;
      for (std::size_t b = 0; b < dims.decoder_depth; ++b) {
        set.blocks.push_back(nn::add_block(ps, prefix + ".block" + std::to_string(b), dims.decoder_width, rng));
      }
      set.norm = nn::add_layer_norm(ps, prefix + ".norm", dims.decoder_width);
      ids.decoder.push_back(std::move(set));
    }
  }
  return ids;
}

namespace {

using Pick = std::pair<std::uint32_t, std::uint32_t>;

// Per global token: (sequence, position within sequence).
std::vector<Pick> token_homes(const TokenLayout& layout, const RoutingPlan& plan) {
  std::vector<Pick> home(layout.total, {UINT32_MAX, 0});
  for (std::size_t i = 0; i < plan.sequences.size(); ++i) {
    const auto& tokens = plan.sequences[i].tokens;
    for (std::size_t k = 0; k < tokens.size(); ++k) {
      home[tokens[k]] = {static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(k)};
    }
  }
  return home;
}

}  // namespace

template <typename T>
std::vector<nn::Var> encode_visible(nn::Graph<T>& g, const std::vector<nn::Var>& tokens, const TokenLayout& layout,
                                    const RoutingPlan& plan, const std::vector<std::vector<std::size_t>>& visible,
                                    const RouterIds& ids, std::size_t heads) {
  if (tokens.size() != layout.slots.size()) throw ValidationError("encode_visible: one token matrix per modality");
  std::vector<nn::Var> out(plan.sequences.size());
  for (std::size_t i = 0; i < plan.sequences.size(); ++i) {
    if (visible[i].empty()) continue;
    const auto& seq = plan.sequences[i];
    std::vector<Pick> picks;
    picks.reserve(visible[i].size());
    for (std::size_t k : visible[i]) {
      const std::size_t token = seq.tokens[k];
      const std::size_t slot = layout.slot_of(token);
      picks.emplace_back(static_cast<std::uint32_t>(slot), static_cast<std::uint32_t>(token - layout.slots[slot].offset));
    }
    nn::Var x = g.pick_rows(tokens, std::move(picks));
    for (const auto& block : ids.encoder[seq.param_set].blocks) x = nn::transformer_block(g, x, block, heads);
    out[i] = x;
  }
  if (!ids.fusion) {
    for (std::size_t i = 0; i < out.size(); ++i)
      if (out[i].valid()) out[i] = nn::layer_norm(g, out[i], *ids.encoder[plan.sequences[i].param_set].norm);
    return out;
  }
  std::vector<nn::Var> parts;
  std::vector<std::size_t> owners;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i].valid()) {
      parts.push_back(out[i]);
      owners.push_back(i);
    }
  nn::Var fused = parts.size() == 1 ? parts[0] : g.concat_rows(parts);
  for (const auto& block : ids.fusion->blocks) fused = nn::transformer_block(g, fused, block, heads);
  fused = nn::layer_norm(g, fused, *ids.fusion->norm);
  std::size_t row = 0;
  for (std::size_t k = 0; k < owners.size(); ++k) {
    const std::size_t n = visible[owners[k]].size();
    out[owners[k]] = parts.size() == 1 ? fused : g.slice_rows(fused, row, row + n);
    row += n;
  }
  return out;
}

template <typename T>
std::vector<nn::Var> decode_with_masks(nn::Graph<T>& g, const std::vector<nn::Var>& encoded, const TokenLayout& layout,
                                       const RoutingPlan& plan, const std::vector<std::vector<std::size_t>>& visible,
                                       const RouterIds& ids, const std::vector<std::size_t>& mask_tokens,
                                       const std::vector<nn::Matrix<T>>& decoder_encodings, std::size_t heads) {
  if (ids.decoder.empty()) throw ValidationError("model was built without a decoder");
  std::vector<nn::Var> decoded(plan.sequences.size());
  for (std::size_t i = 0; i < plan.sequences.size(); ++i) {
    const auto& seq = plan.sequences[i];
    std::vector<nn::Var> sources;
    if (encoded[i].valid()) sources.push_back(nn::linear(g, encoded[i], *ids.encoder[seq.param_set].to_decoder));
    std::map<std::size_t, std::uint32_t> mask_source;
    std::vector<bool> is_visible(seq.length(), false);
    for (std::size_t k : visible[i]) is_visible[k] = true;
    std::vector<Pick> picks;
    picks.reserve(seq.length());
    nn::Matrix<T> enc(seq.length(), decoder_encodings.front().cols);
    std::uint32_t next_visible = 0;
    for (std::size_t k = 0; k < seq.length(); ++k) {
      const std::size_t token = seq.tokens[k];
      const std::size_t slot = layout.slot_of(token);
      const auto src_row = decoder_encodings[slot].row(token - layout.slots[slot].offset);
      std::copy(src_row.begin(), src_row.end(), enc.row(k).begin());
      if (is_visible[k]) {
        picks.emplace_back(0, next_visible++);
        continue;
      }
      auto it = mask_source.find(slot);
      if (it == mask_source.end()) {
        it = mask_source.emplace(slot, static_cast<std::uint32_t>(sources.size())).first;
        sources.push_back(g.param(mask_tokens[slot]));
      }
      picks.emplace_back(it->second, 0);
    }
    nn::Var x = g.add(g.pick_rows(sources, std::move(picks)), g.constant(std::move(enc)));
    const auto& set = ids.decoder[seq.param_set];
    for (const auto& block : set.blocks) x = nn::transformer_block(g, x, block, heads);
    decoded[i] = nn::layer_norm(g, x, set.norm);
  }
  const auto home = token_homes(layout, plan);
  std::vector<nn::Var> out;
  for (const auto& slot : layout.slots) {
    std::vector<Pick> picks(home.begin() + static_cast<std::ptrdiff_t>(slot.offset),
                            home.begin() + static_cast<std::ptrdiff_t>(slot.offset + slot.count()));
    out.push_back(g.pick_rows(decoded, std::move(picks)));
  }
  return out;
}

template <typename T>
std::vector<nn::Var> scatter_to_slots(nn::Graph<T>& g, const std::vector<nn::Var>& encoded, const TokenLayout& layout,
                                      const RoutingPlan& plan) {
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    if (!encoded[i].valid() || g.rows(encoded[i]) != plan.sequences[i].length()) {
      throw ValidationError("scatter_to_slots expects fully visible sequences");
    }
  }
  const auto home = token_homes(layout, plan);
  std::vector<nn::Var> out;
  for (const auto& slot : layout.slots) {
    std::vector<Pick> picks(home.begin() + static_cast<std::ptrdiff_t>(slot.offset),
                            home.begin() + static_cast<std::ptrdiff_t>(slot.offset + slot.count()));
    out.push_back(g.pick_rows(encoded, std::move(picks)));
  }
  return out;
}

#define MAESTRO_ROUTER_INSTANTIATE(T)                                                                              \
  template RouterIds add_router_params<T>(nn::ParamStore<T>&, const RoutingPlan&, const ModelDims&, bool, Rng&);  \
  template std::vector<nn::Var> encode_visible<T>(nn::Graph<T>&, const std::vector<nn::Var>&, const TokenLayout&, \
                                                  const RoutingPlan&, const std::vector<std::vector<std::size_t>>&, \
                                                  const RouterIds&, std::size_t);                                   \
  template std::vector<nn::Var> decode_with_masks<T>(                                                              \
      nn::Graph<T>&, const std::vector<nn::Var>&, const TokenLayout&, const RoutingPlan&,                          \
      const std::vector<std::vector<std::size_t>>&, const RouterIds&, const std::vector<std::size_t>&,             \
      const std::vector<nn::Matrix<T>>&, std::size_t);                                                             \
  template std::vector<nn::Var> scatter_to_slots<T>(nn::Graph<T>&, const std::vector<nn::Var>&, const TokenLayout&, \
                                                    const RoutingPlan&);

MAESTRO_ROUTER_INSTANTIATE(float)
MAESTRO_ROUTER_INSTANTIATE(double)

}  // namespace maestro
