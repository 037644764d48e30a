#include "maestro/model.hpp"

#include "maestro/errors.hpp"

namespace maestro {

TileInput prepare_tile(const Dataset& data, const SampleKey& key, Phase phase, bool augment) {
  const DatasetSpec& ds = data.spec;
  const TileRecord& rec = data.tiles.at(key.tile);
  const bool train = phase == Phase::kTrain;
  const std::uint64_t seed = train ? key.seed : 0, epoch = train ? key.epoch : 0;
  const std::uint64_t sample = static_cast<std::uint64_t>(key.tile) * ds.repetition_factor() + key.repetition;

  Rng crop_rng(RngKey{seed, epoch, sample, Purpose::kCrop, 0});
  const CropSample crop = sample_crop(ds, phase, key.repetition, crop_rng);
  std::size_t d4 = 0;
  if (train && augment) d4 = Rng(RngKey{seed, epoch, sample, Purpose::kD4, 0}).uniform_index(8);

  TileInput in;
  std::vector<TimeRecord> all_times;
  for (std::size_t i : ds.active_modalities()) {
    const ModalitySpec& m = ds.modalities[i];
    Rng truncate_rng(RngKey{seed, epoch, sample, Purpose::kTruncate, i});
    Rng select_rng(RngKey{seed, epoch, sample, Purpose::kSelect, i});
    const DiscretizedSeries s = discretize(rec.series.at(i), m, crop.windows[i], phase, truncate_rng, select_rng);
    ModalityInput mi;
    mi.grid = patchify(d4 ? d4_transform(s.data, d4) : s.data, m.patch_size);
    mi.grid.modality = m.name;
    mi.times = s.selected_times;
    all_times.insert(all_times.end(), s.selected_times.begin(), s.selected_times.end());
    in.slots.push_back(std::move(mi));
  }
  in.ref_day = reference_day(all_times);
  in.classes = rec.label.classes;

  if (ds.task == Task::kSegmentation) {
    const std::size_t full = data.label_side;
    if (rec.label.class_map.ndim() != 2 || rec.label.class_map.dim(0) != full) {
      throw ValidationError("tile '" + rec.id + "' lacks a label map of side " + std::to_string(full));
    }
    const std::size_t side = nint(static_cast<double>(full) * ds.crop_extent_m / ds.tile_extent_m);
    const std::size_t r0 = crop.unit_row * full / crop.units_per_tile;
    const std::size_t c0 = crop.unit_col * full / crop.units_per_tile;
    Tensor<std::uint16_t> window({side, side});
    for (std::size_t r = 0; r < side; ++r)
      for (std::size_t c = 0; c < side; ++c) window.at({r, c}) = rec.label.class_map.at({r0 + r, c0 + c});
    if (d4) window = d4_transform(window, d4);
    std::vector<bool> ignored(ds.num_classes, false);
    for (std::size_t c : ds.ignored_class_ids)
      if (c < ignored.size()) ignored[c] = true;
    in.label_side = side;
    in.label_pixels.resize(side * side);
    for (std::size_t k = 0; k < side * side; ++k) {
      const std::size_t c = window[k];
      in.label_pixels[k] = (c >= ds.num_classes || ignored[c]) ? -1 : static_cast<std::int32_t>(c);
    }
  }
  return in;
}

template <typename T>
Model<T>::Model(const RunSpec& run, std::uint64_t seed, bool with_decoder, bool with_head) : run_(run) {
  require_valid(run_);
  const DatasetSpec& ds = run_.dataset;
  const ModelDims& dims = run_.dims;
  layout_ = TokenLayout::build(ds, run_.fusion.multispectral);
  plan_ = build_routing(ds, run_.fusion, dims);
  Rng rng(RngKey{seed, 0, 0, Purpose::kInit, 0});
  for (const auto& slot : layout_.slots) {
    tokenizers_.push_back(add_tokenizer(params_, ds.modalities[slot.modality], run_.fusion.multispectral,
                                        dims.encoder_width, dims.decoder_width, rng));
  }
  router_ = add_router_params(params_, plan_, dims, with_decoder, rng);
  head_begin_ = params_.size();
  if (with_head) {
    if (ds.num_classes == 0) throw ValidationError("task head needs num_classes > 0");
    head_ = add_head(params_, dims.encoder_width, ds.num_classes, rng);
  }
  encoder_tables_ = spatial_tables(ds.modalities, dims.encoder_width - kTemporalDims);
  decoder_tables_ = spatial_tables(ds.modalities, dims.decoder_width - kTemporalDims);
}

template <typename T>
bool Model<T>::is_backbone(std::size_t param) const {
  return param < head_begin_;
}

template <typename T>
std::vector<nn::Var> Model<T>::embed_tokens(nn::Graph<T>& g, const TileInput& tile) const {
  if (tile.slots.size() != layout_.slots.size()) throw ValidationError("tile does not match the model's modalities");
  std::vector<nn::Var> out;
  for (std::size_t s = 0; s < layout_.slots.size(); ++s) {
    const ModalitySlot& slot = layout_.slots[s];
    const ModalitySpec& m = run_.dataset.modalities[slot.modality];
    const ModalityInput& mi = tile.slots[s];
    if (mi.grid.positions() != slot.positions || mi.grid.bins() != slot.bins || mi.grid.patch_dim() != m.patch_dim()) {
      throw ValidationError("modality " + m.name + ": patch grid " + shape_string(mi.grid.patches.shape()) +
                            " does not match the spec");
    }
    std::vector<nn::Matrix<T>> streams;
    for (const auto& cols : stream_columns(m, run_.fusion.multispectral)) streams.push_back(stream_matrix<T>(mi.grid, cols));
    nn::Var tokens = embed(g, streams, tokenizers_[s]);
    out.push_back(attach(g, tokens, token_encodings<T>(encoder_tables_[slot.modality], mi.times, tile.ref_day, slot.streams)));
  }
  return out;
}

template <typename T>
typename Model<T>::Reconstruction Model<T>::pretrain_forward(nn::Graph<T>& g, const TileInput& tile,
                                                             const MaskPlan& mask, bool masked_only) const {
  if (mask.total != layout_.total) throw ValidationError("mask plan does not match the token layout");
  const DatasetSpec& ds = run_.dataset;
  const ModelDims& dims = run_.dims;
  const auto tokens = embed_tokens(g, tile);
  const auto visible = visible_positions(plan_, &mask);
  const auto encoded = encode_visible(g, tokens, layout_, plan_, visible, router_, dims.heads);

  std::vector<std::size_t> mask_tokens;
  std::vector<nn::Matrix<T>> decoder_enc;
  for (std::size_t s = 0; s < layout_.slots.size(); ++s) {
    const ModalitySlot& slot = layout_.slots[s];
    mask_tokens.push_back(tokenizers_[s].mask_token);
    decoder_enc.push_back(token_encodings<T>(decoder_tables_[slot.modality], tile.slots[s].times, tile.ref_day, slot.streams));
  }
  const auto decoded =
      decode_with_masks(g, encoded, layout_, plan_, visible, router_, mask_tokens, decoder_enc, dims.decoder_heads);

  Reconstruction out;
  for (std::size_t s = 0; s < layout_.slots.size(); ++s) {
    const ModalitySpec& m = ds.modalities[layout_.slots[s].modality];
    out.streams.push_back(project_out(g, decoded[s], tokenizers_[s]));
    PatchGrid target = tile.slots[s].grid;
    target.patches = normalize_targets(tile.slots[s].grid, m.band_groups, run_.fusion.target_norm).values;
    std::vector<nn::Matrix<T>> streams;
    for (const auto& cols : stream_columns(m, run_.fusion.multispectral)) streams.push_back(stream_matrix<T>(target, cols));
    out.targets.push_back(std::move(streams));
  }
  out.weights = loss_weights(ds, layout_, &mask, run_.fusion.target_norm, run_.fusion.multispectral, masked_only);
  out.loss = reconstruction_loss(g, out.targets, out.streams, out.weights);
  return out;
}

template <typename T>
std::vector<nn::Var> Model<T>::encode_all(nn::Graph<T>& g, const TileInput& tile) const {
  const auto tokens = embed_tokens(g, tile);
  const auto visible = visible_positions(plan_, nullptr);
  const auto encoded = encode_visible(g, tokens, layout_, plan_, visible, router_, run_.dims.heads);
  return scatter_to_slots(g, encoded, layout_, plan_);
}

template <typename T>
nn::Var Model<T>::logits(nn::Graph<T>& g, const TileInput& tile) const {
  if (!head_) throw ValidationError("model was built without a task head");
  const auto encoded = encode_all(g, tile);
  if (run_.dataset.task == Task::kClassification) return classification_logits(g, encoded, *head_);
  const std::size_t ref = run_.dataset.reference_side();
  nn::Var cells = segmentation_logits(g, encoded, layout_, ref, *head_);
  return upsample_logits(g, cells, ref, tile.label_side);
}

template <typename T>
nn::Var Model<T>::task_loss(nn::Graph<T>& g, nn::Var logits, const TileInput& tile) const {
  const std::size_t k = run_.dataset.num_classes;
  if (run_.dataset.task == Task::kClassification) {
    nn::Matrix<T> targets(1, k);
    for (std::size_t c : tile.classes) {
      if (c >= k) throw ValidationError("class id out of range");
      targets(0, c) = T(1);
    }
    return g.scale(g.bce_with_logits(logits, targets), T(1) / static_cast<T>(k));
  }
  std::vector<int> labels(tile.label_pixels.begin(), tile.label_pixels.end());
  std::size_t counted = 0;
  for (int l : labels) counted += l >= 0;
  return g.scale(g.cross_entropy(logits, labels), T(1) / static_cast<T>(std::max<std::size_t>(counted, 1)));
}

template class Model<float>;
template class Model<double>;

}  // namespace maestro
