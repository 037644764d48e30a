#include "maestro/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "maestro/checkpoint.hpp"
#include "maestro/errors.hpp"

namespace maestro {

std::string to_string(WorkflowPhase phase) {
  switch (phase) {
    case WorkflowPhase::kPretrain: return "pretrain";
    case WorkflowPhase::kProbe: return "probe";
    case WorkflowPhase::kFinetune: return "finetune";
  }
  return "?";
}

WorkflowPhase parse_workflow_phase(const std::string& s) {
  if (s == "pretrain") return WorkflowPhase::kPretrain;
  if (s == "probe") return WorkflowPhase::kProbe;
  if (s == "finetune") return WorkflowPhase::kFinetune;
  throw ValidationError("unknown phase '" + s + "' (expected pretrain, probe or finetune)");
}

const PhaseSchedule& schedule_for(const TrainingConfig& cfg, WorkflowPhase phase) {
  switch (phase) {
    case WorkflowPhase::kPretrain: return cfg.pretrain;
    case WorkflowPhase::kProbe: return cfg.probe;
    case WorkflowPhase::kFinetune: return cfg.finetune;
  }
  return cfg.pretrain;
}

double peak_lr(const PhaseSchedule& schedule) {
  return schedule.base_lr * std::sqrt(static_cast<double>(schedule.batch_size));
}

std::size_t warmup_steps(std::size_t total, double warmup_fraction) {
  if (total == 0) return 0;
  const auto w = static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(total)));
  return std::min(w, total - 1);
}

double one_cycle_lr(std::size_t step, std::size_t total, const PhaseSchedule& schedule, double warmup_fraction) {
  if (step >= total) throw ValidationError("learning-rate step outside the schedule");
  const double peak = peak_lr(schedule);
  const double start = peak / 25.0;
  const double last = peak / schedule.final_div;
  const std::size_t warm = warmup_steps(total, warmup_fraction);
  if (step < warm) {
    return start + (peak - start) * static_cast<double>(step) / static_cast<double>(warm);
  }
  if (step == warm && warm < total - 1) return peak;
  const double progress =
      warm == total - 1 ? 1.0 : static_cast<double>(step - warm) / static_cast<double>(total - 1 - warm);
  if (progress >= 1.0) return last;
  return last + (peak - last) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double ema_alpha(std::size_t epochs) {
  if (epochs == 0) return 0.0;
  return std::max(0.0, 1.0 - 5.0 / static_cast<double>(epochs));
}

template <typename T>
void ema_update(nn::ParamStore<T>& ema, const nn::ParamStore<T>& current, double alpha) {
  if (ema.size() != current.size()) throw ValidationError("EMA and model parameter sets differ");
  for (std::size_t i = 0; i < ema.size(); ++i) {
    auto& e = ema.value(i).data;
    const auto& c = current.value(i).data;
    for (std::size_t k = 0; k < e.size(); ++k) {
      e[k] = static_cast<T>(alpha * static_cast<double>(e[k]) + (1.0 - alpha) * static_cast<double>(c[k]));
    }
  }
}

template <typename T>
AdamW<T>::AdamW(const nn::ParamStore<T>& params, double beta1, double beta2, double weight_decay, double eps)
    : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.value(i).size(), 0.0);
    v_.emplace_back(params.value(i).size(), 0.0);
  }
}

template <typename T>
void AdamW<T>::step(nn::ParamStore<T>& params, const nn::GradStore<T>& grads, double lr,
                    const std::vector<bool>* trainable) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double shrink = 1.0 - lr * weight_decay_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (trainable && !(*trainable)[i]) continue;
    auto& p = params.value(i).data;
    const auto& g = grads.grads[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * gk;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
      p[k] = static_cast<T>(static_cast<double>(p[k]) * shrink - lr * update);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;
template void ema_update<float>(nn::ParamStore<float>&, const nn::ParamStore<float>&, double);
template void ema_update<double>(nn::ParamStore<double>&, const nn::ParamStore<double>&, double);

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::int32_t argmax_allowed(std::span<const float> row, const std::vector<bool>& ignored) {
  std::int32_t best = -1;
  for (std::size_t c = 0; c < row.size(); ++c) {
    if (c < ignored.size() && ignored[c]) continue;
    if (best < 0 || row[c] > row[static_cast<std::size_t>(best)]) best = static_cast<std::int32_t>(c);
  }
  return best;
}

// Accumulates predictions for the task metrics.
struct MetricAccumulator {
  const DatasetSpec* ds;
  std::vector<bool> ignored;
  std::vector<std::vector<double>> probs;
  std::vector<std::vector<std::uint8_t>> labels;
  std::vector<std::int32_t> predicted_pixels, label_pixels;

  explicit MetricAccumulator(const DatasetSpec& spec) : ds(&spec), ignored(spec.num_classes, false) {
    for (std::size_t c : spec.ignored_class_ids)
      if (c < ignored.size()) ignored[c] = true;
  }

  void add(const nn::Matrix<float>& logits, const TileInput& tile) {
    if (ds->task == Task::kClassification) {
      std::vector<double> p(logits.cols);
      for (std::size_t c = 0; c < logits.cols; ++c) p[c] = sigmoid(logits(0, c));
      std::vector<std::uint8_t> l(logits.cols, 0);
      for (std::size_t c : tile.classes) l[c] = 1;
      probs.push_back(std::move(p));
      labels.push_back(std::move(l));
      return;
    }
    for (std::size_t r = 0; r < logits.rows; ++r) predicted_pixels.push_back(argmax_allowed(logits.row(r), ignored));
    label_pixels.insert(label_pixels.end(), tile.label_pixels.begin(), tile.label_pixels.end());
  }

  void finish(Evaluation& e) const {
    if (ds->task == Task::kClassification) {
      e.classification = classification_metrics(probs, labels, ds->ignored_class_ids);
      e.primary = e.classification.weighted_f1;
    } else {
      e.segmentation = segmentation_metrics(predicted_pixels, label_pixels, ds->num_classes, ds->ignored_class_ids);
      e.primary = e.segmentation.miou;
    }
  }
};

std::vector<std::pair<std::size_t, std::size_t>> all_samples(const Dataset& data) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t reps = data.spec.repetition_factor();
  for (std::size_t t = 0; t < data.tiles.size(); ++t)
    for (std::size_t r = 0; r < reps; ++r) out.emplace_back(t, r);
  return out;
}

void check_dataset(const RunSpec& run, const Dataset& data) {
  const auto& a = run.dataset.modalities;
  const auto& b = data.spec.modalities;
  if (a.size() != b.size()) throw ValidationError("dataset modalities do not match the run configuration");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].channels != b[i].channels) {
      throw ValidationError("dataset modality '" + b[i].name + "' does not match the run configuration");
    }
  }
  if (data.tiles.empty()) throw ValidationError("dataset has no tiles");
}

}  // namespace

nlohmann::json to_json(const EpochRecord& rec, const DatasetSpec& ds) {
  const char* metric_name = ds.task == Task::kClassification ? "weighted_f1" : "miou";
  nlohmann::json j = {{"phase", to_string(rec.phase)}, {"epoch", rec.epoch}, {"lr", rec.lr}, {"loss", rec.loss}};
  j["metric_name"] = rec.phase == WorkflowPhase::kPretrain ? "reconstruction_l1" : metric_name;
  j["metric"] = rec.metric ? nlohmann::json(*rec.metric) : nlohmann::json(nullptr);
  if (rec.eval) {
    j["eval"] = {{"loss", rec.eval->loss}, {"primary", rec.eval->primary}};
    if (ds.task == Task::kClassification) {
      j["eval"]["top1"] = rec.eval->classification.top1;
    } else {
      j["eval"]["pixel_accuracy"] = rec.eval->segmentation.pixel_accuracy;
    }
  }
  return j;
}

Evaluation evaluate(const Model<float>& model, const Dataset& data) {
  check_dataset(model.run(), data);
  Evaluation e;
  MetricAccumulator acc(data.spec);
  for (const auto& [tile, rep] : all_samples(data)) {
    const TileInput in = prepare_tile(data, {0, 0, tile, rep}, Phase::kEval, false);
    nn::Graph<float> g(&model.params());
    const nn::Var logits = model.logits(g, in);
    e.loss += g.value(model.task_loss(g, logits, in)).data[0];
    acc.add(g.value(logits), in);
    ++e.samples;
  }
  e.loss /= static_cast<double>(std::max<std::size_t>(e.samples, 1));
  acc.finish(e);
  return e;
}

double evaluate_reconstruction(const Model<float>& model, const Dataset& data, std::uint64_t seed, bool masked_only) {
  check_dataset(model.run(), data);
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& [tile, rep] : all_samples(data)) {
    const TileInput in = prepare_tile(data, {0, 0, tile, rep}, Phase::kEval, false);
    const std::uint64_t id = static_cast<std::uint64_t>(tile) * data.spec.repetition_factor() + rep;
    Rng srng(RngKey{seed, 0, id, Purpose::kMaskStructured, 1});
    Rng arng(RngKey{seed, 0, id, Purpose::kMaskAdjust, 1});
    const MaskPlan mask = sample_mask(model.layout(), model.run().fusion, srng, arng);
    nn::Graph<float> g(&model.params());
    total += g.value(model.pretrain_forward(g, in, mask, masked_only).loss).data[0];
    ++n;
  }
  return total / static_cast<double>(std::max<std::size_t>(n, 1));
}

PhaseResult run_phase(const RunSpec& run, const Dataset& train, const PhaseOptions& opts) {
  require_valid(run);
  check_dataset(run, train);
  const bool pretrain = opts.phase == WorkflowPhase::kPretrain;
  PhaseSchedule sched = schedule_for(run.training, opts.phase);
  if (opts.epochs) sched.epochs = *opts.epochs;
  if (opts.batch) sched.batch_size = *opts.batch;
  if (opts.base_lr) sched.base_lr = *opts.base_lr;
  if (sched.epochs == 0 || sched.batch_size == 0) throw ValidationError("epochs and batch size must be positive");
  if (!pretrain && opts.init == nullptr) throw ValidationError(to_string(opts.phase) + " needs pretrained weights");

  Model<float> model(run, opts.seed, true, !pretrain);
  auto& params = model.params();
  const auto backbone = [&model](std::size_t i) { return model.is_backbone(i); };
  if (opts.init) copy_matching(params, *opts.init, [&](std::size_t i) { return !pretrain && model.is_backbone(i); });

  std::vector<bool> trainable(params.size(), true), frozen(params.size(), false);
  if (opts.phase == WorkflowPhase::kProbe) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      trainable[i] = !model.is_backbone(i);
      frozen[i] = !trainable[i];
    }
  }

  PhaseResult result;
  result.backbone_checksum_before = param_checksum(params, backbone);
  AdamW<float> optimizer(params, run.training.beta1, run.training.beta2, run.training.weight_decay);
  const bool use_ema = opts.phase == WorkflowPhase::kFinetune;
  nn::ParamStore<float> ema = params;
  const double alpha = ema_alpha(sched.epochs);

  auto samples = all_samples(train);
  const std::size_t batch = sched.batch_size;
  const std::size_t steps_per_epoch = (samples.size() + batch - 1) / batch;
  const std::size_t total_steps = steps_per_epoch * sched.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < sched.epochs; ++epoch) {
    Rng shuffle_rng(RngKey{opts.seed, epoch, 0, Purpose::kShuffle, 0});
    shuffle_rng.shuffle(std::span(samples));
    MetricAccumulator acc(train.spec);
    double loss_sum = 0.0, lr = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      nn::GradStore<float> grads(params);
      const std::size_t begin = b * batch, end = std::min(samples.size(), begin + batch);
      for (std::size_t k = begin; k < end; ++k) {
        const auto [tile, rep] = samples[k];
        const TileInput in = prepare_tile(train, {opts.seed, epoch, tile, rep}, Phase::kTrain, opts.augment);
        nn::Graph<float> g(&params);
        g.freeze(frozen);
        nn::Var loss;
        if (pretrain) {
          const std::uint64_t id = static_cast<std::uint64_t>(tile) * train.spec.repetition_factor() + rep;
          Rng srng(RngKey{opts.seed, epoch, id, Purpose::kMaskStructured, 0});
          Rng arng(RngKey{opts.seed, epoch, id, Purpose::kMaskAdjust, 0});
          const MaskPlan mask = sample_mask(model.layout(), run.fusion, srng, arng);
          loss = model.pretrain_forward(g, in, mask, opts.masked_only).loss;
        } else {
          const nn::Var logits = model.logits(g, in);
          loss = model.task_loss(g, logits, in);
          acc.add(g.value(logits), in);
        }
        loss_sum += g.value(loss).data[0];
        g.backward(loss);
        g.accumulate_param_grads(grads);
      }
      grads.scale(1.0f / static_cast<float>(end - begin));
      lr = one_cycle_lr(step++, total_steps, sched, run.training.warmup_fraction);
      optimizer.step(params, grads, lr, &trainable);
    }
    if (use_ema) ema_update(ema, params, alpha);

    EpochRecord rec;
    rec.phase = opts.phase;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.loss = loss_sum / static_cast<double>(samples.size());
    if (!pretrain) {
      Evaluation e;
      acc.finish(e);
      rec.metric = e.primary;
      if (opts.eval_data && opts.eval_each_epoch) {
        if (use_ema) {
          Model<float> shadow(run, opts.seed, true, true);
          shadow.params() = ema;
          rec.eval = evaluate(shadow, *opts.eval_data);
        } else {
          rec.eval = evaluate(model, *opts.eval_data);
        }
      }
    }
    if (opts.log) *opts.log << to_json(rec, train.spec).dump() << '\n' << std::flush;
    result.epochs.push_back(std::move(rec));
  }

  result.live = params;
  result.params = use_ema ? ema : params;
  result.backbone_checksum_after = param_checksum(params, backbone);
  if (opts.eval_data && !pretrain) {
    model.params() = result.params;
    result.eval = evaluate(model, *opts.eval_data);
  }
  return result;
}

}  // namespace maestro
