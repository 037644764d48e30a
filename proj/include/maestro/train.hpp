#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maestro/model.hpp"

namespace maestro {

enum class WorkflowPhase { kPretrain, kProbe, kFinetune };
std::string to_string(WorkflowPhase phase);
WorkflowPhase parse_workflow_phase(const std::string& s);
const PhaseSchedule& schedule_for(const TrainingConfig& cfg, WorkflowPhase phase);

// Peak learning rate: base_lr * sqrt(batch).
double peak_lr(const PhaseSchedule& schedule);
// Index of the step at which the warmup reaches the peak.
std::size_t warmup_steps(std::size_t total, double warmup_fraction);
// Linear warmup from peak / 25 to the peak at warmup_steps, then cosine decay
// reaching peak / final_div at step total - 1.
double one_cycle_lr(std::size_t step, std::size_t total, const PhaseSchedule& schedule, double warmup_fraction);

// alpha = 1 - 1 / (0.2 * epochs), floored at 0.
double ema_alpha(std::size_t epochs);
// ema <- alpha * ema + (1 - alpha) * current
template <typename T>
void ema_update(nn::ParamStore<T>& ema, const nn::ParamStore<T>& current, double alpha);

// Adam with decoupled weight decay and bias-corrected moments.
template <typename T>
class AdamW {
 public:
  AdamW(const nn::ParamStore<T>& params, double beta1, double beta2, double weight_decay, double eps = 1e-8);
  // Parameters with trainable[i] == false are left untouched (moments too).
  void step(nn::ParamStore<T>& params, const nn::GradStore<T>& grads, double lr,
            const std::vector<bool>* trainable = nullptr);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, weight_decay_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct Evaluation {
  double loss = 0.0;
  double primary = 0.0;  // weighted F1 or mIoU, percent
  ClassificationMetrics classification;
  SegmentationMetrics segmentation;
  std::size_t samples = 0;
};

struct EpochRecord {
  WorkflowPhase phase = WorkflowPhase::kPretrain;
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;        // at the last step of the epoch
  double loss = 0.0;      // mean training loss
  std::optional<double> metric;  // training-set primary metric (probe / finetune)
  std::optional<Evaluation> eval;
};

nlohmann::json to_json(const EpochRecord& rec, const DatasetSpec& ds);

struct PhaseOptions {
  WorkflowPhase phase = WorkflowPhase::kPretrain;
  std::uint64_t seed = 0;
  std::optional<std::size_t> epochs;   // overrides the schedule
  std::optional<std::size_t> batch;
  std::optional<double> base_lr;
  bool augment = true;
  bool masked_only = true;
  // Starting weights. Probe and finetune require every backbone tensor.
  const nn::ParamStore<float>* init = nullptr;
  const Dataset* eval_data = nullptr;
  bool eval_each_epoch = false;
  std::ostream* log = nullptr;  // one JSON object per epoch
};

struct PhaseResult {
  std::vector<EpochRecord> epochs;
  nn::ParamStore<float> params;  // weights used for evaluation (EMA after finetune)
  nn::ParamStore<float> live;    // last optimizer iterate
  std::optional<Evaluation> eval;
  std::uint64_t backbone_checksum_before = 0;
  std::uint64_t backbone_checksum_after = 0;
};

PhaseResult run_phase(const RunSpec& run, const Dataset& train, const PhaseOptions& options);

// Eval-phase pass over every tile and repetition of `data`.
Evaluation evaluate(const Model<float>& model, const Dataset& data);

// Mean masked-reconstruction loss over `data` in eval mode with fixed masks.
double evaluate_reconstruction(const Model<float>& model, const Dataset& data, std::uint64_t seed, bool masked_only = true);

}  // namespace maestro
