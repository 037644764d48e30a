#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "maestro/checkpoint.hpp"
#include "maestro/cost.hpp"
#include "maestro/errors.hpp"
#include "maestro/train.hpp"

namespace maestro::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// Options that resolve a RunSpec. Precedence: flag > config file > preset.
struct SpecOptions {
  std::string preset;
  std::string config;
  std::string fusion, multispectral, target_norm;
  double mask_ratio = 0.0;
  std::size_t width = 0, depth = 0, decoder_width = 0, decoder_depth = 0, heads = 0, decoder_heads = 0,
              fusion_blocks = 0;
  std::map<std::string, CLI::Option*> flags;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "Preset name or path");
    app->add_option("--config", config, "Run configuration JSON (e.g. a saved snapshot)");
    flags["fusion"] = app->add_option("--fusion", fusion, "shared | monotemp | mod | group | inter-group");
    flags["ms"] = app->add_option("--multispectral", multispectral, "joint-token | token-based");
    flags["norm"] = app->add_option("--target-norm", target_norm, "none | patch | patch-group");
    flags["mask"] = app->add_option("--mask-ratio", mask_ratio, "Fraction of tokens masked");
    flags["width"] = app->add_option("--width", width, "Encoder width");
    flags["depth"] = app->add_option("--depth", depth, "Encoder depth");
    flags["dwidth"] = app->add_option("--decoder-width", decoder_width, "Decoder width");
    flags["ddepth"] = app->add_option("--decoder-depth", decoder_depth, "Decoder depth");
    flags["heads"] = app->add_option("--heads", heads, "Encoder attention heads");
    flags["dheads"] = app->add_option("--decoder-heads", decoder_heads, "Decoder attention heads");
    flags["fblocks"] = app->add_option("--fusion-blocks", fusion_blocks, "Shared blocks in inter-group mode");
  }
  bool given(const std::string& key) const { return flags.at(key)->count() > 0; }

  // The config file, if any, also provides its raw JSON (for run options).
  RunSpec resolve(json* file_json = nullptr) const {
    if (preset.empty() && config.empty()) throw ValidationError("one of --preset or --config is required");
    RunSpec run;
    if (!config.empty()) {
      const json j = read_json(config);
      try {
        run = j.get<RunSpec>();
      } catch (const json::exception& e) {
        throw ValidationError("invalid config " + config + ": " + e.what());
      }
      if (file_json) *file_json = j;
    } else {
      run = load_preset(preset);
    }
    if (given("fusion")) run.fusion.mode = parse_fusion_mode(fusion);
    if (given("ms")) run.fusion.multispectral = parse_multispectral(multispectral);
    if (given("norm")) run.fusion.target_norm = parse_target_norm(target_norm);
    if (given("mask")) run.fusion.mask_ratio = mask_ratio;
    if (given("width")) run.dims.encoder_width = width;
    if (given("depth")) run.dims.encoder_depth = depth;
    if (given("dwidth")) run.dims.decoder_width = decoder_width;
    if (given("ddepth")) run.dims.decoder_depth = decoder_depth;
    if (given("heads")) run.dims.heads = heads;
    if (given("dheads")) run.dims.decoder_heads = decoder_heads;
    if (given("fblocks")) run.dims.n_fusion_blocks = fusion_blocks;
    require_valid(run);
    return run;
  }
};

struct TrainOptions {
  SpecOptions spec;
  std::string data, eval_data, out, init;
  std::uint64_t seed = 0;
  std::size_t epochs = 0, batch = 0;
  double lr = 0.0;
  bool no_augment = false, all_tokens = false, eval_each_epoch = false;
  CLI::Option *seed_opt = nullptr, *epochs_opt = nullptr, *batch_opt = nullptr, *lr_opt = nullptr;

  void attach(CLI::App* app, WorkflowPhase phase) {
    spec.attach(app);
    app->add_option("--data", data, "Training dataset directory (default: $MAESTRO_DATA_ROOT)");
    app->add_option("--out", out, "Output directory")->required();
    seed_opt = app->add_option("--seed", seed, "Run seed");
    epochs_opt = app->add_option("--epochs", epochs, "Epochs");
    batch_opt = app->add_option("--batch", batch, "Batch size");
    lr_opt = app->add_option("--lr", lr, "Base learning rate (scaled by sqrt(batch))");
    app->add_flag("--no-augment", no_augment, "Disable D4 augmentation");
    if (phase == WorkflowPhase::kPretrain) {
      app->add_flag("--all-tokens", all_tokens, "Reconstruction loss over every token, not only masked ones");
    } else {
      app->add_option("--init", init, "Pretrained checkpoint (required unless the config names one)");
      app->add_option("--eval-data", eval_data, "Evaluation dataset directory");
      app->add_flag("--eval-each-epoch", eval_each_epoch, "Evaluate after every epoch");
    }
  }
};

std::string data_dir(const std::string& flag, const std::string& from_file) {
  if (!flag.empty()) return flag;
  if (!from_file.empty()) return from_file;
  if (const char* env = std::getenv("MAESTRO_DATA_ROOT"); env && *env) return env;
  throw ValidationError("no dataset: pass --data or set MAESTRO_DATA_ROOT");
}

int run_training(TrainOptions& o, WorkflowPhase phase, std::ostream& out) {
  json file;
  RunSpec run = o.spec.resolve(&file);
  const json file_run = file.is_object() ? file.value("run", json::object()) : json::object();
  PhaseSchedule& sched = phase == WorkflowPhase::kPretrain ? run.training.pretrain
                         : phase == WorkflowPhase::kProbe  ? run.training.probe
                                                           : run.training.finetune;
  if (o.epochs_opt->count()) sched.epochs = o.epochs;
  if (o.batch_opt->count()) sched.batch_size = o.batch;
  if (o.lr_opt->count()) sched.base_lr = o.lr;
  const std::uint64_t seed = o.seed_opt->count() ? o.seed : file_run.value("seed", std::uint64_t{0});

  const fs::path dir = o.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  // Snapshot fields fill in whatever the command line leaves unset.
  const std::string data_path = data_dir(o.data, file_run.value("data", ""));
  const std::string eval_path = o.eval_data.empty() ? file_run.value("eval_data", "") : o.eval_data;
  const std::string init_path = o.init.empty() ? file_run.value("init", "") : o.init;
  const bool augment = !o.no_augment && file_run.value("augment", true);
  const bool masked_only = !o.all_tokens && file_run.value("masked_only", true);
  if (phase != WorkflowPhase::kPretrain && init_path.empty()) throw ValidationError("--init is required");
  const Dataset train = load_dataset(data_path);
  std::optional<Dataset> eval;
  if (!eval_path.empty()) eval = load_dataset(eval_path);
  std::optional<nn::ParamStore<float>> init;
  if (!init_path.empty()) init = load_checkpoint(init_path);

  json snapshot = run;
  snapshot["run"] = {{"phase", to_string(phase)}, {"seed", seed},       {"data", data_path},
                     {"eval_data", eval_path},    {"init", init_path},  {"augment", augment},
                     {"masked_only", masked_only}};
  write_json(dir / "config.json", snapshot);

  std::ofstream log = open_out(dir / "metrics.jsonl");
  PhaseOptions po;
  po.phase = phase;
  po.seed = seed;
  po.augment = augment;
  po.masked_only = masked_only;
  po.init = init ? &*init : nullptr;
  po.eval_data = eval ? &*eval : nullptr;
  po.eval_each_epoch = o.eval_each_epoch;
  po.log = &log;
  const PhaseResult result = run_phase(run, train, po);

  save_checkpoint(dir / "checkpoint.bin", result.params);
  json summary = {{"phase", to_string(phase)},
                  {"epochs", result.epochs.size()},
                  {"final_loss", result.epochs.empty() ? 0.0 : result.epochs.back().loss},
                  {"backbone_checksum_before", result.backbone_checksum_before},
                  {"backbone_checksum_after", result.backbone_checksum_after}};
  if (result.eval) {
    summary["eval"] = {{"loss", result.eval->loss}, {"primary", result.eval->primary}, {"samples", result.eval->samples}};
  }
  write_json(dir / "summary.json", summary);
  out << to_string(phase) << ": " << result.epochs.size() << " epochs, final loss " << std::setprecision(6)
      << summary["final_loss"].get<double>();
  if (result.eval) out << ", eval primary " << result.eval->primary;
  out << "\n";
  return kExitOk;
}

void print_cost(std::ostream& out, const std::string& label, const RunSpec& run, const CostReport& r,
                const std::string& format) {
  if (format == "json") {
    json j = cost_to_json(r);
    j["dataset"] = run.dataset.name;
    j["fusion"] = to_string(run.fusion.mode);
    j["multispectral"] = to_string(run.fusion.multispectral);
    out << j.dump(2) << "\n";
  } else if (format == "csv") {
    write_cost_csv(out, r);
  } else {
    out << std::fixed << std::setprecision(3) << label << " " << run.dataset.name << " "
        << to_string(run.fusion.mode) << " " << to_string(run.fusion.multispectral) << ": "
        << r.total_macs / 1e9 << " GMACs, " << r.total_flops() / 1e9 << " GFLOPs\n";
    out.unsetf(std::ios::floatfield);
  }
}

DatasetSpec resolve_dataset_spec(const std::string& s) {
  const json j = read_json(preset_path(s));
  try {
    return j.contains("dataset") ? j.at("dataset").get<DatasetSpec>() : j.get<DatasetSpec>();
  } catch (const json::exception& e) {
    throw ValidationError("invalid dataset spec " + s + ": " + e.what());
  }
}

// One CSV row per logged epoch across all given logs.
void write_report(std::ostream& out, const std::vector<std::string>& logs) {
  out << "log,phase,epoch,lr,loss,metric_name,metric,eval_loss,eval_primary\n";
  for (const auto& path : logs) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        throw IoError(path + ":" + std::to_string(n) + ": malformed log line");
      }
      auto num = [](const json& v) {
        if (!v.is_number()) return std::string();
        std::ostringstream os;
        os << std::setprecision(10) << v.get<double>();
        return os.str();
      };
      out << path << ',' << j.value("phase", "") << ',' << j.value("epoch", 0) << ',' << num(j.value("lr", json()))
          << ',' << num(j.value("loss", json())) << ',' << j.value("metric_name", "") << ','
          << num(j.value("metric", json()));
      if (j.contains("eval")) {
        out << ',' << num(j["eval"].value("loss", json())) << ',' << num(j["eval"].value("primary", json()));
      } else {
        out << ",,";
      }
      out << '\n';
    }
  }
}

int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal masked-autoencoder toolkit for Earth-observation tiles", "maestro"};
  app.require_subcommand(1);

  TrainOptions pre, probe, fine;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Masked-autoencoder pretraining");
  pre.attach(pretrain_cmd, WorkflowPhase::kPretrain);
  auto* probe_cmd = app.add_subcommand("probe", "Train a task head on a frozen backbone");
  probe.attach(probe_cmd, WorkflowPhase::kProbe);
  auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune backbone and head");
  fine.attach(finetune_cmd, WorkflowPhase::kFinetune);

  SpecOptions cost_spec;
  std::string cost_phase = "both", cost_format = "text";
  auto* cost_cmd = app.add_subcommand("cost", "Analytic MACs/FLOPs of one forward pass");
  cost_spec.attach(cost_cmd);
  cost_cmd->add_option("--phase", cost_phase, "pretrain | transfer | both")
      ->check(CLI::IsMember({"pretrain", "transfer", "both"}));
  cost_cmd->add_option("--format", cost_format, "text | json | csv")->check(CLI::IsMember({"text", "json", "csv"}));

  std::string recipe_path, gen_spec, gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "Render a synthetic dataset");
  gen_cmd->add_option("--recipe", recipe_path, "Recipe JSON")->required();
  gen_cmd->add_option("--spec", gen_spec, "Preset, run config or dataset spec")->required();
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();

  SpecOptions audit_spec;
  std::size_t audit_plans = 10000;
  std::uint64_t audit_seed = 0;
  std::string audit_out;
  auto* audit_cmd = app.add_subcommand("audit-mask", "Empirical masking frequencies as CSV");
  audit_spec.attach(audit_cmd);
  audit_cmd->add_option("--plans", audit_plans, "Number of sampled plans");
  audit_cmd->add_option("--seed", audit_seed, "Sampling seed");
  audit_cmd->add_option("--out", audit_out, "CSV path (default: stdout)");

  SpecOptions inspect_spec;
  std::string inspect_what = "routing", inspect_modality;
  auto* inspect_cmd = app.add_subcommand("inspect", "Dump the routing plan or encoding tables as JSON");
  inspect_spec.attach(inspect_cmd);
  inspect_cmd->add_option("--what", inspect_what, "routing | encodings | tokens")
      ->check(CLI::IsMember({"routing", "encodings", "tokens"}));
  inspect_cmd->add_option("--modality", inspect_modality, "Restrict encoding dumps to one modality");

  std::vector<std::string> report_logs;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "Summarize metrics logs as CSV");
  report_cmd->add_option("logs", report_logs, "metrics.jsonl files")->required();
  report_cmd->add_option("--out", report_out, "CSV path (default: stdout)");

  std::vector<const char*> cargv;
  for (const auto& a : argv) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitValidation;
  }

  if (pretrain_cmd->parsed()) return run_training(pre, WorkflowPhase::kPretrain, out);
  if (probe_cmd->parsed()) return run_training(probe, WorkflowPhase::kProbe, out);
  if (finetune_cmd->parsed()) return run_training(fine, WorkflowPhase::kFinetune, out);

  if (cost_cmd->parsed()) {
    const RunSpec run = cost_spec.resolve();
    if (cost_phase != "transfer") {
      print_cost(out, "pretrain", run, pretrain_cost(run.dataset, run.fusion, run.dims), cost_format);
    }
    if (cost_phase != "pretrain") {
      print_cost(out, "transfer", run, transfer_cost(run.dataset, run.fusion, run.dims), cost_format);
    }
    return kExitOk;
  }

  if (gen_cmd->parsed()) {
    const SyntheticRecipe recipe = load_recipe(recipe_path);
    const DatasetSpec spec = resolve_dataset_spec(gen_spec);
    const Dataset data = generate(recipe, spec);
    write_dataset(data, gen_out);
    out << "wrote " << data.tiles.size() << " tiles to " << gen_out << "\n";
    return kExitOk;
  }

  if (audit_cmd->parsed()) {
    const RunSpec run = audit_spec.resolve();
    const auto rows = audit_masks(run.dataset, run.fusion, audit_seed, audit_plans);
    if (audit_out.empty()) {
      write_audit_csv(out, rows);
    } else {
      std::ofstream f = open_out(audit_out);
      write_audit_csv(f, rows);
    }
    return kExitOk;
  }

  if (inspect_cmd->parsed()) {
    const RunSpec run = inspect_spec.resolve();
    const TokenLayout layout = TokenLayout::build(run.dataset, run.fusion.multispectral);
    json j;
    if (inspect_what == "routing") {
      j = routing_to_json(build_routing(run.dataset, run.fusion, run.dims), run.dataset, layout);
    } else if (inspect_what == "tokens") {
      j = json::array();
      for (const auto& slot : layout.slots) {
        j.push_back({{"modality", run.dataset.modalities[slot.modality].name},
                     {"positions", slot.positions},
                     {"bins", slot.bins},
                     {"streams", slot.streams},
                     {"offset", slot.offset},
                     {"tokens", slot.count()}});
      }
    } else {
      const auto tables = spatial_tables(run.dataset.modalities, run.dims.encoder_width - kTemporalDims);
      j = json::object();
      for (std::size_t i = 0; i < tables.size(); ++i) {
        const auto& m = run.dataset.modalities[i];
        if (!m.active() || (!inspect_modality.empty() && m.name != inspect_modality)) continue;
        json rows = json::array();
        for (std::size_t p = 0; p < tables[i].positions(); ++p) {
          rows.push_back(std::vector<double>(tables[i].row(p), tables[i].row(p) + tables[i].width));
        }
        j[m.name] = {{"lcm_side", tables[i].lcm_side}, {"grid_side", tables[i].grid_side}, {"table", rows}};
      }
      if (!inspect_modality.empty() && j.empty()) throw ValidationError("no active modality '" + inspect_modality + "'");
    }
    out << j.dump(2) << "\n";
    return kExitOk;
  }

  if (report_cmd->parsed()) {
    if (report_out.empty()) {
      write_report(out, report_logs);
    } else {
      std::ofstream f = open_out(report_out);
      write_report(f, report_logs);
    }
    return kExitOk;
  }
  return kExitValidation;
}

}  // namespace

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(argv, out, err);
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace maestro::cli
