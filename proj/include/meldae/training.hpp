#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "meldae/evaluation.hpp"
#include "meldae/losses.hpp"
#include "meldae/model.hpp"
#include "meldae/synth.hpp"

namespace meldae {

struct OptimizerConfig {
  std::string kind = "adamw";
  double lr_backbone = 1e-5;
  double lr_new = 5e-6;
  double weight_decay = 0.01;
};

struct ScheduleConfig {
  int epochs = 30;
  int batch_size = 8;
  std::uint64_t seed = 42;
  double grad_clip_norm = 1.0;  // <= 0 disables clipping
};

struct DataConfig {
  std::string manifest;              // existing dataset, or
  std::optional<SynthConfig> synth;  // generated on the fly under output_dir
  double train_fraction = 0.8;
  std::uint64_t split_seed = 42;
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  DataConfig data;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  EvalConfig eval;
  std::string output_dir = "out";

  void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown train_loss;  // mean over train clips
  double acc_me = 0, acc_state = 0;
  double f1_speaking = 0, f1_listening = 0, f1_dr = 0;
  double seconds = 0;
};

struct TrainLog {
  std::vector<EpochRecord> records;
};

inline constexpr const char* kTrainLogHeader =
    "epoch,total,l_me,l_state,l_loc,l_overlap,l_boundary,acc_me,acc_state,"
    "f1_speaking,f1_listening,f1_dr,seconds";

struct TrainResult {
  TrainLog log;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  EvalReport final_eval;
  std::string split_warning;
};

TrainResult train(const RunConfig& cfg);

// One training run per locator loss kind with identical seed/data/model.
// Emits <out>/ablation_table.csv, <out>/ablation_final.csv, <out>/ablation.svg.
struct AblationResult {
  std::vector<std::pair<LocatorLossKind, TrainLog>> runs;
  std::filesystem::path table_path, final_path, plot_path;
};

AblationResult ablate_losses(const RunConfig& cfg,
                             const std::vector<LocatorLossKind>& kinds);

// Per-epoch metrics of a model evaluated on a manifest (no training).
EvalReport evaluate_model(Model& model, const DatasetManifest& manifest,
                          const EvalConfig& cfg);

std::vector<ClipPrediction> predict_all(Model& model,
                                        const DatasetManifest& manifest);

// first epoch index whose f1_dr reaches frac * final f1_dr
int epochs_to_fraction(const TrainLog& log, double frac);

}  // namespace meldae
