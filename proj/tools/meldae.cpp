#include <CLI11.hpp>
#include <iostream>

#include "meldae/gradcheck.hpp"
#include "meldae/training.hpp"

namespace fs = std::filesystem;
using namespace meldae;

namespace {

int cmd_generate_data(const SynthConfig& cfg, const std::string& out) {
  DatasetManifest m = generate(cfg, out);
  long segs = 0;
  for (const auto& c : m.clips) segs += long(c.segments.size());
  std::cout << "wrote " << m.clips.size() << " clips (" << segs << " segments) to "
            << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path) {
  RunConfig cfg = load_run_config(config_path);
  TrainResult res = train(cfg);
  if (!res.split_warning.empty())
    std::cerr << "warning: " << res.split_warning << "\n";
  const EpochRecord& last = res.log.records.back();
  std::cout << "trained " << cfg.schedule.epochs << " epochs; final eval f1_dr="
            << last.f1_dr << " acc_me=" << last.acc_me << "\n";
  std::cout << "checkpoints: " << res.final_checkpoint << " (final), "
            << res.best_checkpoint << " (best)\n";
  return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& checkpoint,
                 const std::string& predictions, const std::string& manifest_path,
                 bool ledger) {
  RunConfig cfg = load_run_config(config_path);
  std::string mp = !manifest_path.empty() ? manifest_path : cfg.data.manifest;
  if (mp.empty())
    throw ConfigError("evaluate: need --manifest or data.manifest in the config");
  DatasetManifest manifest = load_manifest(mp);

  EvalReport rep;
  if (!predictions.empty()) {
    rep = evaluate(load_predictions(predictions), manifest, cfg.eval);
  } else if (!checkpoint.empty()) {
    Model model = Model::load(checkpoint);
    if (!(model.config() == cfg.model))
      throw ConfigError("checkpoint model config does not match the run config");
    rep = evaluate_model(model, manifest, cfg.eval);
  } else {
    throw ConfigError("evaluate: need --checkpoint or --predictions");
  }

  std::cout << report_text(rep);
  fs::create_directories(cfg.output_dir);
  save_report_json(rep, fs::path(cfg.output_dir) / "eval_report.json", ledger);
  std::cout << "report written to " << cfg.output_dir << "/eval_report.json\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& kinds_csv) {
  RunConfig cfg = load_run_config(config_path);
  std::vector<LocatorLossKind> kinds;
  std::stringstream ss(kinds_csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) kinds.push_back(locator_loss_kind_from_string(tok));
  AblationResult res = ablate_losses(cfg, kinds);
  for (const auto& [kind, log] : res.runs)
    std::cout << to_string(kind) << ": final f1_dr=" << log.records.back().f1_dr
              << " epochs_to_90pct=" << epochs_to_fraction(log, 0.9) << "\n";
  std::cout << "table: " << res.final_path << "\nplot: " << res.plot_path << "\n";
  return 0;
}

int cmd_gradcheck() {
  GradCheckReport rep = run_gradcheck(GradCheckOptions{});
  std::cout << rep.text();
  return rep.all_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MELDAE micro-expression spotting toolkit"};
  app.require_subcommand(1);

  SynthConfig synth;
  std::string out_dir = "data";
  auto* gen = app.add_subcommand("generate-data", "generate a synthetic corpus");
  gen->add_option("--n-clips", synth.n_clips);
  gen->add_option("--T", synth.T);
  gen->add_option("--d-in", synth.D_in);
  gen->add_option("--n-regions", synth.n_regions);
  gen->add_option("--me-probability", synth.me_probability);
  gen->add_option("--me-duration-min", synth.me_duration_min);
  gen->add_option("--me-duration-max", synth.me_duration_max);
  gen->add_option("--me-amplitude", synth.me_amplitude);
  gen->add_option("--speaking-fraction", synth.speaking_fraction);
  gen->add_option("--speech-noise-amplitude", synth.speech_noise_amplitude);
  gen->add_option("--base-noise-std", synth.base_noise_std);
  gen->add_option("--seed", synth.seed);
  gen->add_flag("--frames-mode", synth.frames_mode);
  gen->add_option("--frame-size", synth.frame_size);
  gen->add_option("--out", out_dir)->required();

  std::string config_path, checkpoint, predictions, manifest_path, kinds_csv;
  bool ledger = false;

  auto* tr = app.add_subcommand("train", "train a model from a run config");
  tr->add_option("--config", config_path)->required()->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint or predictions");
  ev->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", checkpoint);
  ev->add_option("--predictions", predictions);
  ev->add_option("--manifest", manifest_path);
  ev->add_flag("--ledger", ledger, "include the match ledger in the report");

  auto* ab = app.add_subcommand("ablate-losses", "compare locator losses");
  ab->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  ab->add_option("--kinds", kinds_csv, "comma-separated loss kinds")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  (void)gc;

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate_data(synth, out_dir);
    if (tr->parsed()) return cmd_train(config_path);
    if (ev->parsed())
      return cmd_evaluate(config_path, checkpoint, predictions, manifest_path,
                          ledger);
    if (ab->parsed()) return cmd_ablate(config_path, kinds_csv);
    if (gc->parsed()) return cmd_gradcheck();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
