// prism: command-line driver for preprocessing, pretraining, adaptation and
// protocol sweeps. Exit status is 0 on success, otherwise the error
// category code (config 2, io 3, data 4, numeric 5, resume 6,
// precondition 7); the last stderr line reads "error[<category>]: ...".

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "prism/adaptation.hpp"
#include "prism/baselines.hpp"
#include "prism/checkpoint.hpp"
#include "prism/config.hpp"
#include "prism/error.hpp"
#include "prism/pretrain.hpp"
#include "prism/protocol.hpp"
#include "prism/signal.hpp"
#include "prism/synthetic.hpp"

namespace fs = std::filesystem;
using namespace prism;

namespace {

struct Options {
  std::string config;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
  std::string output;
  bool resume = false;
  std::string checkpoint;
  std::string classifier;
  std::string input;
};

ExperimentConfig resolve(const Options& o) {
  auto cfg = ExperimentConfig::preset(o.preset);
  if (!o.config.empty()) cfg = load_experiment_config(o.config, cfg);
  else apply_path_overrides(cfg);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.output.empty()) cfg.output_dir = o.output;
  if (!o.checkpoint.empty()) cfg.checkpoint = o.checkpoint;
  if (!o.classifier.empty()) cfg.classifier = o.classifier;
  validate(cfg);
  return cfg;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) fail(ErrorCategory::io, "cannot write " + path.string());
  f << j.dump(2) << '\n';
}

// Frozen copy of everything needed to rerun this command.
void freeze(const ExperimentConfig& cfg, const std::string& command, const Options& o) {
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) fail(ErrorCategory::io, "cannot create output directory " + cfg.output_dir.string() + ": " + ec.message());
  auto j = to_json(cfg);
  j["command"] = command;
  j["preset"] = o.preset;
  j["resume"] = o.resume;
  write_json(cfg.output_dir / ("config." + command + ".json"), j);
}

std::vector<Recording> raw_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset_dir.empty()) return generate_synthetic_dataset(cfg.synthetic, derive_seed(cfg.seed, "data"));
  if (!fs::is_directory(cfg.dataset_dir))
    fail(ErrorCategory::io, "dataset directory " + cfg.dataset_dir.string() + " does not exist");
  return load_dataset(cfg.dataset_dir);
}

std::vector<Recording> preprocessed(const ExperimentConfig& cfg) {
  std::vector<Recording> out;
  for (const auto& rec : raw_dataset(cfg)) out.push_back(preprocess(rec, cfg.pipeline).recording);
  return out;
}

std::vector<Recording> segments_of(const std::vector<Recording>& recs, const PipelineConfig& p) {
  std::vector<Recording> out;
  for (const auto& r : recs)
    for (auto& s : segment(r, p.segment_length_s, p.stride_s > 0 ? p.stride_s : p.segment_length_s))
      out.push_back(std::move(s));
  if (out.empty()) fail(ErrorCategory::data, "no segments: recordings are shorter than the segment length");
  return out;
}

fs::path need_file(const fs::path& p, const std::string& what) {
  if (p.empty()) fail(ErrorCategory::config, "no " + what + " given (set it in the config or pass --" + what + ")");
  if (!fs::exists(p)) fail(ErrorCategory::io, what + " " + p.string() + " does not exist");
  return p;
}

int cmd_synth(const Options& o) {
  const auto cfg = resolve(o);
  freeze(cfg, "synth", o);
  const auto recs = generate_synthetic_dataset(cfg.synthetic, derive_seed(cfg.seed, "data"));
  const auto dir = cfg.output_dir / "dataset";
  save_dataset(recs, dir);
  std::cout << "wrote " << recs.size() << " recordings (" << cfg.synthetic.n_subjects << " subjects) to " << dir.string()
            << "\n";
  return 0;
}

int cmd_preprocess(const Options& o) {
  const auto cfg = resolve(o);
  freeze(cfg, "preprocess", o);
  std::vector<Recording> out;
  std::size_t flat = 0;
  for (const auto& rec : raw_dataset(cfg)) {
    auto n = preprocess(rec, cfg.pipeline);
    for (auto c : n.zero_variance_channels)
      std::cerr << "warning: " << rec.recording_id << " channel " << rec.channel_names[c] << " has zero variance\n";
    flat += n.zero_variance_channels.size();
    out.push_back(std::move(n.recording));
  }
  const auto dir = cfg.output_dir / "preprocessed";
  save_dataset(out, dir);
  std::cout << "preprocessed " << out.size() << " recordings to " << dir.string() << " (" << flat
            << " zero-variance channels)\n";
  return 0;
}

int cmd_pretrain(const Options& o) {
  const auto cfg = resolve(o);
  freeze(cfg, "pretrain", o);
  const auto segs = segments_of(preprocessed(cfg), cfg.pipeline);
  PretrainConfig p = cfg.pretrain;
  p.seed = cfg.seed;
  p.output_dir = cfg.output_dir / "pretrain";
  p.resume = o.resume;
  const auto res = pretrain(segs, cfg.model, cfg.tokenizer, cfg.pos_encoding, cfg.mask, p);
  std::cout << (res.resumed ? "resumed; " : "") << "epochs " << res.epochs_completed << ", steps " << res.steps_completed;
  if (!res.steps.empty())
    std::cout << ", L_pri " << res.steps.front().loss.l_pri << " -> " << res.steps.back().loss.l_pri;
  std::cout << "\ncheckpoint: " << (p.output_dir / "final.ckpt").string() << "\n";
  return 0;
}

int cmd_adapt(const Options& o) {
  const auto cfg = resolve(o);
  freeze(cfg, "adapt", o);
  const auto model = load_model(need_file(cfg.checkpoint, "checkpoint"));
  const auto segs = segments_of(preprocessed(cfg), cfg.pipeline);
  const auto splits = make_splits(segs, SplitPolicy::subject_level_all, derive_seed(cfg.seed, "split"), cfg.fractions);
  HeadConfig head = cfg.head;
  const auto res = adapt(model, splits.train, splits.val, head, cfg.adaptation, derive_seed(cfg.seed, "fit"));
  if (res.snapshots.empty()) fail(ErrorCategory::config, "adaptation ran zero epochs");
  std::vector<double> trace;
  {
    std::ofstream log(cfg.output_dir / "adapt_metrics.jsonl", std::ios::trunc);
    for (const auto& h : res.history) {
      trace.push_back(h.val_segment_bacc);
      log << nlohmann::json{{"stage", h.stage},
                            {"epoch", h.epoch},
                            {"train_loss", h.train_loss},
                            {"val_segment_bacc", h.val_segment_bacc},
                            {"val_recording_bacc", h.val_recording_bacc}}
                 .dump()
          << '\n';
    }
  }
  const auto pick = select_checkpoint(trace, CheckpointPolicy::best_validation, trace.size());
  auto clf = res.snapshots[pick];
  const auto test = evaluate(clf, splits.test);
  const auto path = cfg.output_dir / "classifier.ckpt";
  save_classifier(clf, path, {{"selected_epoch", pick}, {"regime", to_string(cfg.adaptation.regime)}});
  std::cout << "regime " << to_string(cfg.adaptation.regime) << ", head " << to_string(head.kind)
            << ": selected epoch " << pick + 1 << "/" << trace.size() << ", val bacc " << trace[pick]
            << ", test bacc " << test.segment_bacc << " (segments) " << test.recording_bacc << " (recordings)\n"
            << "classifier: " << path.string() << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const auto cfg = resolve(o);
  freeze(cfg, "eval", o);
  auto clf = load_classifier(need_file(cfg.classifier, "classifier"));
  const auto segs = segments_of(preprocessed(cfg), cfg.pipeline);
  const auto r = evaluate(clf, segs);
  {
    std::ofstream dump(cfg.output_dir / "predictions.csv", std::ios::trunc);
    dump << "subject_id,recording_id,segment,label,prediction\n";
    std::map<std::string, int> counter;
    for (std::size_t i = 0; i < segs.size(); ++i)
      dump << segs[i].subject_id << ',' << segs[i].recording_id << ',' << counter[segs[i].recording_id]++ << ','
           << r.labels[i] << ',' << r.predictions[i] << '\n';
  }
  write_json(cfg.output_dir / "eval.json",
             {{"segment_bacc", r.segment_bacc}, {"recording_bacc", r.recording_bacc}, {"n_segments", segs.size()}});
  std::cout << "balanced accuracy: " << r.segment_bacc << " (segments), " << r.recording_bacc << " (recordings)\n";
  return 0;
}

int cmd_sweep(const Options& o) {
  const auto cfg = resolve(o);
  freeze(cfg, "sweep", o);
  const auto recs = preprocessed(cfg);
  std::vector<Band> bands;
  for (const auto& mix : cfg.synthetic.class_signal_model)
    for (const auto& osc : mix) bands.push_back({osc.center_hz - 2.0, osc.center_hz + 2.0});
  const int classes = cfg.head.classes;

  std::vector<std::unique_ptr<ModelSpec>> owned;
  for (const auto& name : cfg.sweep_models) {
    if (name == "bandpower")
      owned.push_back(std::make_unique<BandpowerSpec>(bands, classes));
    else if (name == "subject_fingerprint")
      owned.push_back(std::make_unique<SubjectFingerprintSpec>(confound_frequencies_hz(), classes));
    else if (name == "spectral_logreg")
      owned.push_back(std::make_unique<SpectralLogRegSpec>(classes));
    else if (name == "prism")
      owned.push_back(std::make_unique<PrismModelSpec>(
          std::make_shared<const MaskedAutoencoder>(load_model(need_file(cfg.checkpoint, "checkpoint"))),
          cfg.adaptation));
  }
  std::vector<const ModelSpec*> models;
  for (const auto& m : owned) models.push_back(m.get());

  SweepOptions opts;
  opts.metric = cfg.rank_metric;
  opts.fractions = cfg.fractions;
  opts.workers = cfg.workers;
  const auto report = sweep(models, recs, cfg.protocol, cfg.seeds, opts);
  write_json(cfg.output_dir / "sweep_report.json", to_json(report));
  std::ofstream(cfg.output_dir / "sweep_report.md") << render_markdown(report);
  std::cout << report.cells.size() << " cells, " << report.reversal_pairs.size() << " ranking reversals, max discrepancy "
            << report.max_discrepancy_pp << " pp\nreport: " << (cfg.output_dir / "sweep_report.json").string() << "\n";
  if (!report.failures.empty()) std::cerr << "warning: " << report.failures.size() << " cells had failures\n";
  return 0;
}

int cmd_report(const Options& o) {
  const auto cfg = resolve(o);
  const fs::path input = o.input.empty() ? cfg.output_dir / "sweep_report.json" : fs::path(o.input);
  std::ifstream in(input);
  if (!in) fail(ErrorCategory::io, "sweep report " + input.string() + " does not exist");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::data, "sweep report " + input.string() + " is not valid JSON");
  }
  const auto report = sweep_report_from_json(j);
  const auto md = render_markdown(report);
  std::cout << md;
  if (report.configs.empty()) return 0;
  const auto dir = input.parent_path();
  std::ofstream(dir / "report.md") << md;
  for (const auto& p : write_delta_plots(report, (dir / "plots").string())) std::cout << "plot: " << p << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PRISM EEG pretraining, adaptation and benchmark-protocol sweeps"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--preset", o.preset, "Base configuration")->check(CLI::IsMember({"desk", "paper"}));
    sub->add_option("--seed", seed, "Root seed (overrides the config)");
    sub->add_option("--output", o.output, "Output directory (overrides the config)");
  };
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  auto* prep = app.add_subcommand("preprocess", "Resample, filter and normalize a dataset");
  auto* pre = app.add_subcommand("pretrain", "Masked-autoencoder pretraining");
  auto* adp = app.add_subcommand("adapt", "Fit a classifier on a pretrained checkpoint");
  auto* ev = app.add_subcommand("eval", "Evaluate a fitted classifier");
  auto* sw = app.add_subcommand("sweep", "Run a factorial protocol sweep");
  auto* rep = app.add_subcommand("report", "Render a sweep report and factor-delta plots");
  for (auto* s : {synth, prep, pre, adp, ev, sw, rep}) add_common(s);
  pre->add_flag("--resume", o.resume, "Continue from the latest epoch checkpoint");
  for (auto* s : {adp, sw}) s->add_option("--checkpoint", o.checkpoint, "Pretrained model checkpoint");
  ev->add_option("--classifier", o.classifier, "Fitted classifier checkpoint");
  rep->add_option("--input", o.input, "Sweep report JSON (default: <output>/sweep_report.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorCategory::config);
  }
  for (auto* s : app.get_subcommands())
    if (s->count("--seed")) o.seed = seed;

  try {
    if (*synth) return cmd_synth(o);
    if (*prep) return cmd_preprocess(o);
    if (*pre) return cmd_pretrain(o);
    if (*adp) return cmd_adapt(o);
    if (*ev) return cmd_eval(o);
    if (*sw) return cmd_sweep(o);
    if (*rep) return cmd_report(o);
  } catch (const Error& e) {
    std::cerr << "error[" << category_name(e.category()) << "]: " << e.what() << "\n";
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error[io]: " << e.what() << "\n";
    return static_cast<int>(ErrorCategory::io);
  }
  return 0;
}
