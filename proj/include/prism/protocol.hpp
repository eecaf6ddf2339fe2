#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "prism/adaptation.hpp"
#include "prism/recording.hpp"

namespace prism {

enum class SplitPolicy { subject_level_all, subject_test_segment_val };
enum class CheckpointPolicy { best_validation, last };
enum class NormalizationVariant { pipeline_default, per_segment };
enum class ReportingMode { standardized, self_selected };
enum class RankMetric { validation, test };

std::string to_string(SplitPolicy v);
std::string to_string(CheckpointPolicy v);
std::string to_string(NormalizationVariant v);
std::string to_string(ReportingMode v);
std::string to_string(RankMetric v);
SplitPolicy split_policy_from_string(const std::string& s);
CheckpointPolicy checkpoint_policy_from_string(const std::string& s);
NormalizationVariant normalization_from_string(const std::string& s);
ReportingMode reporting_mode_from_string(const std::string& s);
RankMetric rank_metric_from_string(const std::string& s);

struct ProtocolConfig {
  SplitPolicy split = SplitPolicy::subject_level_all;
  CheckpointPolicy checkpoint = CheckpointPolicy::best_validation;
  double segment_length_s = 4.0;
  NormalizationVariant normalization = NormalizationVariant::pipeline_default;
  HeadConfig head;
  ReportingMode reporting = ReportingMode::standardized;

  // Stable identifier, e.g. "split=subject_level_all|ckpt=best_validation|seg=4|...".
  std::string key() const;
  bool operator==(const ProtocolConfig&) const = default;
};

void validate(const ProtocolConfig& cfg);
nlohmann::json to_json(const ProtocolConfig& cfg);
ProtocolConfig protocol_config_from_json(const nlohmann::json& j);

struct SplitFractions {
  // Subject-level shares per class (train gets the remainder).
  double val = 0.05;
  double test = 0.10;
  // Share of non-test segments sent to validation under subject_test_segment_val.
  double segment_val = 0.20;
};

struct Splits {
  std::vector<Recording> train;
  std::vector<Recording> val;
  std::vector<Recording> test;
};

// Subjects are stratified by the label of their first segment. Test is
// always a subject-level hold-out.
Splits make_splits(const std::vector<Recording>& segments, SplitPolicy policy, std::uint64_t seed,
                   const SplitFractions& fractions = {});

// Index into a checkpoint sequence of length n. best_validation: argmax of
// the trace, ties to the earliest; last: n - 1.
std::size_t select_checkpoint(const std::vector<double>& val_trace, CheckpointPolicy policy, std::size_t n);

// Per-segment z-score of every channel (the "alternative" normalization).
Recording zscore_segment(const Recording& seg);

// Segments every recording (stride = window) and applies the normalization variant.
std::vector<Recording> segment_dataset(const std::vector<Recording>& recordings, double segment_length_s,
                                       NormalizationVariant normalization);

using Predictor = std::function<std::vector<int>(const std::vector<Recording>&)>;

struct FitOptions {
  HeadConfig head;
  Regime regime = Regime::lp;
  std::string label = "default";
};

struct FitResult {
  std::vector<Predictor> snapshots;  // one per epoch
  std::vector<double> val_trace;     // optional; recomputed by the harness when empty
};

// Anything that can be adapted to a labeled split and then predict.
// Implementations must be safe to call concurrently from several cells.
class ModelSpec {
 public:
  virtual ~ModelSpec() = default;
  virtual std::string name() const = 0;
  // Settings searched under self_selected reporting. The first entry is
  // the standardized setting for `head`.
  virtual std::vector<FitOptions> grid(const HeadConfig& head) const;
  virtual FitResult fit(const std::vector<Recording>& train, const std::vector<Recording>& val,
                        const FitOptions& options, std::uint64_t seed) const = 0;
};

// PRISM encoder + head, adapted with the adaptation module.
class PrismModelSpec : public ModelSpec {
 public:
  PrismModelSpec(std::shared_ptr<const MaskedAutoencoder> pretrained, AdaptationConfig adaptation,
                 std::vector<HeadKind> grid_heads = {}, std::vector<Regime> grid_regimes = {},
                 std::string name = "prism");
  std::string name() const override { return name_; }
  std::vector<FitOptions> grid(const HeadConfig& head) const override;
  FitResult fit(const std::vector<Recording>& train, const std::vector<Recording>& val, const FitOptions& options,
                std::uint64_t seed) const override;

 private:
  std::shared_ptr<const MaskedAutoencoder> pretrained_;
  AdaptationConfig adaptation_;
  std::vector<HeadKind> grid_heads_;
  std::vector<Regime> grid_regimes_;
  std::string name_;
};

struct CellSeedResult {
  std::uint64_t seed = 0;
  double val_bacc = 0.0;
  double test_bacc = 0.0;
  double test_recording_bacc = 0.0;
  std::size_t selected = 0;   // checkpoint index
  std::size_t n_checkpoints = 0;
  std::string fit_label;      // grid entry that produced the numbers
  std::size_t n_train = 0, n_val = 0, n_test = 0;
};

struct CellResult {
  std::vector<CellSeedResult> seeds;
  double mean_val = 0.0, sd_val = 0.0;
  double mean_test = 0.0, sd_test = 0.0;
};

// segment -> split -> fit -> select checkpoint -> evaluate on test, per seed.
// Errors are rethrown with the cell key attached.
CellResult run_cell(const ModelSpec& model, const std::vector<Recording>& recordings, const ProtocolConfig& cfg,
                    const std::vector<std::uint64_t>& seeds, const SplitFractions& fractions = {});

// Levels per factor; the first level of each is the baseline.
struct FactorGrid {
  std::vector<SplitPolicy> split = {SplitPolicy::subject_level_all};
  std::vector<CheckpointPolicy> checkpoint = {CheckpointPolicy::best_validation};
  std::vector<double> segment_length_s = {4.0};
  std::vector<NormalizationVariant> normalization = {NormalizationVariant::pipeline_default};
  std::vector<HeadConfig> head = {HeadConfig{}};
  std::vector<ReportingMode> reporting = {ReportingMode::standardized};

  std::size_t size() const;
  std::vector<ProtocolConfig> cells() const;
  ProtocolConfig baseline() const;
};

void validate(const FactorGrid& grid);
nlohmann::json to_json(const FactorGrid& grid);
FactorGrid factor_grid_from_json(const nlohmann::json& j);

struct ReversalPair {
  std::string cell_a, cell_b;
  std::string model_1, model_2;  // model_1 ranks above model_2 in cell_a, below in cell_b
};

struct FactorDelta {
  std::string factor;
  std::string level;
  std::string cell;                       // the one-factor-changed cell
  std::map<std::string, double> delta;    // model -> metric(cell) - metric(baseline)
};

struct SweepReport {
  RankMetric metric = RankMetric::validation;
  std::vector<std::string> models;
  std::map<std::string, ProtocolConfig> configs;                          // cell key -> config
  std::map<std::string, std::map<std::string, CellResult>> cells;          // cell -> model -> result
  std::map<std::string, std::map<std::string, std::string>> failures;      // cell -> model -> message
  std::map<std::string, std::vector<std::string>> rankings;                // by `metric`
  std::vector<ReversalPair> reversal_pairs;
  double max_discrepancy_pp = 0.0;
  std::string baseline_cell;
  std::vector<FactorDelta> factor_deltas;
  // cell -> model -> metric - (baseline + sum of one-factor deltas)
  std::map<std::string, std::map<std::string, double>> interaction_residuals;

  double value(const std::string& cell, const std::string& model) const;
  bool complete(const std::string& cell) const;
};

// Fills rankings, reversal_pairs, max_discrepancy_pp, factor_deltas and
// interaction_residuals from `cells`. Depends only on the table contents.
void summarize(SweepReport& report, const FactorGrid& grid);

struct SweepOptions {
  RankMetric metric = RankMetric::validation;
  SplitFractions fractions;
  unsigned workers = 1;
};

SweepReport sweep(const std::vector<const ModelSpec*>& models, const std::vector<Recording>& recordings,
                  const FactorGrid& grid, const std::vector<std::uint64_t>& seeds, const SweepOptions& options = {});

nlohmann::json to_json(const SweepReport& report);
SweepReport sweep_report_from_json(const nlohmann::json& j);
std::string render_markdown(const SweepReport& report);
// One SVG bar chart per factor with a non-baseline level; returns written paths.
std::vector<std::string> write_delta_plots(const SweepReport& report, const std::string& directory);

}  // namespace prism
