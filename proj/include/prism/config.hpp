#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "prism/adaptation.hpp"
#include "prism/model.hpp"
#include "prism/optimizer.hpp"
#include "prism/pretrain.hpp"
#include "prism/protocol.hpp"
#include "prism/signal.hpp"
#include "prism/synthetic.hpp"

namespace prism {

nlohmann::json to_json(const AdamWConfig& cfg);
AdamWConfig adamw_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PipelineConfig& cfg);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticTaskSpec& spec);
SyntheticTaskSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HeadConfig& cfg);
HeadConfig head_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AdaptationConfig& cfg);
AdaptationConfig adaptation_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PretrainConfig& cfg);
PretrainConfig pretrain_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SplitFractions& f);
SplitFractions split_fractions_from_json(const nlohmann::json& j);

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds = {0, 1, 2};  // protocol sweeps
  std::filesystem::path output_dir = "runs/default";

  // Dataset: a directory of recordings, or the synthetic generator when empty.
  std::filesystem::path dataset_dir;
  SyntheticTaskSpec synthetic;

  PipelineConfig pipeline;
  TokenizerConfig tokenizer;
  PosEncConfig pos_encoding;
  ModelConfig model;
  MaskConfig mask;
  PretrainConfig pretrain;
  AdaptationConfig adaptation;
  HeadConfig head;

  std::filesystem::path checkpoint;  // pretrained model for adapt / eval / sweep
  std::filesystem::path classifier;  // fitted classifier for eval

  FactorGrid protocol;
  SplitFractions fractions;
  RankMetric rank_metric = RankMetric::validation;
  std::vector<std::string> sweep_models = {"bandpower", "subject_fingerprint"};
  unsigned workers = 1;

  static ExperimentConfig preset(const std::string& name);  // "desk" or "paper"
};

// Invariants of every sub-config. Path existence is checked by the
// subcommands that read them.
void validate(const ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentConfig& cfg);
// Keys absent from `j` keep the values of `base`; unknown keys are errors.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const ExperimentConfig& base = {});

// Reads a config file, then applies PRISM_DATASET_DIR, PRISM_OUTPUT_DIR,
// PRISM_CHECKPOINT and PRISM_CLASSIFIER (paths only).
ExperimentConfig load_experiment_config(const std::filesystem::path& path, const ExperimentConfig& base = {});
void apply_path_overrides(ExperimentConfig& cfg);

}  // namespace prism
