#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"

#include "prism/model.hpp"
#include "prism/optimizer.hpp"
#include "prism/recording.hpp"

namespace prism {

struct Checkpoint;

struct PretrainConfig {
  int epochs = 5;
  int batch_size = 8;
  AdamWConfig optimizer;
  long long warmup_steps = 10;
  double min_lr_ratio = 0.1;
  long long max_steps = 0;  // 0 -> epochs x steps per epoch
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;  // empty -> nothing written
  bool resume = false;
  int stop_after_epochs = 0;  // > 0: stop once this many epochs are complete
};

struct StepRecord {
  long long step = 0;
  int epoch = 0;
  double lr = 0.0;
  LossReport loss;
};

struct PretrainResult {
  MaskedAutoencoder model;
  std::vector<StepRecord> steps;  // steps run in this invocation
  std::vector<std::filesystem::path> checkpoints;
  int epochs_completed = 0;
  long long steps_completed = 0;
  bool resumed = false;
  bool finished = false;
};

struct BatchLoss {
  ad::Var total;
  ad::Var l_pri;
  ad::Var l_sec;
  LossReport report;
};

// Mean of the per-sample losses over a batch; all plans mask the same count.
BatchLoss batch_loss(ad::Tape& tape, MaskedAutoencoder& model, const std::vector<const TokenGrid*>& grids,
                     const std::vector<MaskPlan>& plans);

nlohmann::json pretrain_fingerprint(const ModelConfig& model, const TokenizerConfig& tok, const PosEncConfig& pe,
                                    const MaskConfig& mask, const PretrainConfig& cfg);

// `segments` are preprocessed windows (see signal.hpp). Deterministic in
// cfg.seed: init, data order and mask plans use separate named substreams,
// and every per-epoch stream is derived from (seed, epoch), so resuming
// from an epoch checkpoint reproduces an uninterrupted run exactly.
PretrainResult pretrain(const std::vector<Recording>& segments, const ModelConfig& model_cfg,
                        const TokenizerConfig& tok, const PosEncConfig& pe, const MaskConfig& mask,
                        const PretrainConfig& cfg);

// Saves a model-only checkpoint (e.g. for adaptation input).
void save_model(const MaskedAutoencoder& model, const std::filesystem::path& path,
                const nlohmann::json& extra_meta = nlohmann::json::object());
MaskedAutoencoder load_model(const std::filesystem::path& path);
MaskedAutoencoder model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace prism
