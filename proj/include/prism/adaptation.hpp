#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prism/model.hpp"
#include "prism/recording.hpp"

namespace prism {

enum class HeadKind { attention_pool, average_pool, mlp };
enum class Regime { lp, full_single, full_dual, partial_single };

std::string to_string(HeadKind k);
std::string to_string(Regime r);
HeadKind head_kind_from_string(const std::string& s);
Regime regime_from_string(const std::string& s);

struct HeadConfig {
  HeadKind kind = HeadKind::mlp;
  int classes = 2;
  int mlp_hidden = 64;

  bool operator==(const HeadConfig&) const = default;
};

void validate(const HeadConfig& cfg);

struct StageSchedule {
  int epochs = 10;
  double lr = 1e-3;
};

struct AdaptationConfig {
  Regime regime = Regime::lp;
  int k = 1;                        // trailing encoder layers unfrozen in partial_single
  StageSchedule stage1{10, 1e-3};   // head-only stage for lp / full_dual; the only stage otherwise
  StageSchedule stage2{5, 1e-4};    // full_dual second stage
  int batch_size = 8;
  double weight_decay = 0.01;
};

void validate(const AdaptationConfig& cfg, int encoder_layers);

// Parameters live in the backbone's ParameterSet under "head.".
class ClassificationHead {
 public:
  ClassificationHead() = default;
  ClassificationHead(HeadConfig cfg, int dim) : cfg_(cfg), dim_(dim) { validate(cfg_); }

  void init_params(ad::ParameterSet& params, Rng& rng) const;

  // Pooled representation (1 x D, or 1 x hidden for the MLP head's first layer input).
  ad::Var pool(ad::Tape& tape, ad::ParameterSet& params, ad::Var tokens) const;
  // tokens: N x D -> logits 1 x classes.
  ad::Var forward(ad::Tape& tape, ad::ParameterSet& params, ad::Var tokens) const;

  const HeadConfig& config() const { return cfg_; }

 private:
  HeadConfig cfg_;
  int dim_ = 0;
};

// Index of the largest logit; ties go to the lowest class index.
int argmax_lowest(const Eigen::RowVectorXd& logits);

// Pretrained encoder + classification head.
class Classifier {
 public:
  Classifier() = default;
  Classifier(MaskedAutoencoder backbone, HeadConfig head, std::uint64_t seed);
  // Adopts a backbone whose ParameterSet already holds head parameters.
  Classifier(MaskedAutoencoder backbone, HeadConfig head);

  ad::Var logits(ad::Tape& tape, const TokenGrid& grid);
  int predict(const TokenGrid& grid);
  std::vector<int> predict(const std::vector<TokenGrid>& grids);

  MaskedAutoencoder& backbone() { return backbone_; }
  const MaskedAutoencoder& backbone() const { return backbone_; }
  const HeadConfig& head_config() const { return head_.config(); }
  ad::ParameterSet& params() { return backbone_.params(); }
  const ad::ParameterSet& params() const { return backbone_.params(); }

 private:
  MaskedAutoencoder backbone_;
  ClassificationHead head_;
};

// Mean over classes present in `labels` of per-class recall.
double balanced_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

// Majority vote of segment predictions per recording (ties -> lowest class).
struct VotedPredictions {
  std::vector<std::string> recording_ids;
  std::vector<int> predictions;
  std::vector<int> labels;
};
VotedPredictions majority_vote(const std::vector<Recording>& segments, const std::vector<int>& predictions);

struct EvalResult {
  double segment_bacc = 0.0;
  double recording_bacc = 0.0;
  std::vector<int> predictions;
  std::vector<int> labels;
};

struct LabeledGrids {
  std::vector<TokenGrid> grids;
  std::vector<int> labels;
};
LabeledGrids tokenize_labeled(const std::vector<Recording>& segments, const TokenizerConfig& tok, int classes);

EvalResult evaluate(Classifier& clf, const std::vector<Recording>& segments);

struct AdaptEpoch {
  int stage = 1;
  int epoch = 0;
  double train_loss = 0.0;
  double val_segment_bacc = 0.0;
  double val_recording_bacc = 0.0;
};

struct AdaptResult {
  Classifier classifier;                // after the final epoch
  std::vector<Classifier> snapshots;    // one per epoch, in order
  std::vector<AdaptEpoch> history;      // aligned with snapshots
};

// Fits a head (and, per regime, encoder layers) on `train`, evaluating on
// `val` after every epoch. Deterministic in seed.
AdaptResult adapt(const MaskedAutoencoder& pretrained, const std::vector<Recording>& train,
                  const std::vector<Recording>& val, const HeadConfig& head, const AdaptationConfig& cfg,
                  std::uint64_t seed);

// Marks exactly the parameters a regime trains in a given stage (1 or 2).
void apply_trainable_mask(ad::ParameterSet& params, const AdaptationConfig& cfg, int stage, int encoder_layers);

void save_classifier(const Classifier& clf, const std::filesystem::path& path,
                     const nlohmann::json& extra_meta = nlohmann::json::object());
Classifier load_classifier(const std::filesystem::path& path);

}  // namespace prism
