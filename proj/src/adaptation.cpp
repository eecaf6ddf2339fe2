#include "prism/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "prism/checkpoint.hpp"
#include "prism/error.hpp"
#include "prism/optimizer.hpp"
#include "prism/pretrain.hpp"
#include "prism/rng.hpp"

namespace prism {

std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::attention_pool: return "attention_pool";
    case HeadKind::average_pool: return "average_pool";
    case HeadKind::mlp: return "mlp";
  }
  return "?";
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::lp: return "LP";
    case Regime::full_single: return "Full-Single";
    case Regime::full_dual: return "Full-Dual";
    case Regime::partial_single: return "Partial-Single";
  }
  return "?";
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "attention_pool") return HeadKind::attention_pool;
  if (s == "average_pool") return HeadKind::average_pool;
  if (s == "mlp") return HeadKind::mlp;
  fail(ErrorCategory::config, "unknown head kind '" + s + "'");
}

Regime regime_from_string(const std::string& s) {
  if (s == "LP" || s == "lp") return Regime::lp;
  if (s == "Full-Single" || s == "full_single") return Regime::full_single;
  if (s == "Full-Dual" || s == "full_dual") return Regime::full_dual;
  if (s == "Partial-Single" || s == "partial_single") return Regime::partial_single;
  fail(ErrorCategory::config, "unknown adaptation regime '" + s + "'");
}

void validate(const HeadConfig& cfg) {
  if (cfg.classes < 2) fail(ErrorCategory::config, "head: classes must be >= 2");
  if (cfg.kind == HeadKind::mlp && cfg.mlp_hidden < 1) fail(ErrorCategory::config, "head: mlp_hidden must be >= 1");
}

void validate(const AdaptationConfig& cfg, int encoder_layers) {
  if (cfg.regime == Regime::partial_single && (cfg.k < 1 || cfg.k > encoder_layers))
    fail(ErrorCategory::config, "adaptation: k must be in [1, encoder_layers] for Partial-Single");
  if (cfg.stage1.epochs < 0 || cfg.stage2.epochs < 0) fail(ErrorCategory::config, "adaptation: negative epochs");
  if (cfg.batch_size < 1) fail(ErrorCategory::config, "adaptation: batch_size must be >= 1");
}

namespace {
ad::Matrix gaussian(ad::Index rows, ad::Index cols, double sd, Rng& rng) {
  ad::Matrix m(rows, cols);
  for (ad::Index j = 0; j < cols; ++j)
    for (ad::Index i = 0; i < rows; ++i) m(i, j) = sd * standard_normal(rng);
  return m;
}
}  // namespace

void ClassificationHead::init_params(ad::ParameterSet& params, Rng& rng) const {
  const ad::Index d = dim_, c = cfg_.classes;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  switch (cfg_.kind) {
    case HeadKind::attention_pool:
      params.add("head.query", gaussian(1, d, sd, rng));
      params.add("head.Wk", gaussian(d, d, sd, rng));
      params.add("head.Wv", gaussian(d, d, sd, rng));
      [[fallthrough]];
    case HeadKind::average_pool:
      params.add("head.W", gaussian(d, c, sd, rng));
      params.add("head.b", ad::Matrix::Zero(1, c));
      break;
    case HeadKind::mlp:
      params.add("head.W1", gaussian(d, cfg_.mlp_hidden, sd, rng));
      params.add("head.b1", ad::Matrix::Zero(1, cfg_.mlp_hidden));
      params.add("head.W2", gaussian(cfg_.mlp_hidden, c, 1.0 / std::sqrt(static_cast<double>(cfg_.mlp_hidden)), rng));
      params.add("head.b2", ad::Matrix::Zero(1, c));
      break;
  }
}

ad::Var ClassificationHead::pool(ad::Tape& tape, ad::ParameterSet& params, ad::Var tokens) const {
  if (cfg_.kind != HeadKind::attention_pool) return ad::mean_rows(tokens);
  auto keys = ad::matmul(tokens, tape.param(params, "head.Wk"));
  auto values = ad::matmul(tokens, tape.param(params, "head.Wv"));
  auto scores = ad::scale(ad::matmul_nt(tape.param(params, "head.query"), keys),
                          1.0 / std::sqrt(static_cast<double>(dim_)));
  return ad::matmul(ad::softmax_rows(scores), values);
}

ad::Var ClassificationHead::forward(ad::Tape& tape, ad::ParameterSet& params, ad::Var tokens) const {
  auto pooled = pool(tape, params, tokens);
  if (cfg_.kind == HeadKind::mlp) {
    auto h = ad::gelu(ad::add_rowwise(ad::matmul(pooled, tape.param(params, "head.W1")), tape.param(params, "head.b1")));
    return ad::add_rowwise(ad::matmul(h, tape.param(params, "head.W2")), tape.param(params, "head.b2"));
  }
  return ad::add_rowwise(ad::matmul(pooled, tape.param(params, "head.W")), tape.param(params, "head.b"));
}

int argmax_lowest(const Eigen::RowVectorXd& logits) {
  int best = 0;
  for (int i = 1; i < logits.size(); ++i)
    if (logits(i) > logits(best)) best = i;
  return best;
}

Classifier::Classifier(MaskedAutoencoder backbone, HeadConfig head, std::uint64_t seed)
    : backbone_(std::move(backbone)), head_(head, backbone_.config().dim) {
  Rng rng = make_rng(derive_seed(seed, "head-init"));
  head_.init_params(backbone_.params(), rng);
}

Classifier::Classifier(MaskedAutoencoder backbone, HeadConfig head)
    : backbone_(std::move(backbone)), head_(head, backbone_.config().dim) {}

ad::Var Classifier::logits(ad::Tape& tape, const TokenGrid& grid) {
  return head_.forward(tape, backbone_.params(), backbone_.encode_all(tape, grid));
}

int Classifier::predict(const TokenGrid& grid) {
  ad::Tape tape;
  return argmax_lowest(logits(tape, grid).value().row(0));
}

std::vector<int> Classifier::predict(const std::vector<TokenGrid>& grids) {
  // Inference only: avoid recording gradients.
  std::vector<bool> saved;
  for (const auto& p : params()) saved.push_back(p->trainable);
  params().set_all_trainable(false);
  std::vector<int> out;
  out.reserve(grids.size());
  for (const auto& g : grids) out.push_back(predict(g));
  std::size_t i = 0;
  for (auto& p : params()) p->trainable = saved[i++];
  return out;
}

double balanced_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (labels.empty()) fail(ErrorCategory::precondition, "balanced_accuracy: empty input");
  if (predictions.size() != labels.size())
    fail(ErrorCategory::precondition, "balanced_accuracy: predictions and labels differ in length");
  std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // label -> (correct, total)
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) fail(ErrorCategory::precondition, "balanced_accuracy: negative label");
    auto& e = per_class[labels[i]];
    ++e.second;
    if (predictions[i] == labels[i]) ++e.first;
  }
  double sum = 0.0;
  for (const auto& [label, e] : per_class) sum += static_cast<double>(e.first) / static_cast<double>(e.second);
  return sum / static_cast<double>(per_class.size());
}

VotedPredictions majority_vote(const std::vector<Recording>& segments, const std::vector<int>& predictions) {
  require(segments.size() == predictions.size(), "majority_vote: size mismatch");
  std::map<std::string, std::map<int, int>> votes;
  std::map<std::string, int> labels;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto key = segments[i].subject_id + "/" + segments[i].recording_id;
    if (!labels.count(key)) {
      order.push_back(key);
      labels[key] = segments[i].label.value_or(-1);
    }
    ++votes[key][predictions[i]];
  }
  VotedPredictions out;
  for (const auto& key : order) {
    int best = -1, best_count = -1;
    for (const auto& [cls, count] : votes[key])  // ascending class order
      if (count > best_count) {
        best = cls;
        best_count = count;
      }
    out.recording_ids.push_back(key);
    out.predictions.push_back(best);
    out.labels.push_back(labels[key]);
  }
  return out;
}

LabeledGrids tokenize_labeled(const std::vector<Recording>& segments, const TokenizerConfig& tok, int classes) {
  LabeledGrids out;
  out.grids.reserve(segments.size());
  for (const auto& s : segments) {
    if (!s.label) fail(ErrorCategory::data, "segment of " + s.recording_id + " has no label");
    if (*s.label < 0 || *s.label >= classes)
      fail(ErrorCategory::data, "label " + std::to_string(*s.label) + " of " + s.recording_id +
                                    " outside [0, " + std::to_string(classes) + ")");
    out.grids.push_back(patchify(s, tok));
    out.labels.push_back(*s.label);
  }
  return out;
}

EvalResult evaluate(Classifier& clf, const std::vector<Recording>& segments) {
  auto data = tokenize_labeled(segments, clf.backbone().tokenizer(), clf.head_config().classes);
  EvalResult r;
  r.predictions = clf.predict(data.grids);
  r.labels = data.labels;
  r.segment_bacc = balanced_accuracy(r.predictions, r.labels);
  const auto voted = majority_vote(segments, r.predictions);
  r.recording_bacc = balanced_accuracy(voted.predictions, voted.labels);
  return r;
}

void apply_trainable_mask(ad::ParameterSet& params, const AdaptationConfig& cfg, int stage, int encoder_layers) {
  params.set_all_trainable(false);
  params.set_trainable_prefix("head.", true);
  const bool full = cfg.regime == Regime::full_single || (cfg.regime == Regime::full_dual && stage == 2);
  if (full) {
    params.set_trainable_prefix("embed.", true);
    params.set_trainable_prefix("pe.", true);
    params.set_trainable_prefix("enc.", true);
  } else if (cfg.regime == Regime::partial_single) {
    for (int l = encoder_layers - cfg.k; l < encoder_layers; ++l)
      params.set_trainable_prefix(MaskedAutoencoder::encoder_prefix(l), true);
  }
}

namespace {

double run_epoch(Classifier& clf, const LabeledGrids& data, AdamW& opt, double lr, int batch_size, Rng& rng) {
  std::vector<std::size_t> order(data.grids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(batch_size)) {
    const auto hi = std::min(order.size(), lo + static_cast<std::size_t>(batch_size));
    ad::Tape tape;
    std::vector<ad::Var> rows;
    std::vector<int> labels;
    for (std::size_t k = lo; k < hi; ++k) {
      rows.push_back(clf.logits(tape, data.grids[order[k]]));
      labels.push_back(data.labels[order[k]]);
    }
    auto loss = ad::cross_entropy(rows.size() == 1 ? rows.front() : ad::concat_rows(rows), labels);
    if (!std::isfinite(loss.scalar())) fail(ErrorCategory::numeric, "adapt: non-finite loss");
    clf.params().zero_grad();
    tape.backward(loss);
    opt.step(clf.params(), lr);
    total += loss.scalar();
    ++batches;
  }
  return batches ? total / static_cast<double>(batches) : 0.0;
}

}  // namespace

AdaptResult adapt(const MaskedAutoencoder& pretrained, const std::vector<Recording>& train,
                  const std::vector<Recording>& val, const HeadConfig& head, const AdaptationConfig& cfg,
                  std::uint64_t seed) {
  validate(head);
  const int layers = pretrained.config().encoder_layers;
  validate(cfg, layers);
  if (train.empty()) fail(ErrorCategory::data, "adapt: empty training split");
  if (val.empty()) fail(ErrorCategory::data, "adapt: empty validation split");

  const auto& tok = pretrained.tokenizer();
  const auto train_data = tokenize_labeled(train, tok, head.classes);
  tokenize_labeled(val, tok, head.classes);  // label check up front

  AdaptResult res;
  res.classifier = Classifier(pretrained, head, seed);

  std::vector<std::pair<int, StageSchedule>> stages = {{1, cfg.stage1}};
  if (cfg.regime == Regime::full_dual) stages.push_back({2, cfg.stage2});

  for (const auto& [stage, sched] : stages) {
    apply_trainable_mask(res.classifier.params(), cfg, stage, layers);
    AdamW opt({sched.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    std::vector<bool> mask;
    for (const auto& p : res.classifier.params()) mask.push_back(p->trainable);
    for (int e = 0; e < sched.epochs; ++e) {
      Rng rng = make_rng(derive_seed(seed, "adapt-order", static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(e)));
      AdaptEpoch rec;
      rec.stage = stage;
      rec.epoch = e;
      rec.train_loss = run_epoch(res.classifier, train_data, opt, sched.lr, cfg.batch_size, rng);
      const auto ev = evaluate(res.classifier, val);
      // evaluate() preserves flags, but keep the stage mask explicit.
      std::size_t i = 0;
      for (auto& p : res.classifier.params()) p->trainable = mask[i++];
      rec.val_segment_bacc = ev.segment_bacc;
      rec.val_recording_bacc = ev.recording_bacc;
      res.history.push_back(rec);
      res.snapshots.push_back(res.classifier);
    }
  }
  res.classifier.params().set_all_trainable(true);
  for (auto& s : res.snapshots) s.params().set_all_trainable(true);
  return res;
}

void save_classifier(const Classifier& clf, const std::filesystem::path& path, const nlohmann::json& extra_meta) {
  Checkpoint ck;
  ck.meta = extra_meta;
  ck.meta["kind"] = "classifier";
  ck.meta["model"] = to_json(clf.backbone().config());
  ck.meta["tokenizer"] = to_json(clf.backbone().tokenizer());
  ck.meta["pos_encoding"] = to_json(clf.backbone().positional().config());
  ck.meta["head"] = {{"kind", to_string(clf.head_config().kind)},
                     {"classes", clf.head_config().classes},
                     {"mlp_hidden", clf.head_config().mlp_hidden}};
  put_params(ck, clf.params());
  ck.save(path);
}

Classifier load_classifier(const std::filesystem::path& path) {
  auto ck = Checkpoint::load(path);
  if (ck.meta.value("kind", "") != "classifier") fail(ErrorCategory::data, path.string() + " is not a classifier checkpoint");
  auto backbone = model_from_checkpoint(ck);
  const auto all = get_params(ck);
  for (const auto& p : all)
    if (p->name.rfind("head.", 0) == 0) backbone.params().add(p->name, p->value);
  HeadConfig head;
  head.kind = head_kind_from_string(ck.meta.at("head").at("kind").get<std::string>());
  head.classes = ck.meta.at("head").at("classes").get<int>();
  head.mlp_hidden = ck.meta.at("head").at("mlp_hidden").get<int>();
  return Classifier(std::move(backbone), head);
}

}  // namespace prism
