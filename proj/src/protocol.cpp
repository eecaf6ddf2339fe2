#include "prism/protocol.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "prism/error.hpp"
#include "prism/rng.hpp"
#include "prism/signal.hpp"

namespace prism {

std::string to_string(SplitPolicy v) {
  return v == SplitPolicy::subject_level_all ? "subject_level_all" : "subject_test_segment_val";
}
std::string to_string(CheckpointPolicy v) { return v == CheckpointPolicy::best_validation ? "best_validation" : "last"; }
std::string to_string(NormalizationVariant v) {
  return v == NormalizationVariant::pipeline_default ? "pipeline_default" : "per_segment";
}
std::string to_string(ReportingMode v) { return v == ReportingMode::standardized ? "standardized" : "self_selected"; }
std::string to_string(RankMetric v) { return v == RankMetric::validation ? "validation" : "test"; }

SplitPolicy split_policy_from_string(const std::string& s) {
  if (s == "subject_level_all") return SplitPolicy::subject_level_all;
  if (s == "subject_test_segment_val") return SplitPolicy::subject_test_segment_val;
  fail(ErrorCategory::config, "unknown split policy '" + s + "'");
}
CheckpointPolicy checkpoint_policy_from_string(const std::string& s) {
  if (s == "best_validation") return CheckpointPolicy::best_validation;
  if (s == "last") return CheckpointPolicy::last;
  fail(ErrorCategory::config, "unknown checkpoint policy '" + s + "'");
}
NormalizationVariant normalization_from_string(const std::string& s) {
  if (s == "pipeline_default") return NormalizationVariant::pipeline_default;
  if (s == "per_segment" || s == "alternative") return NormalizationVariant::per_segment;
  fail(ErrorCategory::config, "unknown normalization variant '" + s + "'");
}
ReportingMode reporting_mode_from_string(const std::string& s) {
  if (s == "standardized") return ReportingMode::standardized;
  if (s == "self_selected") return ReportingMode::self_selected;
  fail(ErrorCategory::config, "unknown reporting mode '" + s + "'");
}
RankMetric rank_metric_from_string(const std::string& s) {
  if (s == "validation") return RankMetric::validation;
  if (s == "test") return RankMetric::test;
  fail(ErrorCategory::config, "unknown rank metric '" + s + "'");
}

namespace {

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string head_level(const HeadConfig& h) {
  std::string s = to_string(h.kind);
  if (h.kind == HeadKind::mlp) s += "/" + std::to_string(h.mlp_hidden);
  return s;
}

nlohmann::json head_json(const HeadConfig& h) {
  return {{"kind", to_string(h.kind)}, {"classes", h.classes}, {"mlp_hidden", h.mlp_hidden}};
}

HeadConfig head_from(const nlohmann::json& j) {
  HeadConfig h;
  if (j.contains("kind")) h.kind = head_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("classes")) h.classes = j.at("classes").get<int>();
  if (j.contains("mlp_hidden")) h.mlp_hidden = j.at("mlp_hidden").get<int>();
  validate(h);
  return h;
}

}  // namespace

std::string ProtocolConfig::key() const {
  return "split=" + to_string(split) + "|ckpt=" + to_string(checkpoint) + "|seg=" + fmt_g(segment_length_s) +
         "|norm=" + to_string(normalization) + "|head=" + head_level(head) + "|report=" + to_string(reporting);
}

void validate(const ProtocolConfig& cfg) {
  if (!(cfg.segment_length_s > 0.0) || !std::isfinite(cfg.segment_length_s))
    fail(ErrorCategory::config, "protocol: segment_length_s must be positive");
  validate(cfg.head);
}

nlohmann::json to_json(const ProtocolConfig& cfg) {
  return {{"split_policy", to_string(cfg.split)},
          {"checkpoint_policy", to_string(cfg.checkpoint)},
          {"segment_length_s", cfg.segment_length_s},
          {"normalization_variant", to_string(cfg.normalization)},
          {"head", head_json(cfg.head)},
          {"reporting_mode", to_string(cfg.reporting)}};
}

ProtocolConfig protocol_config_from_json(const nlohmann::json& j) {
  ProtocolConfig c;
  c.split = split_policy_from_string(j.at("split_policy").get<std::string>());
  c.checkpoint = checkpoint_policy_from_string(j.at("checkpoint_policy").get<std::string>());
  c.segment_length_s = j.at("segment_length_s").get<double>();
  c.normalization = normalization_from_string(j.at("normalization_variant").get<std::string>());
  c.head = head_from(j.at("head"));
  c.reporting = reporting_mode_from_string(j.at("reporting_mode").get<std::string>());
  validate(c);
  return c;
}

// ---------------------------------------------------------------- splits

Splits make_splits(const std::vector<Recording>& segments, SplitPolicy policy, std::uint64_t seed,
                   const SplitFractions& fr) {
  if (segments.empty()) fail(ErrorCategory::data, "make_splits: empty dataset");
  if (fr.val < 0 || fr.test < 0 || fr.val + fr.test >= 1.0 || fr.segment_val <= 0 || fr.segment_val >= 1)
    fail(ErrorCategory::config, "make_splits: invalid split fractions");

  std::map<std::string, int> subject_label;
  std::vector<std::string> subject_order;
  for (const auto& s : segments) {
    if (s.subject_id.empty()) fail(ErrorCategory::data, "make_splits: segment without subject id");
    if (!s.label) fail(ErrorCategory::data, "make_splits: unlabeled segment in " + s.recording_id);
    if (!subject_label.count(s.subject_id)) {
      subject_label[s.subject_id] = *s.label;
      subject_order.push_back(s.subject_id);
    }
  }
  std::map<int, std::vector<std::string>> by_class;
  for (const auto& [sid, label] : subject_label) by_class[label].push_back(sid);  // sorted by id

  std::set<std::string> test_subjects, val_subjects;
  for (auto& [label, subjects] : by_class) {
    const auto n = subjects.size();
    if (n < 3)
      fail(ErrorCategory::precondition,
           "make_splits: class " + std::to_string(label) + " has " + std::to_string(n) + " subjects, need >= 3");
    Rng rng = make_rng(derive_seed(seed, "split", static_cast<std::uint64_t>(label)));
    for (std::size_t i = n; i > 1; --i) std::swap(subjects[i - 1], subjects[uniform_index(rng, i)]);
    auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fr.test * static_cast<double>(n))));
    auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fr.val * static_cast<double>(n))));
    n_test = std::min(n_test, n - 2);
    n_val = std::min(n_val, n - n_test - 1);
    for (std::size_t i = 0; i < n_test; ++i) test_subjects.insert(subjects[i]);
    for (std::size_t i = n_test; i < n_test + n_val; ++i) val_subjects.insert(subjects[i]);
  }

  Splits out;
  std::vector<std::size_t> pool;  // non-test segments
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& sid = segments[i].subject_id;
    if (test_subjects.count(sid))
      out.test.push_back(segments[i]);
    else if (policy == SplitPolicy::subject_level_all)
      (val_subjects.count(sid) ? out.val : out.train).push_back(segments[i]);
    else
      pool.push_back(i);
  }
  if (policy == SplitPolicy::subject_test_segment_val) {
    const auto n_val = static_cast<std::size_t>(std::llround(fr.segment_val * static_cast<double>(pool.size())));
    Rng rng = make_rng(derive_seed(seed, "split-segments"));
    std::vector<std::size_t> perm = pool;
    for (std::size_t i = 0; i < n_val && i + 1 < perm.size(); ++i)
      std::swap(perm[i], perm[i + uniform_index(rng, perm.size() - i)]);
    std::vector<bool> is_val(segments.size(), false);
    for (std::size_t i = 0; i < n_val; ++i) is_val[perm[i]] = true;
    for (auto i : pool) (is_val[i] ? out.val : out.train).push_back(segments[i]);
  }

  auto check = [&](const std::vector<Recording>& part, const char* name) {
    std::set<int> present;
    for (const auto& s : part) present.insert(*s.label);
    for (const auto& [label, subjects] : by_class)
      if (!present.count(label))
        fail(ErrorCategory::data, "make_splits: class " + std::to_string(label) + " absent from " + name + " split");
  };
  check(out.train, "train");
  check(out.val, "validation");
  check(out.test, "test");
  return out;
}

std::size_t select_checkpoint(const std::vector<double>& trace, CheckpointPolicy policy, std::size_t n) {
  if (n == 0) fail(ErrorCategory::precondition, "select_checkpoint: empty checkpoint sequence");
  if (trace.size() != n)
    fail(ErrorCategory::precondition, "select_checkpoint: trace has " + std::to_string(trace.size()) +
                                          " entries for " + std::to_string(n) + " checkpoints");
  if (policy == CheckpointPolicy::last) return n - 1;
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (trace[i] > trace[best]) best = i;
  return best;
}

Recording zscore_segment(const Recording& seg) {
  Recording out = seg;
  const auto n = seg.n_samples();
  for (std::size_t c = 0; c < seg.n_channels(); ++c) {
    auto row = out.signal.row(c);
    double mean = 0.0;
    for (float v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (float v : row) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (auto& v : row) v = sd > 0.0 ? static_cast<float>((v - mean) / sd) : 0.0f;
  }
  return out;
}

std::vector<Recording> segment_dataset(const std::vector<Recording>& recordings, double segment_length_s,
                                       NormalizationVariant normalization) {
  std::vector<Recording> out;
  for (const auto& rec : recordings)
    for (auto& s : segment(rec, segment_length_s, segment_length_s))
      out.push_back(normalization == NormalizationVariant::per_segment ? zscore_segment(s) : std::move(s));
  return out;
}

// ---------------------------------------------------------------- models

std::vector<FitOptions> ModelSpec::grid(const HeadConfig& head) const { return {{head, Regime::lp, "default"}}; }

PrismModelSpec::PrismModelSpec(std::shared_ptr<const MaskedAutoencoder> pretrained, AdaptationConfig adaptation,
                               std::vector<HeadKind> grid_heads, std::vector<Regime> grid_regimes, std::string name)
    : pretrained_(std::move(pretrained)),
      adaptation_(adaptation),
      grid_heads_(std::move(grid_heads)),
      grid_regimes_(std::move(grid_regimes)),
      name_(std::move(name)) {
  require(pretrained_ != nullptr, "PrismModelSpec: null checkpoint");
  validate(adaptation_, pretrained_->config().encoder_layers);
}

std::vector<FitOptions> PrismModelSpec::grid(const HeadConfig& head) const {
  std::vector<FitOptions> out = {{head, adaptation_.regime, to_string(head.kind) + "/" + to_string(adaptation_.regime)}};
  auto heads = grid_heads_.empty() ? std::vector<HeadKind>{head.kind} : grid_heads_;
  auto regimes = grid_regimes_.empty() ? std::vector<Regime>{adaptation_.regime} : grid_regimes_;
  for (auto k : heads)
    for (auto r : regimes) {
      if (k == head.kind && r == adaptation_.regime) continue;
      HeadConfig h = head;
      h.kind = k;
      out.push_back({h, r, to_string(k) + "/" + to_string(r)});
    }
  return out;
}

FitResult PrismModelSpec::fit(const std::vector<Recording>& train, const std::vector<Recording>& val,
                              const FitOptions& options, std::uint64_t seed) const {
  AdaptationConfig cfg = adaptation_;
  cfg.regime = options.regime;
  auto res = adapt(*pretrained_, train, val, options.head, cfg, seed);
  FitResult out;
  for (std::size_t i = 0; i < res.snapshots.size(); ++i) {
    auto clf = std::make_shared<Classifier>(std::move(res.snapshots[i]));
    out.snapshots.push_back([clf](const std::vector<Recording>& segs) {
      std::vector<TokenGrid> grids;
      grids.reserve(segs.size());
      for (const auto& s : segs) grids.push_back(patchify(s, clf->backbone().tokenizer()));
      return clf->predict(grids);
    });
    out.val_trace.push_back(res.history[i].val_segment_bacc);
  }
  return out;
}

// ---------------------------------------------------------------- cells

namespace {

std::pair<double, double> mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::vector<int> labels_of(const std::vector<Recording>& segs) {
  std::vector<int> y;
  y.reserve(segs.size());
  for (const auto& s : segs) y.push_back(s.label.value_or(-1));
  return y;
}

CellSeedResult run_once(const ModelSpec& model, const Splits& splits, const ProtocolConfig& cfg,
                        const FitOptions& opt, std::uint64_t seed) {
  auto fit = model.fit(splits.train, splits.val, opt, derive_seed(seed, "fit"));
  if (fit.snapshots.empty()) fail(ErrorCategory::precondition, "model produced no checkpoints");
  if (fit.val_trace.empty()) {
    const auto y = labels_of(splits.val);
    for (const auto& snap : fit.snapshots) fit.val_trace.push_back(balanced_accuracy(snap(splits.val), y));
  }
  CellSeedResult r;
  r.seed = seed;
  r.n_checkpoints = fit.snapshots.size();
  r.selected = select_checkpoint(fit.val_trace, cfg.checkpoint, fit.snapshots.size());
  r.val_bacc = fit.val_trace[r.selected];
  const auto pred = fit.snapshots[r.selected](splits.test);
  r.test_bacc = balanced_accuracy(pred, labels_of(splits.test));
  const auto voted = majority_vote(splits.test, pred);
  r.test_recording_bacc = balanced_accuracy(voted.predictions, voted.labels);
  r.fit_label = opt.label;
  r.n_train = splits.train.size();
  r.n_val = splits.val.size();
  r.n_test = splits.test.size();
  return r;
}

}  // namespace

CellResult run_cell(const ModelSpec& model, const std::vector<Recording>& recordings, const ProtocolConfig& cfg,
                    const std::vector<std::uint64_t>& seeds, const SplitFractions& fractions) {
  const std::string where = "cell " + cfg.key() + ", model " + model.name() + ": ";
  try {
    validate(cfg);
    if (seeds.empty()) fail(ErrorCategory::precondition, "no seeds");
    for (const auto& rec : recordings)
      if (rec.duration_s() + 1e-9 < cfg.segment_length_s)
        fail(ErrorCategory::precondition, "recording " + rec.recording_id + " is shorter than the segment length");
    const auto segs = segment_dataset(recordings, cfg.segment_length_s, cfg.normalization);

    auto options = model.grid(cfg.head);
    if (cfg.reporting == ReportingMode::standardized) options.resize(1);

    CellResult out;
    std::vector<double> vals, tests;
    for (auto seed : seeds) {
      const auto splits = make_splits(segs, cfg.split, derive_seed(seed, "split"), fractions);
      std::optional<CellSeedResult> best;
      for (const auto& opt : options) {
        auto r = run_once(model, splits, cfg, opt, seed);
        if (!best || r.test_bacc > best->test_bacc) best = r;
      }
      vals.push_back(best->val_bacc);
      tests.push_back(best->test_bacc);
      out.seeds.push_back(*best);
    }
    std::tie(out.mean_val, out.sd_val) = mean_sd(vals);
    std::tie(out.mean_test, out.sd_test) = mean_sd(tests);
    return out;
  } catch (const Error& e) {
    throw Error(e.category(), where + e.what());
  }
}

// ---------------------------------------------------------------- grid

namespace {

constexpr std::array<const char*, 6> kFactors = {"split", "checkpoint", "segment_length_s",
                                                 "normalization", "head", "reporting"};
using LevelIndex = std::array<std::size_t, 6>;

std::array<std::size_t, 6> level_counts(const FactorGrid& g) {
  return {g.split.size(), g.checkpoint.size(), g.segment_length_s.size(),
          g.normalization.size(), g.head.size(), g.reporting.size()};
}

ProtocolConfig cell_at(const FactorGrid& g, const LevelIndex& i) {
  ProtocolConfig c;
  c.split = g.split[i[0]];
  c.checkpoint = g.checkpoint[i[1]];
  c.segment_length_s = g.segment_length_s[i[2]];
  c.normalization = g.normalization[i[3]];
  c.head = g.head[i[4]];
  c.reporting = g.reporting[i[5]];
  return c;
}

std::string level_name(const FactorGrid& g, std::size_t factor, std::size_t level) {
  switch (factor) {
    case 0: return to_string(g.split[level]);
    case 1: return to_string(g.checkpoint[level]);
    case 2: return fmt_g(g.segment_length_s[level]);
    case 3: return to_string(g.normalization[level]);
    case 4: return head_level(g.head[level]);
    default: return to_string(g.reporting[level]);
  }
}

std::vector<LevelIndex> all_indices(const FactorGrid& g) {
  const auto counts = level_counts(g);
  std::vector<LevelIndex> out;
  LevelIndex i{};
  for (;;) {
    out.push_back(i);
    std::size_t f = 6;
    while (f > 0) {
      --f;
      if (++i[f] < counts[f]) break;
      i[f] = 0;
      if (f == 0) return out;
    }
  }
}

}  // namespace

std::size_t FactorGrid::size() const {
  const auto c = level_counts(*this);
  std::size_t n = 1;
  for (auto k : c) n *= k;
  return n;
}

std::vector<ProtocolConfig> FactorGrid::cells() const {
  validate(*this);
  std::vector<ProtocolConfig> out;
  for (const auto& i : all_indices(*this)) out.push_back(cell_at(*this, i));
  return out;
}

ProtocolConfig FactorGrid::baseline() const {
  validate(*this);
  return cell_at(*this, LevelIndex{});
}

void validate(const FactorGrid& g) {
  const auto counts = level_counts(g);
  for (std::size_t f = 0; f < 6; ++f) {
    if (counts[f] == 0) fail(ErrorCategory::config, std::string("factor grid: no levels for ") + kFactors[f]);
    std::set<std::string> seen;
    for (std::size_t l = 0; l < counts[f]; ++l)
      if (!seen.insert(level_name(g, f, l)).second)
        fail(ErrorCategory::config, std::string("factor grid: duplicate level in ") + kFactors[f]);
  }
  for (double s : g.segment_length_s)
    if (!(s > 0.0)) fail(ErrorCategory::config, "factor grid: segment lengths must be positive");
  for (const auto& h : g.head) validate(h);
}

nlohmann::json to_json(const FactorGrid& g) {
  nlohmann::json j;
  for (auto v : g.split) j["split_policy"].push_back(to_string(v));
  for (auto v : g.checkpoint) j["checkpoint_policy"].push_back(to_string(v));
  j["segment_length_s"] = g.segment_length_s;
  for (auto v : g.normalization) j["normalization_variant"].push_back(to_string(v));
  for (const auto& h : g.head) j["head"].push_back(head_json(h));
  for (auto v : g.reporting) j["reporting_mode"].push_back(to_string(v));
  return j;
}

FactorGrid factor_grid_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"split_policy",          "checkpoint_policy", "segment_length_s",
                                              "normalization_variant", "head",              "reporting_mode"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) fail(ErrorCategory::config, "protocol grid: unknown key '" + k + "'");
  FactorGrid g;
  auto list = [&](const char* key, auto& dst, auto conv) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    if (!a.is_array()) fail(ErrorCategory::config, std::string("protocol grid: ") + key + " must be a list");
    dst.clear();
    for (const auto& e : a) dst.push_back(conv(e));
  };
  list("split_policy", g.split, [](const nlohmann::json& e) { return split_policy_from_string(e.get<std::string>()); });
  list("checkpoint_policy", g.checkpoint,
       [](const nlohmann::json& e) { return checkpoint_policy_from_string(e.get<std::string>()); });
  list("segment_length_s", g.segment_length_s, [](const nlohmann::json& e) { return e.get<double>(); });
  list("normalization_variant", g.normalization,
       [](const nlohmann::json& e) { return normalization_from_string(e.get<std::string>()); });
  list("head", g.head, [](const nlohmann::json& e) { return head_from(e); });
  list("reporting_mode", g.reporting,
       [](const nlohmann::json& e) { return reporting_mode_from_string(e.get<std::string>()); });
  validate(g);
  return g;
}

// ---------------------------------------------------------------- report

double SweepReport::value(const std::string& cell, const std::string& model) const {
  const auto& r = cells.at(cell).at(model);
  return metric == RankMetric::validation ? r.mean_val : r.mean_test;
}

bool SweepReport::complete(const std::string& cell) const {
  auto it = cells.find(cell);
  if (it == cells.end()) return false;
  for (const auto& m : models)
    if (!it->second.count(m)) return false;
  return true;
}

void summarize(SweepReport& rep, const FactorGrid& grid) {
  rep.rankings.clear();
  rep.reversal_pairs.clear();
  rep.factor_deltas.clear();
  rep.interaction_residuals.clear();
  rep.max_discrepancy_pp = 0.0;

  for (const auto& [cell, results] : rep.cells) {
    if (!rep.complete(cell)) continue;
    auto order = rep.models;
    std::sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
      const double va = rep.value(cell, a), vb = rep.value(cell, b);
      if (va != vb) return va > vb;
      return a < b;
    });
    rep.rankings[cell] = order;
  }

  for (auto a = rep.rankings.begin(); a != rep.rankings.end(); ++a)
    for (auto b = std::next(a); b != rep.rankings.end(); ++b) {
      auto pos = [](const std::vector<std::string>& r, const std::string& m) {
        return std::find(r.begin(), r.end(), m) - r.begin();
      };
      for (std::size_t i = 0; i < rep.models.size(); ++i)
        for (std::size_t k = i + 1; k < rep.models.size(); ++k) {
          const auto& m1 = rep.models[i];
          const auto& m2 = rep.models[k];
          const bool first_a = pos(a->second, m1) < pos(a->second, m2);
          const bool first_b = pos(b->second, m1) < pos(b->second, m2);
          if (first_a != first_b)
            rep.reversal_pairs.push_back(first_a ? ReversalPair{a->first, b->first, m1, m2}
                                                 : ReversalPair{a->first, b->first, m2, m1});
        }
    }

  for (const auto& m : rep.models) {
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (const auto& [cell, results] : rep.cells) {
      if (!results.count(m)) continue;
      const double v = rep.value(cell, m);
      lo = any ? std::min(lo, v) : v;
      hi = any ? std::max(hi, v) : v;
      any = true;
    }
    if (any) rep.max_discrepancy_pp = std::max(rep.max_discrepancy_pp, 100.0 * (hi - lo));
  }

  // One-factor-at-a-time deltas against the baseline cell, and what the
  // additive model built from them misses in every other cell.
  rep.baseline_cell = grid.baseline().key();
  const auto counts = level_counts(grid);
  std::map<std::pair<std::size_t, std::size_t>, std::map<std::string, double>> delta;
  for (std::size_t f = 0; f < 6; ++f)
    for (std::size_t l = 1; l < counts[f]; ++l) {
      LevelIndex idx{};
      idx[f] = l;
      const auto key = cell_at(grid, idx).key();
      FactorDelta fd{kFactors[f], level_name(grid, f, l), key, {}};
      for (const auto& m : rep.models) {
        if (!rep.cells.count(key) || !rep.cells.at(key).count(m) || !rep.cells.count(rep.baseline_cell) ||
            !rep.cells.at(rep.baseline_cell).count(m))
          continue;
        fd.delta[m] = rep.value(key, m) - rep.value(rep.baseline_cell, m);
        delta[{f, l}][m] = fd.delta[m];
      }
      rep.factor_deltas.push_back(fd);
    }
  for (const auto& idx : all_indices(grid)) {
    const auto key = cell_at(grid, idx).key();
    if (!rep.cells.count(key) || !rep.cells.count(rep.baseline_cell)) continue;
    for (const auto& m : rep.models) {
      if (!rep.cells.at(key).count(m) || !rep.cells.at(rep.baseline_cell).count(m)) continue;
      double predicted = rep.value(rep.baseline_cell, m);
      bool ok = true;
      for (std::size_t f = 0; f < 6 && ok; ++f) {
        if (idx[f] == 0) continue;
        auto it = delta.find({f, idx[f]});
        if (it == delta.end() || !it->second.count(m))
          ok = false;
        else
          predicted += it->second.at(m);
      }
      if (ok) rep.interaction_residuals[key][m] = rep.value(key, m) - predicted;
    }
  }
}

SweepReport sweep(const std::vector<const ModelSpec*>& models, const std::vector<Recording>& recordings,
                  const FactorGrid& grid, const std::vector<std::uint64_t>& seeds, const SweepOptions& options) {
  if (models.empty()) fail(ErrorCategory::precondition, "sweep: no models");
  const auto cells = grid.cells();
  if (cells.empty()) fail(ErrorCategory::precondition, "sweep: empty grid");

  SweepReport rep;
  rep.metric = options.metric;
  for (const auto* m : models) {
    if (std::find(rep.models.begin(), rep.models.end(), m->name()) != rep.models.end())
      fail(ErrorCategory::config, "sweep: duplicate model name " + m->name());
    rep.models.push_back(m->name());
  }
  for (const auto& c : cells) rep.configs[c.key()] = c;

  struct Job {
    std::size_t cell, model;
    std::optional<CellResult> result;
    std::string error;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (std::size_t m = 0; m < models.size(); ++m) jobs.push_back({c, m, std::nullopt, {}});

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      auto& job = jobs[i];
      try {
        job.result = run_cell(*models[job.model], recordings, cells[job.cell], seeds, options.fractions);
      } catch (const std::exception& e) {
        job.error = e.what();
      }
    }
  };
  const auto n_workers = std::max<std::size_t>(1, std::min<std::size_t>(options.workers, jobs.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (auto& job : jobs) {
    const auto key = cells[job.cell].key();
    const auto& name = rep.models[job.model];
    if (job.result)
      rep.cells[key][name] = std::move(*job.result);
    else
      rep.failures[key][name] = job.error;
  }
  summarize(rep, grid);
  return rep;
}

// ---------------------------------------------------------------- serialization

nlohmann::json to_json(const SweepReport& rep) {
  nlohmann::json j = {{"format", "prism-sweep-report"},
                      {"version", 1},
                      {"metric", to_string(rep.metric)},
                      {"models", rep.models},
                      {"baseline_cell", rep.baseline_cell},
                      {"max_discrepancy_pp", rep.max_discrepancy_pp}};
  j["cells"] = nlohmann::json::array();
  for (const auto& [key, cfg] : rep.configs) {
    nlohmann::json c = {{"key", key}, {"config", to_json(cfg)}};
    c["results"] = nlohmann::json::object();
    if (rep.cells.count(key))
      for (const auto& [model, r] : rep.cells.at(key)) {
        nlohmann::json seeds = nlohmann::json::array();
        for (const auto& s : r.seeds)
          seeds.push_back({{"seed", s.seed},
                           {"val_bacc", s.val_bacc},
                           {"test_bacc", s.test_bacc},
                           {"test_recording_bacc", s.test_recording_bacc},
                           {"selected", s.selected},
                           {"n_checkpoints", s.n_checkpoints},
                           {"fit", s.fit_label},
                           {"n_train", s.n_train},
                           {"n_val", s.n_val},
                           {"n_test", s.n_test}});
        c["results"][model] = {{"mean_val", r.mean_val}, {"sd_val", r.sd_val},   {"mean_test", r.mean_test},
                               {"sd_test", r.sd_test},   {"seeds", seeds}};
      }
    if (rep.failures.count(key)) c["failures"] = rep.failures.at(key);
    j["cells"].push_back(c);
  }
  j["rankings"] = rep.rankings;
  j["reversal_pairs"] = nlohmann::json::array();
  for (const auto& p : rep.reversal_pairs)
    j["reversal_pairs"].push_back({{"cell_a", p.cell_a}, {"cell_b", p.cell_b}, {"model_1", p.model_1}, {"model_2", p.model_2}});
  j["factor_deltas"] = nlohmann::json::array();
  for (const auto& d : rep.factor_deltas)
    j["factor_deltas"].push_back({{"factor", d.factor}, {"level", d.level}, {"cell", d.cell}, {"delta", d.delta}});
  j["interaction_residuals"] = rep.interaction_residuals;
  return j;
}

SweepReport sweep_report_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "prism-sweep-report") fail(ErrorCategory::data, "not a sweep report");
    if (j.value("version", 0) != 1) fail(ErrorCategory::data, "unsupported sweep report version");
    SweepReport rep;
    rep.metric = rank_metric_from_string(j.at("metric").get<std::string>());
    rep.models = j.at("models").get<std::vector<std::string>>();
    rep.baseline_cell = j.at("baseline_cell").get<std::string>();
    rep.max_discrepancy_pp = j.at("max_discrepancy_pp").get<double>();
    for (const auto& c : j.at("cells")) {
      const auto key = c.at("key").get<std::string>();
      rep.configs[key] = protocol_config_from_json(c.at("config"));
      for (const auto& [model, r] : c.at("results").items()) {
        CellResult cr;
        cr.mean_val = r.at("mean_val").get<double>();
        cr.sd_val = r.at("sd_val").get<double>();
        cr.mean_test = r.at("mean_test").get<double>();
        cr.sd_test = r.at("sd_test").get<double>();
        for (const auto& s : r.at("seeds")) {
          CellSeedResult sr;
          sr.seed = s.at("seed").get<std::uint64_t>();
          sr.val_bacc = s.at("val_bacc").get<double>();
          sr.test_bacc = s.at("test_bacc").get<double>();
          sr.test_recording_bacc = s.at("test_recording_bacc").get<double>();
          sr.selected = s.at("selected").get<std::size_t>();
          sr.n_checkpoints = s.at("n_checkpoints").get<std::size_t>();
          sr.fit_label = s.at("fit").get<std::string>();
          sr.n_train = s.at("n_train").get<std::size_t>();
          sr.n_val = s.at("n_val").get<std::size_t>();
          sr.n_test = s.at("n_test").get<std::size_t>();
          cr.seeds.push_back(sr);
        }
        rep.cells[key][model] = cr;
      }
      if (c.contains("failures"))
        rep.failures[key] = c.at("failures").get<std::map<std::string, std::string>>();
    }
    rep.rankings = j.at("rankings").get<std::map<std::string, std::vector<std::string>>>();
    for (const auto& p : j.at("reversal_pairs"))
      rep.reversal_pairs.push_back({p.at("cell_a").get<std::string>(), p.at("cell_b").get<std::string>(),
                                    p.at("model_1").get<std::string>(), p.at("model_2").get<std::string>()});
    for (const auto& d : j.at("factor_deltas"))
      rep.factor_deltas.push_back({d.at("factor").get<std::string>(), d.at("level").get<std::string>(),
                                   d.at("cell").get<std::string>(), d.at("delta").get<std::map<std::string, double>>()});
    rep.interaction_residuals =
        j.at("interaction_residuals").get<std::map<std::string, std::map<std::string, double>>>();
    return rep;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::data, std::string("malformed sweep report: ") + e.what());
  }
}

namespace {
std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}
std::string pp(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f", 100.0 * v);
  return buf;
}
}  // namespace

std::string render_markdown(const SweepReport& rep) {
  if (rep.configs.empty()) return "No cells in report.\n";
  std::ostringstream o;
  o << "# Protocol sweep\n\n";
  o << "Ranking metric: " << to_string(rep.metric) << " balanced accuracy (mean over seeds, %).\n\n";
  o << "| cell |";
  for (const auto& m : rep.models) o << " " << m << " val | " << m << " test |";
  o << " ranking |\n|---|";
  for (std::size_t i = 0; i < rep.models.size(); ++i) o << "---|---|";
  o << "---|\n";
  for (const auto& [key, cfg] : rep.configs) {
    o << "| `" << key << "` |";
    for (const auto& m : rep.models) {
      if (rep.cells.count(key) && rep.cells.at(key).count(m)) {
        const auto& r = rep.cells.at(key).at(m);
        o << " " << pct(r.mean_val) << " ± " << pct(r.sd_val) << " | " << pct(r.mean_test) << " ± " << pct(r.sd_test)
          << " |";
      } else {
        o << " failed | failed |";
      }
    }
    o << " ";
    if (rep.rankings.count(key)) {
      const auto& r = rep.rankings.at(key);
      for (std::size_t i = 0; i < r.size(); ++i) o << (i ? " > " : "") << r[i];
    }
    o << " |\n";
  }
  o << "\nMax discrepancy across cells: " << std::fixed;
  o.precision(1);
  o << rep.max_discrepancy_pp << " pp\n\n";

  o << "## Ranking reversals (" << rep.reversal_pairs.size() << ")\n\n";
  for (const auto& p : rep.reversal_pairs)
    o << "- " << p.model_1 << " above " << p.model_2 << " in `" << p.cell_a << "`, below in `" << p.cell_b << "`\n";
  if (rep.reversal_pairs.empty()) o << "none\n";

  o << "\n## One-factor deltas vs `" << rep.baseline_cell << "` (pp)\n\n| factor | level |";
  for (const auto& m : rep.models) o << " " << m << " |";
  o << "\n|---|---|";
  for (std::size_t i = 0; i < rep.models.size(); ++i) o << "---|";
  o << "\n";
  for (const auto& d : rep.factor_deltas) {
    o << "| " << d.factor << " | " << d.level << " |";
    for (const auto& m : rep.models) o << " " << (d.delta.count(m) ? pp(d.delta.at(m)) : std::string("n/a")) << " |";
    o << "\n";
  }
  if (rep.factor_deltas.empty()) o << "| (single-level grid) | |\n";

  o << "\n## Interaction residuals (pp)\n\n";
  bool any = false;
  for (const auto& [key, per_model] : rep.interaction_residuals)
    for (const auto& [m, v] : per_model)
      if (std::abs(v) > 1e-12) {
        o << "- `" << key << "` " << m << ": " << pp(v) << "\n";
        any = true;
      }
  if (!any) o << "none (additive)\n";

  if (!rep.failures.empty()) {
    o << "\n## Failures\n\n";
    for (const auto& [key, per_model] : rep.failures)
      for (const auto& [m, msg] : per_model) o << "- `" << key << "` " << m << ": " << msg << "\n";
  }
  return o.str();
}

std::vector<std::string> write_delta_plots(const SweepReport& rep, const std::string& directory) {
  std::filesystem::create_directories(directory);
  std::map<std::string, std::vector<const FactorDelta*>> by_factor;
  for (const auto& d : rep.factor_deltas) by_factor[d.factor].push_back(&d);

  static const char* colors[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"};
  std::vector<std::string> written;
  for (const auto& [factor, deltas] : by_factor) {
    double extent = 1e-3;
    for (const auto* d : deltas)
      for (const auto& [m, v] : d->delta) extent = std::max(extent, std::abs(v));
    const int bar_w = 24, group_gap = 30, left = 60, top = 40, plot_h = 240;
    const int n_models = static_cast<int>(rep.models.size());
    const int group_w = n_models * bar_w + group_gap;
    const int width = left + static_cast<int>(deltas.size()) * group_w + 160;
    const int height = top + plot_h + 60;
    const double mid = top + plot_h / 2.0;
    const double scale = (plot_h / 2.0 - 10) / extent;

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << factor << ": delta vs baseline ("
      << to_string(rep.metric) << ", pp)</text>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << mid << "\" x2=\"" << width - 150 << "\" y2=\"" << mid
      << "\" stroke=\"black\"/>\n";
    char lab[64];
    std::snprintf(lab, sizeof lab, "%+.1f", 100.0 * extent);
    s << "<text x=\"5\" y=\"" << top + 14 << "\">" << lab << "</text>\n";
    std::snprintf(lab, sizeof lab, "%+.1f", -100.0 * extent);
    s << "<text x=\"5\" y=\"" << top + plot_h - 4 << "\">" << lab << "</text>\n";
    for (std::size_t g = 0; g < deltas.size(); ++g) {
      const int gx = left + static_cast<int>(g) * group_w + group_gap / 2;
      for (int m = 0; m < n_models; ++m) {
        const auto& name = rep.models[static_cast<std::size_t>(m)];
        if (!deltas[g]->delta.count(name)) continue;
        const double v = deltas[g]->delta.at(name);
        const double h = std::abs(v) * scale;
        const double y = v >= 0 ? mid - h : mid;
        s << "<rect x=\"" << gx + m * bar_w << "\" y=\"" << y << "\" width=\"" << bar_w - 4 << "\" height=\"" << h
          << "\" fill=\"" << colors[m % 6] << "\"/>\n";
      }
      s << "<text x=\"" << gx << "\" y=\"" << top + plot_h + 20 << "\">" << deltas[g]->level << "</text>\n";
    }
    for (int m = 0; m < n_models; ++m) {
      const int y = top + 10 + m * 18;
      s << "<rect x=\"" << width - 140 << "\" y=\"" << y << "\" width=\"12\" height=\"12\" fill=\"" << colors[m % 6]
        << "\"/><text x=\"" << width - 122 << "\" y=\"" << y + 11 << "\">" << rep.models[static_cast<std::size_t>(m)]
        << "</text>\n";
    }
    s << "</svg>\n";
    const auto path = (std::filesystem::path(directory) / ("delta_" + factor + ".svg")).string();
    std::ofstream f(path);
    if (!f) fail(ErrorCategory::io, "cannot write " + path);
    f << s.str();
    written.push_back(path);
  }
  return written;
}

}  // namespace prism
