#include "prism/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "prism/checkpoint.hpp"
#include "prism/config.hpp"
#include "prism/error.hpp"
#include "prism/rng.hpp"

namespace prism {

BatchLoss batch_loss(ad::Tape& tape, MaskedAutoencoder& model, const std::vector<const TokenGrid*>& grids,
                     const std::vector<MaskPlan>& plans) {
  require(!grids.empty() && grids.size() == plans.size(), "batch_loss: need one plan per grid");
  std::vector<ad::Var> pri, sec;
  std::size_t n_masked = plans.front().masked.size();
  for (std::size_t i = 0; i < grids.size(); ++i) {
    if (plans[i].masked.empty()) fail(ErrorCategory::precondition, "batch_loss: empty mask set");
    auto f = model.forward_sample(tape, *grids[i], plans[i]);
    pri.push_back(f.l_pri);
    sec.push_back(f.l_sec);
  }
  const double inv = 1.0 / static_cast<double>(grids.size());
  auto mean = [&](const std::vector<ad::Var>& v) {
    return v.size() == 1 ? v.front() : ad::scale(ad::sum_all(ad::concat_rows(v)), inv);
  };
  BatchLoss out;
  out.l_pri = mean(pri);
  out.l_sec = mean(sec);
  const double lambda = model.config().lambda_aux;
  out.total = ad::add(out.l_pri, ad::scale(out.l_sec, lambda));
  out.report = total_loss(out.l_pri.scalar(), out.l_sec.scalar(), lambda, n_masked);
  out.report.l_total = out.total.scalar();
  return out;
}

nlohmann::json pretrain_fingerprint(const ModelConfig& model, const TokenizerConfig& tok, const PosEncConfig& pe,
                                    const MaskConfig& mask, const PretrainConfig& cfg) {
  auto m = to_json(mask);
  m.erase("rng_seed");
  return {{"model", to_json(model)},
          {"tokenizer", to_json(tok)},
          {"pos_encoding", to_json(pe)},
          {"mask", m},
          {"pretrain",
           {{"epochs", cfg.epochs},
            {"batch_size", cfg.batch_size},
            {"optimizer", to_json(cfg.optimizer)},
            {"warmup_steps", cfg.warmup_steps},
            {"min_lr_ratio", cfg.min_lr_ratio},
            {"max_steps", cfg.max_steps},
            {"seed", cfg.seed}}}};
}

namespace {

std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, int epoch) {
  char name[64];
  std::snprintf(name, sizeof name, "epoch-%04d.ckpt", epoch);
  return dir / "checkpoints" / name;
}

std::filesystem::path latest_checkpoint(const std::filesystem::path& dir) {
  std::filesystem::path best;
  const auto ck = dir / "checkpoints";
  if (!std::filesystem::is_directory(ck)) return best;
  for (const auto& e : std::filesystem::directory_iterator(ck)) {
    const auto name = e.path().filename().string();
    if (name.rfind("epoch-", 0) == 0 && e.path().extension() == ".ckpt" && (best.empty() || e.path() > best))
      best = e.path();
  }
  return best;
}

// Keeps only metrics lines for steps < `keep_steps` (drops partial epochs).
void truncate_metrics(const std::filesystem::path& log, long long keep_steps) {
  std::ifstream in(log);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.value("step", -1LL) < keep_steps) keep.push_back(line);
  }
  in.close();
  std::ofstream out(log, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

void write_meta(Checkpoint& ck, const nlohmann::json& fingerprint, const MaskedAutoencoder& model) {
  ck.meta["kind"] = "mae";
  ck.meta["config"] = fingerprint;
  ck.meta["config_hash"] = config_hash(fingerprint);
  ck.meta["model"] = to_json(model.config());
  ck.meta["tokenizer"] = to_json(model.tokenizer());
  ck.meta["pos_encoding"] = to_json(model.positional().config());
}

}  // namespace

void save_model(const MaskedAutoencoder& model, const std::filesystem::path& path, const nlohmann::json& extra_meta) {
  Checkpoint ck;
  ck.meta = extra_meta;
  ck.meta["kind"] = "mae";
  ck.meta["model"] = to_json(model.config());
  ck.meta["tokenizer"] = to_json(model.tokenizer());
  ck.meta["pos_encoding"] = to_json(model.positional().config());
  put_params(ck, model.params());
  ck.save(path);
}

MaskedAutoencoder model_from_checkpoint(const Checkpoint& ck) {
  if (!ck.meta.contains("model") || !ck.meta.contains("tokenizer") || !ck.meta.contains("pos_encoding"))
    fail(ErrorCategory::data, "checkpoint does not contain a model");
  return MaskedAutoencoder(model_config_from_json(ck.meta.at("model")),
                           tokenizer_config_from_json(ck.meta.at("tokenizer")),
                           pos_enc_config_from_json(ck.meta.at("pos_encoding")), get_params(ck));
}

MaskedAutoencoder load_model(const std::filesystem::path& path) { return model_from_checkpoint(Checkpoint::load(path)); }

PretrainResult pretrain(const std::vector<Recording>& segments, const ModelConfig& model_cfg,
                        const TokenizerConfig& tok, const PosEncConfig& pe, const MaskConfig& mask,
                        const PretrainConfig& cfg) {
  if (segments.empty()) fail(ErrorCategory::data, "pretrain: empty dataset");
  if (cfg.epochs < 1 || cfg.batch_size < 1) fail(ErrorCategory::config, "pretrain: epochs and batch_size must be >= 1");
  validate(mask);

  std::vector<TokenGrid> grids;
  grids.reserve(segments.size());
  for (const auto& s : segments) grids.push_back(patchify(s, tok));

  const auto fingerprint = pretrain_fingerprint(model_cfg, tok, pe, mask, cfg);
  const auto hash = config_hash(fingerprint);
  const auto n = static_cast<long long>(grids.size());
  const long long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  long long total_steps = steps_per_epoch * cfg.epochs;
  if (cfg.max_steps > 0) total_steps = std::min(total_steps, cfg.max_steps);
  const CosineSchedule schedule{cfg.warmup_steps, total_steps, cfg.min_lr_ratio};

  PretrainResult res;
  res.model = MaskedAutoencoder(model_cfg, tok, pe, cfg.seed);
  AdamW opt(cfg.optimizer);
  int start_epoch = 0;
  long long step = 0;

  const bool write = !cfg.output_dir.empty();
  const auto metrics_path = cfg.output_dir / "metrics.jsonl";
  if (write && cfg.resume) {
    const auto latest = latest_checkpoint(cfg.output_dir);
    if (!latest.empty()) {
      auto ck = Checkpoint::load(latest);
      if (ck.meta.value("config_hash", "") != hash)
        fail(ErrorCategory::resume, "cannot resume from " + latest.string() + ": config hash " +
                                        ck.meta.value("config_hash", "<none>") + " does not match " + hash);
      res.model = model_from_checkpoint(ck);
      restore_optimizer(ck, opt);
      start_epoch = ck.meta.at("epoch").get<int>();
      step = ck.meta.at("step").get<long long>();
      res.resumed = true;
      truncate_metrics(metrics_path, step);
    }
  }
  if (write) {
    std::filesystem::create_directories(cfg.output_dir / "checkpoints");
    if (!res.resumed) std::ofstream(metrics_path, std::ios::trunc);
  }
  std::ofstream metrics;
  if (write) metrics.open(metrics_path, std::ios::app);

  res.epochs_completed = start_epoch;
  res.steps_completed = step;
  for (int epoch = start_epoch; epoch < cfg.epochs && step < total_steps; ++epoch) {
    std::vector<std::size_t> order(grids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng data_rng = make_rng(derive_seed(cfg.seed, "data", static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(data_rng, i)]);

    for (long long b = 0; b < steps_per_epoch && step < total_steps; ++b) {
      std::vector<const TokenGrid*> batch;
      std::vector<MaskPlan> plans;
      const auto lo = static_cast<std::size_t>(b * cfg.batch_size);
      const auto hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t idx = order[k];
        MaskConfig m = mask;
        m.rng_seed = derive_seed(cfg.seed, "mask", static_cast<std::uint64_t>(epoch), idx);
        batch.push_back(&grids[idx]);
        plans.push_back(plan_mask(grids[idx], m));
      }
      res.model.params().zero_grad();
      ad::Tape tape;
      auto loss = batch_loss(tape, res.model, batch, plans);
      if (!std::isfinite(loss.report.l_total))
        fail(ErrorCategory::numeric, "pretrain diverged: non-finite loss at step " + std::to_string(step));
      tape.backward(loss.total);
      const double lr = cfg.optimizer.lr * schedule.factor(step);
      opt.step(res.model.params(), lr);

      res.steps.push_back({step, epoch, lr, loss.report});
      if (write) {
        nlohmann::json line = {{"step", step},      {"epoch", epoch},
                               {"lr", lr},          {"l_pri", loss.report.l_pri},
                               {"l_sec", loss.report.l_sec}, {"l_total", loss.report.l_total},
                               {"lambda", loss.report.lambda}, {"n_masked", loss.report.n_masked}};
        metrics << line.dump() << '\n';
      }
      ++step;
    }
    res.epochs_completed = epoch + 1;
    res.steps_completed = step;
    if (write) {
      metrics.flush();
      Checkpoint ck;
      write_meta(ck, fingerprint, res.model);
      ck.meta["epoch"] = epoch + 1;
      ck.meta["step"] = step;
      ck.meta["rng"] = {{"root_seed", cfg.seed}, {"streams", {"init", "data", "mask"}}, {"next_epoch", epoch + 1}};
      put_params(ck, res.model.params());
      put_optimizer(ck, opt);
      const auto path = epoch_checkpoint_path(cfg.output_dir, epoch + 1);
      ck.save(path);
      res.checkpoints.push_back(path);
    }
    if (cfg.stop_after_epochs > 0 && res.epochs_completed >= cfg.stop_after_epochs && epoch + 1 < cfg.epochs)
      return res;
  }
  res.finished = true;
  if (write) save_model(res.model, cfg.output_dir / "final.ckpt", {{"config_hash", hash}, {"step", step}});
  return res;
}

}  // namespace prism
