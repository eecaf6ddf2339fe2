#include "prism/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "prism/error.hpp"

namespace prism {

std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::data: return "data";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::resume: return "resume";
    case ErrorCategory::precondition: return "precondition";
  }
  return "unknown";
}

namespace {

using nlohmann::json;

// Reads optional keys from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) fail(ErrorCategory::config, name_ + " must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(ErrorCategory::config, name_ + ": unknown key '" + k + "'");
  }

  template <class T>
  void get(const std::string& key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorCategory::config, name_ + "." + key + " has the wrong type");
    }
  }
  const json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string path(const std::string& key) const { return name_ + "." + key; }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

json range_json(const FrequencyRange& r) { return {r.min, r.max}; }

}  // namespace

// ---------------------------------------------------------------- model-side configs

json to_json(const ModelConfig& c) {
  return {{"dim", c.dim},     {"encoder_layers", c.encoder_layers}, {"decoder_layers", c.decoder_layers},
          {"heads", c.heads}, {"ffn_expansion", c.ffn_expansion},   {"lambda_aux", c.lambda_aux}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  {
    Section s(j, "model");
    s.get("dim", c.dim);
    s.get("encoder_layers", c.encoder_layers);
    s.get("decoder_layers", c.decoder_layers);
    s.get("heads", c.heads);
    s.get("ffn_expansion", c.ffn_expansion);
    s.get("lambda_aux", c.lambda_aux);
  }
  validate(c);
  return c;
}

json to_json(const TokenizerConfig& c) {
  return {{"patch_samples", c.patch_samples},
          {"overlap_samples", c.overlap_samples},
          {"embed_dim", c.embed_dim},
          {"sample_rate_hz", c.sample_rate_hz}};
}

TokenizerConfig tokenizer_config_from_json(const json& j) {
  TokenizerConfig c;
  {
    Section s(j, "tokenizer");
    s.get("patch_samples", c.patch_samples);
    s.get("overlap_samples", c.overlap_samples);
    s.get("embed_dim", c.embed_dim);
    s.get("sample_rate_hz", c.sample_rate_hz);
  }
  validate(c);
  return c;
}

json to_json(const PosEncConfig& c) {
  return {{"n_freq", c.n_freq},
          {"ranges",
           {{"x", range_json(c.ranges[0])},
            {"y", range_json(c.ranges[1])},
            {"z", range_json(c.ranges[2])},
            {"t", range_json(c.ranges[3])}}}};
}

PosEncConfig pos_enc_config_from_json(const json& j) {
  PosEncConfig c;
  {
    Section s(j, "pos_encoding");
    s.get("n_freq", c.n_freq);
    if (const auto* r = s.child("ranges")) {
      Section rs(*r, "pos_encoding.ranges");
      const char* names[] = {"x", "y", "z", "t"};
      for (std::size_t d = 0; d < 4; ++d) {
        std::vector<double> v = {c.ranges[d].min, c.ranges[d].max};
        rs.get(names[d], v);
        if (v.size() != 2) fail(ErrorCategory::config, rs.path(names[d]) + " must be [min, max]");
        c.ranges[d] = {v[0], v[1]};
      }
    }
  }
  validate(c);
  return c;
}

json to_json(const MaskConfig& c) {
  return {{"ratio", c.ratio},
          {"spatial_radius_cm", c.spatial_radius_cm},
          {"temporal_radius_s", c.temporal_radius_s},
          {"rng_seed", c.rng_seed}};
}

MaskConfig mask_config_from_json(const json& j) {
  MaskConfig c;
  {
    Section s(j, "mask");
    s.get("ratio", c.ratio);
    s.get("spatial_radius_cm", c.spatial_radius_cm);
    s.get("temporal_radius_s", c.temporal_radius_s);
    s.get("rng_seed", c.rng_seed);
  }
  validate(c);
  return c;
}

json to_json(const AdamWConfig& c) {
  return {{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}, {"weight_decay", c.weight_decay}};
}

AdamWConfig adamw_config_from_json(const json& j) {
  AdamWConfig c;
  Section s(j, "optimizer");
  s.get("lr", c.lr);
  s.get("beta1", c.beta1);
  s.get("beta2", c.beta2);
  s.get("eps", c.eps);
  s.get("weight_decay", c.weight_decay);
  return c;
}

// ---------------------------------------------------------------- data-side configs

json to_json(const PipelineConfig& c) {
  return {{"target_rate_hz", c.target_rate_hz}, {"bandpass_lo_hz", c.bandpass_lo_hz},
          {"bandpass_hi_hz", c.bandpass_hi_hz}, {"notch_hz", c.notch_hz},
          {"notch_q", c.notch_q},               {"butterworth_order", c.butterworth_order},
          {"clip_sigma", c.clip_sigma},         {"segment_length_s", c.segment_length_s},
          {"stride_s", c.stride_s},             {"allow_upsample", c.allow_upsample}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig c;
  {
    Section s(j, "pipeline");
    s.get("target_rate_hz", c.target_rate_hz);
    s.get("bandpass_lo_hz", c.bandpass_lo_hz);
    s.get("bandpass_hi_hz", c.bandpass_hi_hz);
    s.get("notch_hz", c.notch_hz);
    s.get("notch_q", c.notch_q);
    s.get("butterworth_order", c.butterworth_order);
    s.get("clip_sigma", c.clip_sigma);
    s.get("segment_length_s", c.segment_length_s);
    s.get("stride_s", c.stride_s);
    s.get("allow_upsample", c.allow_upsample);
  }
  validate(c);
  return c;
}

json to_json(const SyntheticTaskSpec& spec) {
  json classes = json::array();
  for (const auto& mix : spec.class_signal_model) {
    json m = json::array();
    for (const auto& o : mix) m.push_back({{"center_hz", o.center_hz}, {"amplitude_uv", o.amplitude_uv}});
    classes.push_back(m);
  }
  return {{"n_subjects", spec.n_subjects},
          {"classes", spec.classes},
          {"recordings_per_subject", spec.recordings_per_subject},
          {"duration_s", spec.duration_s},
          {"sample_rate_hz", spec.sample_rate_hz},
          {"channels", spec.channels},
          {"class_signal_model", classes},
          {"subject_confound_strength", spec.subject_confound_strength},
          {"confound_amplitude_uv", spec.confound_amplitude_uv},
          {"noise_sigma_uv", spec.noise_sigma_uv},
          {"source_tag", spec.source_tag}};
}

SyntheticTaskSpec synthetic_spec_from_json(const json& j) {
  SyntheticTaskSpec spec;
  {
    Section s(j, "synthetic");
    s.get("n_subjects", spec.n_subjects);
    s.get("classes", spec.classes);
    s.get("recordings_per_subject", spec.recordings_per_subject);
    s.get("duration_s", spec.duration_s);
    s.get("sample_rate_hz", spec.sample_rate_hz);
    s.get("channels", spec.channels);
    if (const auto* cm = s.child("class_signal_model")) {
      if (!cm->is_array()) fail(ErrorCategory::config, "synthetic.class_signal_model must be a list");
      spec.class_signal_model.clear();
      for (const auto& mix : *cm) {
        std::vector<Oscillation> v;
        for (const auto& o : mix) {
          Oscillation osc;
          Section os(o, "synthetic.class_signal_model[]");
          os.get("center_hz", osc.center_hz);
          os.get("amplitude_uv", osc.amplitude_uv);
          v.push_back(osc);
        }
        spec.class_signal_model.push_back(v);
      }
    }
    s.get("subject_confound_strength", spec.subject_confound_strength);
    s.get("confound_amplitude_uv", spec.confound_amplitude_uv);
    s.get("noise_sigma_uv", spec.noise_sigma_uv);
    s.get("source_tag", spec.source_tag);
  }
  validate(spec);
  return spec;
}

// ---------------------------------------------------------------- training configs

json to_json(const HeadConfig& c) {
  return {{"kind", to_string(c.kind)}, {"classes", c.classes}, {"mlp_hidden", c.mlp_hidden}};
}

HeadConfig head_config_from_json(const json& j) {
  HeadConfig c;
  {
    Section s(j, "head");
    std::string kind = to_string(c.kind);
    s.get("kind", kind);
    c.kind = head_kind_from_string(kind);
    s.get("classes", c.classes);
    s.get("mlp_hidden", c.mlp_hidden);
  }
  validate(c);
  return c;
}

json to_json(const AdaptationConfig& c) {
  return {{"regime", to_string(c.regime)},
          {"k", c.k},
          {"stage1", {{"epochs", c.stage1.epochs}, {"lr", c.stage1.lr}}},
          {"stage2", {{"epochs", c.stage2.epochs}, {"lr", c.stage2.lr}}},
          {"batch_size", c.batch_size},
          {"weight_decay", c.weight_decay}};
}

AdaptationConfig adaptation_config_from_json(const json& j) {
  AdaptationConfig c;
  Section s(j, "adaptation");
  std::string regime = to_string(c.regime);
  s.get("regime", regime);
  c.regime = regime_from_string(regime);
  s.get("k", c.k);
  for (auto [key, dst] : {std::pair{"stage1", &c.stage1}, std::pair{"stage2", &c.stage2}})
    if (const auto* st = s.child(key)) {
      Section ss(*st, s.path(key));
      ss.get("epochs", dst->epochs);
      ss.get("lr", dst->lr);
    }
  s.get("batch_size", c.batch_size);
  s.get("weight_decay", c.weight_decay);
  return c;
}

json to_json(const PretrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"optimizer", to_json(c.optimizer)},
          {"warmup_steps", c.warmup_steps},
          {"min_lr_ratio", c.min_lr_ratio},
          {"max_steps", c.max_steps}};
}

PretrainConfig pretrain_config_from_json(const json& j) {
  PretrainConfig c;
  Section s(j, "pretrain");
  s.get("epochs", c.epochs);
  s.get("batch_size", c.batch_size);
  if (const auto* o = s.child("optimizer")) c.optimizer = adamw_config_from_json(*o);
  s.get("warmup_steps", c.warmup_steps);
  s.get("min_lr_ratio", c.min_lr_ratio);
  s.get("max_steps", c.max_steps);
  if (c.epochs < 1 || c.batch_size < 1 || c.warmup_steps < 0 || c.max_steps < 0 || c.min_lr_ratio < 0 ||
      c.min_lr_ratio > 1 || !(c.optimizer.lr > 0))
    fail(ErrorCategory::config, "pretrain: invalid schedule settings");
  return c;
}

json to_json(const SplitFractions& f) { return {{"val", f.val}, {"test", f.test}, {"segment_val", f.segment_val}}; }

SplitFractions split_fractions_from_json(const json& j) {
  SplitFractions f;
  Section s(j, "protocol.fractions");
  s.get("val", f.val);
  s.get("test", f.test);
  s.get("segment_val", f.segment_val);
  return f;
}

// ---------------------------------------------------------------- experiment

ExperimentConfig ExperimentConfig::preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "desk") return c;
  if (name == "paper") {
    c.model = ModelConfig::large();
    c.tokenizer.embed_dim = c.model.dim;
    return c;
  }
  fail(ErrorCategory::config, "unknown preset '" + name + "' (expected desk or paper)");
}

void validate(const ExperimentConfig& c) {
  validate(c.pipeline);
  validate(c.tokenizer);
  validate(c.pos_encoding);
  validate(c.model);
  validate(c.mask);
  validate(c.head);
  validate(c.adaptation, c.model.encoder_layers);
  validate(c.protocol);
  if (c.dataset_dir.empty()) validate(c.synthetic);
  if (c.tokenizer.embed_dim != c.model.dim)
    fail(ErrorCategory::config, "tokenizer.embed_dim must equal model.dim");
  if (c.tokenizer.sample_rate_hz != c.pipeline.target_rate_hz)
    fail(ErrorCategory::config, "tokenizer.sample_rate_hz must equal pipeline.target_rate_hz");
  if (c.seeds.empty()) fail(ErrorCategory::config, "seeds must not be empty");
  if (c.workers < 1) fail(ErrorCategory::config, "protocol.workers must be >= 1");
  static const std::set<std::string> known = {"prism", "bandpower", "subject_fingerprint", "spectral_logreg"};
  for (const auto& m : c.sweep_models)
    if (!known.count(m)) fail(ErrorCategory::config, "protocol.models: unknown model '" + m + "'");
}

json to_json(const ExperimentConfig& c) {
  return {{"seed", c.seed},
          {"seeds", c.seeds},
          {"output_dir", c.output_dir.string()},
          {"dataset", {{"path", c.dataset_dir.string()}, {"synthetic", to_json(c.synthetic)}}},
          {"pipeline", to_json(c.pipeline)},
          {"tokenizer", to_json(c.tokenizer)},
          {"pos_encoding", to_json(c.pos_encoding)},
          {"model", to_json(c.model)},
          {"mask", to_json(c.mask)},
          {"pretrain", to_json(c.pretrain)},
          {"adaptation", to_json(c.adaptation)},
          {"head", to_json(c.head)},
          {"checkpoint", c.checkpoint.string()},
          {"classifier", c.classifier.string()},
          {"protocol",
           {{"grid", to_json(c.protocol)},
            {"fractions", to_json(c.fractions)},
            {"rank_metric", to_string(c.rank_metric)},
            {"models", c.sweep_models},
            {"workers", c.workers}}}};
}

ExperimentConfig experiment_config_from_json(const json& j, const ExperimentConfig& base) {
  ExperimentConfig c = base;
  {
    Section s(j, "config");
    s.get("seed", c.seed);
    s.get("seeds", c.seeds);
    std::string out = c.output_dir.string();
    s.get("output_dir", out);
    c.output_dir = out;
    if (const auto* d = s.child("dataset")) {
      Section ds(*d, "dataset");
      std::string p = c.dataset_dir.string();
      ds.get("path", p);
      c.dataset_dir = p;
      if (const auto* syn = ds.child("synthetic")) {
        json merged = to_json(c.synthetic);
        merged.update(*syn);
        c.synthetic = synthetic_spec_from_json(merged);
      }
    }
    // Sub-configs merge over the current values so a file may set only a few keys.
    auto merge = [&](const char* key, auto& dst, auto from_json) {
      if (const auto* sub = s.child(key)) {
        json merged = to_json(dst);
        if (!sub->is_object()) fail(ErrorCategory::config, std::string(key) + " must be an object");
        for (const auto& [k, v] : sub->items()) merged[k] = v;
        dst = from_json(merged);
      }
    };
    merge("pipeline", c.pipeline, pipeline_config_from_json);
    merge("tokenizer", c.tokenizer, tokenizer_config_from_json);
    merge("pos_encoding", c.pos_encoding, pos_enc_config_from_json);
    merge("model", c.model, model_config_from_json);
    merge("mask", c.mask, mask_config_from_json);
    merge("pretrain", c.pretrain, pretrain_config_from_json);
    merge("adaptation", c.adaptation, adaptation_config_from_json);
    merge("head", c.head, head_config_from_json);
    std::string ck = c.checkpoint.string(), cl = c.classifier.string();
    s.get("checkpoint", ck);
    s.get("classifier", cl);
    c.checkpoint = ck;
    c.classifier = cl;
    if (const auto* p = s.child("protocol")) {
      Section ps(*p, "protocol");
      if (const auto* g = ps.child("grid")) c.protocol = factor_grid_from_json(*g);
      if (const auto* f = ps.child("fractions")) {
        json merged = to_json(c.fractions);
        merged.update(*f);
        c.fractions = split_fractions_from_json(merged);
      }
      std::string metric = to_string(c.rank_metric);
      ps.get("rank_metric", metric);
      c.rank_metric = rank_metric_from_string(metric);
      ps.get("models", c.sweep_models);
      ps.get("workers", c.workers);
    }
  }
  validate(c);
  return c;
}

void apply_path_overrides(ExperimentConfig& c) {
  auto env = [](const char* name) -> const char* {
    const char* v = std::getenv(name);
    return v && *v ? v : nullptr;
  };
  if (const char* v = env("PRISM_DATASET_DIR")) c.dataset_dir = v;
  if (const char* v = env("PRISM_OUTPUT_DIR")) c.output_dir = v;
  if (const char* v = env("PRISM_CHECKPOINT")) c.checkpoint = v;
  if (const char* v = env("PRISM_CLASSIFIER")) c.classifier = v;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, const ExperimentConfig& base) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);  // comments allowed
  } catch (const json::exception& e) {
    fail(ErrorCategory::config, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  auto c = experiment_config_from_json(j, base);
  apply_path_overrides(c);
  return c;
}

}  // namespace prism
