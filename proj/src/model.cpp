#include "prism/model.hpp"

#include <cmath>

#include "prism/error.hpp"
#include "prism/rng.hpp"

namespace prism {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::large() {
  ModelConfig c;
  c.dim = 512;
  c.encoder_layers = 12;
  c.decoder_layers = 4;
  c.heads = 8;
  c.ffn_expansion = 4;
  c.lambda_aux = 0.1;
  return c;
}

void validate(const ModelConfig& cfg) {
  if (cfg.dim < 1 || cfg.heads < 1 || cfg.dim % cfg.heads != 0)
    fail(ErrorCategory::config, "model: dim must be divisible by heads");
  if (cfg.encoder_layers < 1 || cfg.decoder_layers < 1)
    fail(ErrorCategory::config, "model: encoder and decoder need at least one layer");
  if (cfg.ffn_expansion < 1) fail(ErrorCategory::config, "model: ffn_expansion must be >= 1");
  if (!(cfg.lambda_aux >= 0.0)) fail(ErrorCategory::config, "model: lambda must be >= 0");
}

LossReport total_loss(double l_pri, double l_sec, double lambda, std::size_t n_masked) {
  if (!std::isfinite(l_pri) || !std::isfinite(l_sec))
    fail(ErrorCategory::numeric, "total_loss: non-finite component");
  return {l_pri, l_sec, l_pri + lambda * l_sec, lambda, n_masked};
}

namespace {

ad::Matrix gaussian(ad::Index rows, ad::Index cols, double sd, Rng& rng) {
  ad::Matrix m(rows, cols);
  for (ad::Index j = 0; j < cols; ++j)
    for (ad::Index i = 0; i < rows; ++i) m(i, j) = sd * standard_normal(rng);
  return m;
}

double fan_in_sd(ad::Index fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

std::string MaskedAutoencoder::encoder_prefix(int layer) { return "enc." + std::to_string(layer) + "."; }

MaskedAutoencoder::MaskedAutoencoder(ModelConfig cfg, TokenizerConfig tok, PosEncConfig pe,
                                     std::uint64_t init_seed)
    : cfg_(cfg), tok_(tok) {
  validate(cfg_);
  validate(tok_);
  if (tok_.embed_dim != cfg_.dim)
    fail(ErrorCategory::config, "tokenizer embed_dim must equal model dim");
  pe_ = PositionalEncoding(pe, cfg_.dim);
  init_params(init_seed);
}

MaskedAutoencoder::MaskedAutoencoder(ModelConfig cfg, TokenizerConfig tok, PosEncConfig pe,
                                     ad::ParameterSet params)
    : MaskedAutoencoder(cfg, tok, pe, std::uint64_t{0}) {
  for (auto& p : params_) {
    const auto* src = params.find(p->name);
    if (!src) fail(ErrorCategory::data, "checkpoint is missing parameter " + p->name);
    if (src->value.rows() != p->value.rows() || src->value.cols() != p->value.cols())
      fail(ErrorCategory::data, "checkpoint parameter " + p->name + " has the wrong shape");
    p->value = src->value;
  }
}

void MaskedAutoencoder::init_params(std::uint64_t seed) {
  Rng rng = make_rng(derive_seed(seed, "init"));
  const ad::Index d = cfg_.dim, p = tok_.patch_samples, h = cfg_.dim * cfg_.ffn_expansion;

  params_.add("embed.W_e", gaussian(d, p, fan_in_sd(p), rng));
  pe_.init_params(params_, rng);

  auto add_block = [&](const std::string& pfx) {
    params_.add(pfx + "ln1.gamma", ad::Matrix::Ones(1, d));
    params_.add(pfx + "ln1.beta", ad::Matrix::Zero(1, d));
    for (const char* w : {"attn.Wq", "attn.Wk", "attn.Wv"}) {
      params_.add(pfx + w, gaussian(d, d, fan_in_sd(d), rng));
      params_.add(pfx + std::string(w).replace(5, 1, "b"), ad::Matrix::Zero(1, d));
    }
    params_.add(pfx + "attn.Wo", gaussian(d, d, fan_in_sd(d), rng));
    params_.add(pfx + "attn.bo", ad::Matrix::Zero(1, d));
    params_.add(pfx + "ln2.gamma", ad::Matrix::Ones(1, d));
    params_.add(pfx + "ln2.beta", ad::Matrix::Zero(1, d));
    params_.add(pfx + "ffn.W1", gaussian(d, h, fan_in_sd(d), rng));
    params_.add(pfx + "ffn.b1", ad::Matrix::Zero(1, h));
    params_.add(pfx + "ffn.W2", gaussian(h, d, fan_in_sd(h), rng));
    params_.add(pfx + "ffn.b2", ad::Matrix::Zero(1, d));
  };

  for (int l = 0; l < cfg_.encoder_layers; ++l) add_block(encoder_prefix(l));
  params_.add("enc.norm.gamma", ad::Matrix::Ones(1, d));
  params_.add("enc.norm.beta", ad::Matrix::Zero(1, d));

  params_.add("dec.mask_token", gaussian(1, d, 0.02, rng));
  for (int l = 0; l < cfg_.decoder_layers; ++l) add_block("dec." + std::to_string(l) + ".");
  params_.add("dec.norm.gamma", ad::Matrix::Ones(1, d));
  params_.add("dec.norm.beta", ad::Matrix::Zero(1, d));
  params_.add("dec.head.W", gaussian(d, p, fan_in_sd(d), rng));
  params_.add("dec.head.b", ad::Matrix::Zero(1, p));

  const ad::Index cat = d * cfg_.encoder_layers;
  params_.add("aux.proj.W", gaussian(cat, d, fan_in_sd(cat), rng));
  params_.add("aux.proj.b", ad::Matrix::Zero(1, d));
  params_.add("aux.query", gaussian(1, d, fan_in_sd(d), rng));
  params_.add("aux.rec.W1", gaussian(2 * d, d, fan_in_sd(2 * d), rng));
  params_.add("aux.rec.b1", ad::Matrix::Zero(1, d));
  params_.add("aux.rec.W2", gaussian(d, p, fan_in_sd(d), rng));
  params_.add("aux.rec.b2", ad::Matrix::Zero(1, p));
}

ad::Var MaskedAutoencoder::embed(ad::Tape& tape, const ad::Matrix& patches) {
  if (patches.cols() != tok_.patch_samples)
    fail(ErrorCategory::precondition, "embed: patch width does not match the tokenizer");
  return ad::matmul_nt(tape.constant(patches), tape.param(params_, "embed.W_e"));
}

ad::Var MaskedAutoencoder::position(ad::Tape& tape, const ad::Matrix& coords) {
  return pe_.forward(tape, params_, coords);
}

ad::Var MaskedAutoencoder::attention(ad::Tape& tape, const std::string& pfx, ad::Var x) {
  auto proj = [&](const char* w, const char* b) {
    return ad::add_rowwise(ad::matmul(x, tape.param(params_, pfx + w)), tape.param(params_, pfx + b));
  };
  auto q = proj("attn.Wq", "attn.bq");
  auto k = proj("attn.Wk", "attn.bk");
  auto v = proj("attn.Wv", "attn.bv");
  const int dh = cfg_.dim / cfg_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> heads;
  heads.reserve(static_cast<std::size_t>(cfg_.heads));
  for (int h = 0; h < cfg_.heads; ++h) {
    auto qh = ad::slice_cols(q, h * dh, dh);
    auto kh = ad::slice_cols(k, h * dh, dh);
    auto vh = ad::slice_cols(v, h * dh, dh);
    auto weights = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
    heads.push_back(ad::matmul(weights, vh));
  }
  auto cat = heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
  return ad::add_rowwise(ad::matmul(cat, tape.param(params_, pfx + "attn.Wo")),
                         tape.param(params_, pfx + "attn.bo"));
}

ad::Var MaskedAutoencoder::block(ad::Tape& tape, const std::string& pfx, ad::Var x, ad::Var* ffn_out) {
  auto h = ad::layer_norm(x, tape.param(params_, pfx + "ln1.gamma"), tape.param(params_, pfx + "ln1.beta"));
  x = ad::add(x, attention(tape, pfx, h));
  auto h2 = ad::layer_norm(x, tape.param(params_, pfx + "ln2.gamma"), tape.param(params_, pfx + "ln2.beta"));
  auto hidden = ad::gelu(ad::add_rowwise(ad::matmul(h2, tape.param(params_, pfx + "ffn.W1")),
                                         tape.param(params_, pfx + "ffn.b1")));
  auto f = ad::add_rowwise(ad::matmul(hidden, tape.param(params_, pfx + "ffn.W2")),
                           tape.param(params_, pfx + "ffn.b2"));
  if (ffn_out) *ffn_out = f;
  return ad::add(x, f);
}

EncoderPass MaskedAutoencoder::forward_encode(ad::Tape& tape, ad::Var tokens) {
  if (tokens.rows() < 1) fail(ErrorCategory::precondition, "forward_encode: no visible tokens");
  if (tokens.cols() != cfg_.dim) fail(ErrorCategory::precondition, "forward_encode: width != dim");
  EncoderPass pass;
  ad::Var x = tokens;
  for (int l = 0; l < cfg_.encoder_layers; ++l) {
    ad::Var f;
    x = block(tape, encoder_prefix(l), x, &f);
    if (!x.value().allFinite())
      fail(ErrorCategory::numeric, "non-finite activation in encoder layer " + std::to_string(l));
    pass.ffn_outputs.push_back(f);
  }
  pass.output = ad::layer_norm(x, tape.param(params_, "enc.norm.gamma"), tape.param(params_, "enc.norm.beta"));
  return pass;
}

ad::Var MaskedAutoencoder::forward_decode(ad::Tape& tape, ad::Var encoded_visible, ad::Var pe_all,
                                          const MaskPlan& plan) {
  const auto n = static_cast<ad::Index>(plan.n_tokens);
  const auto visible = plan.visible();
  if (pe_all.rows() != n || encoded_visible.rows() != static_cast<ad::Index>(visible.size()))
    fail(ErrorCategory::precondition, "forward_decode: plan does not match inputs");
  if (plan.masked.empty()) fail(ErrorCategory::precondition, "forward_decode: nothing masked");

  // Row map into [encoded_visible; mask_token].
  std::vector<ad::Index> source(plan.n_tokens);
  const auto mask_row = static_cast<ad::Index>(visible.size());
  for (std::size_t i = 0; i < visible.size(); ++i) source[visible[i]] = static_cast<ad::Index>(i);
  for (auto m : plan.masked) source[m] = mask_row;
  auto stacked = ad::concat_rows({encoded_visible, tape.param(params_, "dec.mask_token")});
  ad::Var x = ad::add(ad::gather_rows(stacked, source), pe_all);

  for (int l = 0; l < cfg_.decoder_layers; ++l) x = block(tape, "dec." + std::to_string(l) + ".", x, nullptr);
  x = ad::layer_norm(x, tape.param(params_, "dec.norm.gamma"), tape.param(params_, "dec.norm.beta"));

  std::vector<ad::Index> masked_rows(plan.masked.begin(), plan.masked.end());
  auto at_masked = ad::gather_rows(x, masked_rows);
  return ad::add_rowwise(ad::matmul(at_masked, tape.param(params_, "dec.head.W")),
                         tape.param(params_, "dec.head.b"));
}

MaskedAutoencoder::AuxOutput MaskedAutoencoder::aux_pool_and_reconstruct(
    ad::Tape& tape, const std::vector<ad::Var>& ffn_outputs, ad::Var pe_all, const MaskPlan& plan) {
  if (static_cast<int>(ffn_outputs.size()) != cfg_.encoder_layers)
    fail(ErrorCategory::precondition, "aux path: expected one FFN output per encoder layer");
  auto cat = ffn_outputs.size() == 1 ? ffn_outputs.front() : ad::concat_cols(ffn_outputs);
  auto tokens = ad::add_rowwise(ad::matmul(cat, tape.param(params_, "aux.proj.W")),
                                tape.param(params_, "aux.proj.b"));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg_.dim));
  auto scores = ad::scale(ad::matmul_nt(tape.param(params_, "aux.query"), tokens), inv_sqrt);  // 1 x N_vis
  auto weights = ad::softmax_rows(scores);
  auto global = ad::matmul(weights, tokens);  // 1 x D

  std::vector<ad::Index> masked_rows(plan.masked.begin(), plan.masked.end());
  auto pe_masked = ad::gather_rows(pe_all, masked_rows);
  auto g_rep = ad::gather_rows(global, std::vector<ad::Index>(masked_rows.size(), 0));
  auto in = ad::concat_cols({g_rep, pe_masked});
  auto hidden = ad::gelu(ad::add_rowwise(ad::matmul(in, tape.param(params_, "aux.rec.W1")),
                                         tape.param(params_, "aux.rec.b1")));
  auto out = ad::add_rowwise(ad::matmul(hidden, tape.param(params_, "aux.rec.W2")),
                             tape.param(params_, "aux.rec.b2"));
  return {out, weights, global};
}

SampleForward MaskedAutoencoder::forward_sample(ad::Tape& tape, const TokenGrid& grid, const MaskPlan& plan) {
  if (plan.n_tokens != grid.size())
    fail(ErrorCategory::precondition, "forward_sample: plan built for a different grid");
  const auto visible = plan.visible();
  std::vector<ad::Index> vis_rows(visible.begin(), visible.end());
  std::vector<ad::Index> masked_rows(plan.masked.begin(), plan.masked.end());

  auto pe_all = position(tape, grid.coords());
  auto tokens = ad::add(embed(tape, grid.patches), pe_all);
  auto enc = forward_encode(tape, ad::gather_rows(tokens, vis_rows));
  auto recon = forward_decode(tape, enc.output, pe_all, plan);
  auto aux = aux_pool_and_reconstruct(tape, enc.ffn_outputs, pe_all, plan);

  ad::Matrix target(static_cast<ad::Index>(masked_rows.size()), grid.patches.cols());
  for (std::size_t i = 0; i < masked_rows.size(); ++i)
    target.row(static_cast<ad::Index>(i)) = grid.patches.row(masked_rows[i]);

  SampleForward out;
  out.reconstruction = recon;
  out.aux_reconstruction = aux.reconstruction;
  out.aux_weights = aux.weights;
  out.global_embedding = aux.global_embedding;
  out.l_pri = ad::l1_row_mean(recon, target);
  out.l_sec = ad::l1_row_mean(aux.reconstruction, target);
  return out;
}

ad::Var MaskedAutoencoder::encode_all(ad::Tape& tape, const TokenGrid& grid) {
  auto tokens = ad::add(embed(tape, grid.patches), position(tape, grid.coords()));
  return forward_encode(tape, tokens).output;
}

}  // namespace prism
