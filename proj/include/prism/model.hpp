#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "prism/autograd.hpp"
#include "prism/masking.hpp"
#include "prism/pos_encoding.hpp"
#include "prism/tokenizer.hpp"

namespace prism {

struct ModelConfig {
  int dim = 64;
  int encoder_layers = 4;
  int decoder_layers = 2;
  int heads = 4;
  int ffn_expansion = 4;
  double lambda_aux = 0.1;

  static ModelConfig desk();
  static ModelConfig large();
};

void validate(const ModelConfig& cfg);

struct LossReport {
  double l_pri = 0.0;
  double l_sec = 0.0;
  double l_total = 0.0;
  double lambda = 0.0;
  std::size_t n_masked = 0;
};

// Combines the two reconstruction losses: l_total = l_pri + lambda * l_sec.
LossReport total_loss(double l_pri, double l_sec, double lambda, std::size_t n_masked = 0);

// Per-layer cache of the encoder pass.
struct EncoderPass {
  ad::Var output;                 // after the final encoder LayerNorm
  std::vector<ad::Var> ffn_outputs;  // feed-forward branch of each layer, pre-residual
};

struct SampleForward {
  ad::Var l_pri;
  ad::Var l_sec;
  ad::Var reconstruction;      // |M| x P, decoder path
  ad::Var aux_reconstruction;  // |M| x P, auxiliary path
  ad::Var aux_weights;         // 1 x N_vis attention weights of the pooling query
  ad::Var global_embedding;    // 1 x D
};

// Masked autoencoder: patch embedding + 4D positional encoding, pre-norm
// transformer encoder over visible tokens, decoder with a learnable mask
// token and linear head, and an auxiliary path that pools every encoder
// layer's feed-forward output through a single learned query.
class MaskedAutoencoder {
 public:
  MaskedAutoencoder() = default;
  MaskedAutoencoder(ModelConfig cfg, TokenizerConfig tok, PosEncConfig pe, std::uint64_t init_seed);
  // Adopts existing parameters (checkpoint restore); shapes are checked.
  MaskedAutoencoder(ModelConfig cfg, TokenizerConfig tok, PosEncConfig pe, ad::ParameterSet params);

  const ModelConfig& config() const { return cfg_; }
  const TokenizerConfig& tokenizer() const { return tok_; }
  const PositionalEncoding& positional() const { return pe_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  ad::Var embed(ad::Tape& tape, const ad::Matrix& patches);
  ad::Var position(ad::Tape& tape, const ad::Matrix& coords);

  // Runs the encoder on the given token rows (embedding + PE already added).
  EncoderPass forward_encode(ad::Tape& tape, ad::Var tokens);

  // Reconstructs the masked patches. `pe_all` holds PE rows for all N tokens.
  ad::Var forward_decode(ad::Tape& tape, ad::Var encoded_visible, ad::Var pe_all,
                         const MaskPlan& plan);

  struct AuxOutput {
    ad::Var reconstruction;
    ad::Var weights;
    ad::Var global_embedding;
  };
  AuxOutput aux_pool_and_reconstruct(ad::Tape& tape, const std::vector<ad::Var>& ffn_outputs,
                                     ad::Var pe_all, const MaskPlan& plan);

  SampleForward forward_sample(ad::Tape& tape, const TokenGrid& grid, const MaskPlan& plan);

  // Encoder over all tokens (no masking); token representations N x D.
  ad::Var encode_all(ad::Tape& tape, const TokenGrid& grid);

  // Parameter group of an encoder layer (0-based), e.g. "enc.3.".
  static std::string encoder_prefix(int layer);

 private:
  void init_params(std::uint64_t seed);
  ad::Var block(ad::Tape& tape, const std::string& prefix, ad::Var x, ad::Var* ffn_out);
  ad::Var attention(ad::Tape& tape, const std::string& prefix, ad::Var x);

  ModelConfig cfg_;
  TokenizerConfig tok_;
  PositionalEncoding pe_;
  ad::ParameterSet params_;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TokenizerConfig& cfg);
TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PosEncConfig& cfg);
PosEncConfig pos_enc_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MaskConfig& cfg);
MaskConfig mask_config_from_json(const nlohmann::json& j);

}  // namespace prism
