#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

#include "prism/autograd.hpp"
#include "prism/optimizer.hpp"

namespace prism {

// Versioned container: 8-byte magic, u32 version, u64 metadata length,
// metadata JSON, then float64 tensors in the order listed in
// metadata["tensors"]. Written to a temporary file and renamed into place.
struct Checkpoint {
  static constexpr int kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, ad::Matrix> tensors;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

void put_params(Checkpoint& ckpt, const ad::ParameterSet& params, const std::string& prefix = "param/");
ad::ParameterSet get_params(const Checkpoint& ckpt, const std::string& prefix = "param/");

void put_optimizer(Checkpoint& ckpt, const AdamW& opt);
void restore_optimizer(const Checkpoint& ckpt, AdamW& opt);

// FNV-1a of the canonical JSON dump, hex encoded.
std::string config_hash(const nlohmann::json& j);

}  // namespace prism
