#include "prism/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "prism/error.hpp"

namespace prism {

namespace {
constexpr char kMagic[8] = {'P', 'R', 'I', 'S', 'M', 'C', 'K', '1'};
}

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json m = meta;
  m["format_version"] = kVersion;
  auto& list = m["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : tensors) list.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  const std::string header = m.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCategory::io, "cannot write checkpoint " + tmp.string());
    const std::uint32_t version = kVersion;
    const std::uint64_t len = header.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, t] : tensors) {
      // Row-major on disk.
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = t;
      out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
    }
    out.flush();
    if (!out) fail(ErrorCategory::io, "short write to checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCategory::io, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::io, "cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    fail(ErrorCategory::data, path.string() + " is not a checkpoint");
  if (version != kVersion)
    fail(ErrorCategory::data, path.string() + ": unsupported checkpoint version " + std::to_string(version));
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  Checkpoint ck;
  try {
    ck.meta = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCategory::data, path.string() + ": corrupt metadata: " + ex.what());
  }
  for (const auto& e : ck.meta.at("tensors")) {
    const auto rows = e.at("rows").get<ad::Index>();
    const auto cols = e.at("cols").get<ad::Index>();
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
    if (!in) fail(ErrorCategory::data, path.string() + ": truncated tensor data");
    ck.tensors[e.at("name").get<std::string>()] = rm;
  }
  ck.meta.erase("tensors");
  return ck;
}

void put_params(Checkpoint& ckpt, const ad::ParameterSet& params, const std::string& prefix) {
  nlohmann::json order = nlohmann::json::array();
  for (const auto& p : params) {
    ckpt.tensors[prefix + p->name] = p->value;
    order.push_back(p->name);
  }
  ckpt.meta["param_order"][prefix] = order;
}

ad::ParameterSet get_params(const Checkpoint& ckpt, const std::string& prefix) {
  ad::ParameterSet out;
  if (!ckpt.meta.contains("param_order") || !ckpt.meta["param_order"].contains(prefix))
    fail(ErrorCategory::data, "checkpoint has no parameter group " + prefix);
  for (const auto& name : ckpt.meta["param_order"][prefix]) {
    const auto key = prefix + name.get<std::string>();
    auto it = ckpt.tensors.find(key);
    if (it == ckpt.tensors.end()) fail(ErrorCategory::data, "checkpoint is missing tensor " + key);
    out.add(name.get<std::string>(), it->second);
  }
  return out;
}

void put_optimizer(Checkpoint& ckpt, const AdamW& opt) {
  ckpt.meta["optimizer"] = {{"steps_taken", opt.steps_taken()},
                            {"lr", opt.config().lr},
                            {"beta1", opt.config().beta1},
                            {"beta2", opt.config().beta2},
                            {"eps", opt.config().eps},
                            {"weight_decay", opt.config().weight_decay}};
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, mom] : opt.state()) {
    ckpt.tensors["opt.m/" + name] = mom.m;
    ckpt.tensors["opt.v/" + name] = mom.v;
    names.push_back(name);
  }
  ckpt.meta["optimizer"]["state"] = names;
}

void restore_optimizer(const Checkpoint& ckpt, AdamW& opt) {
  const auto& o = ckpt.meta.at("optimizer");
  std::map<std::string, AdamW::Moments> state;
  for (const auto& n : o.at("state")) {
    const auto name = n.get<std::string>();
    state[name] = {ckpt.tensors.at("opt.m/" + name), ckpt.tensors.at("opt.v/" + name)};
  }
  opt.restore(o.at("steps_taken").get<long long>(), std::move(state));
}

std::string config_hash(const nlohmann::json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace prism
