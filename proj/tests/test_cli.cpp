#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "prism/adaptation.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Run prism_cli(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd =
      std::string("\"") + PRISM_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write_config(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

// Small model and dataset so every subcommand finishes in seconds.
nlohmann::json small_config(const fs::path& out) {
  return {{"seed", 3},
          {"seeds", {0, 1}},
          {"output_dir", out.string()},
          {"dataset",
           {{"synthetic",
             {{"n_subjects", 12}, {"duration_s", 8.0}, {"channels", {"C3", "Cz", "C4"}},
              {"noise_sigma_uv", 1.0}}}}},
          {"model", {{"dim", 8}, {"encoder_layers", 2}, {"decoder_layers", 1}, {"heads", 2}, {"ffn_expansion", 2}}},
          {"tokenizer", {{"embed_dim", 8}}},
          {"pretrain", {{"epochs", 2}, {"batch_size", 4}}},
          {"adaptation", {{"stage1", {{"epochs", 3}, {"lr", 0.01}}}, {"batch_size", 4}}},
          {"protocol", {{"fractions", {{"val", 0.2}, {"test", 0.2}}}}}};
}

}  // namespace

TEST_CASE("synth writes the dataset and reruns byte-identically") {
  auto dir = prism::testing::scratch_dir("cli-synth");
  auto a = prism_cli("synth --seed 4 --output \"" + (dir / "a").string() + "\"", dir);
  REQUIRE(a.code == 0);
  auto b = prism_cli("synth --seed 4 --output \"" + (dir / "b").string() + "\"", dir);
  REQUIRE(b.code == 0);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir / "a" / "dataset")) {
    if (!e.is_directory()) continue;
    ++n;
    const auto twin = dir / "b" / "dataset" / e.path().filename();
    CHECK(slurp(e.path() / "signal.f32") == slurp(twin / "signal.f32"));
    CHECK(slurp(e.path() / "header") == slurp(twin / "header"));
  }
  CHECK(n == 40);
  CHECK(fs::exists(dir / "a" / "config.synth.json"));
}

TEST_CASE("config errors exit 2 before writing anything") {
  auto dir = prism::testing::scratch_dir("cli-config");
  write_config(dir / "bad.json", {{"output_dir", (dir / "out").string()}, {"dataset", {{"synthetic", {{"n_subjects", 0}}}}}});
  auto r = prism_cli("synth --config \"" + (dir / "bad.json").string() + "\"", dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("error[config]") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out"));

  write_config(dir / "typo.json", {{"modle", {{"dim", 8}}}});
  CHECK(prism_cli("synth --config \"" + (dir / "typo.json").string() + "\"", dir).code == 2);
  CHECK(prism_cli("synth --preset huge", dir).code == 2);
  CHECK(prism_cli("", dir).code == 2);
}

TEST_CASE("pretrain, resume, adapt and eval") {
  auto dir = prism::testing::scratch_dir("cli-pipeline");
  const auto out = dir / "run";
  auto cfg = small_config(out);
  write_config(dir / "cfg.json", cfg);
  const std::string base = "--config \"" + (dir / "cfg.json").string() + "\"";

  auto pre = prism_cli("pretrain " + base, dir);
  REQUIRE(pre.code == 0);
  CHECK(fs::exists(out / "pretrain" / "final.ckpt"));
  CHECK(fs::exists(out / "pretrain" / "checkpoints" / "epoch-0001.ckpt"));

  auto again = prism_cli("pretrain --resume " + base, dir);
  CHECK(again.code == 0);
  CHECK(again.out.find("resumed") != std::string::npos);

  auto changed = cfg;
  changed["pretrain"]["batch_size"] = 2;
  write_config(dir / "changed.json", changed);
  auto mismatch = prism_cli("pretrain --resume --config \"" + (dir / "changed.json").string() + "\"", dir);
  CHECK(mismatch.code == 6);
  CHECK(mismatch.err.find("error[resume]") != std::string::npos);

  const auto ckpt = (out / "pretrain" / "final.ckpt").string();
  CHECK(prism_cli("adapt " + base, dir).code == 2);  // no checkpoint given
  CHECK(prism_cli("adapt " + base + " --checkpoint \"" + (dir / "nope.ckpt").string() + "\"", dir).code == 3);
  auto adapt = prism_cli("adapt " + base + " --checkpoint \"" + ckpt + "\"", dir);
  REQUIRE(adapt.code == 0);
  CHECK(fs::exists(out / "classifier.ckpt"));

  auto ev = prism_cli("eval " + base + " --classifier \"" + (out / "classifier.ckpt").string() + "\"", dir);
  REQUIRE(ev.code == 0);
  const auto result = nlohmann::json::parse(slurp(out / "eval.json"));

  // the reported number is the balanced accuracy of the dumped predictions
  std::ifstream csv(out / "predictions.csv");
  std::string line;
  std::getline(csv, line);
  std::vector<int> pred, lab;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ss, field, ',')) f.push_back(field);
    REQUIRE(f.size() == 5);
    lab.push_back(std::stoi(f[3]));
    pred.push_back(std::stoi(f[4]));
  }
  CHECK(pred.size() == result.at("n_segments").get<std::size_t>());
  CHECK(result.at("segment_bacc").get<double>() == doctest::Approx(prism::balanced_accuracy(pred, lab)));
}

TEST_CASE("sweep over a 2 x 2 grid, then report") {
  auto dir = prism::testing::scratch_dir("cli-sweep");
  const auto out = dir / "run";
  auto cfg = small_config(out);
  cfg["dataset"]["synthetic"]["n_subjects"] = 20;
  cfg["protocol"]["grid"] = {{"split_policy", {"subject_level_all", "subject_test_segment_val"}},
                             {"segment_length_s", {4.0, 2.0}}};
  write_config(dir / "cfg.json", cfg);
  auto sw = prism_cli("sweep --config \"" + (dir / "cfg.json").string() + "\"", dir);
  REQUIRE(sw.code == 0);
  const auto rep = nlohmann::json::parse(slurp(out / "sweep_report.json"));
  CHECK(rep.at("cells").size() == 4);
  CHECK(rep.at("models").size() == 2);

  auto r = prism_cli("report --output \"" + out.string() + "\"", dir);
  CHECK(r.code == 0);
  CHECK(r.out.find("seg=2") != std::string::npos);
  CHECK(fs::exists(out / "report.md"));

  std::ofstream(dir / "empty.json")
      << nlohmann::json{{"format", "prism-sweep-report"}, {"version", 1},       {"metric", "validation"},
                        {"models", nlohmann::json::array()}, {"baseline_cell", ""}, {"max_discrepancy_pp", 0.0},
                        {"cells", nlohmann::json::array()},  {"rankings", nlohmann::json::object()},
                        {"reversal_pairs", nlohmann::json::array()}, {"factor_deltas", nlohmann::json::array()},
                        {"interaction_residuals", nlohmann::json::object()}}
             .dump();
  auto empty = prism_cli("report --input \"" + (dir / "empty.json").string() + "\"", dir);
  CHECK(empty.code == 0);
  CHECK(empty.out.find("No cells in report.") != std::string::npos);

  std::ofstream(dir / "garbage.json") << "{ nope";
  CHECK(prism_cli("report --input \"" + (dir / "garbage.json").string() + "\"", dir).code == 4);
  CHECK(prism_cli("report --input \"" + (dir / "absent.json").string() + "\"", dir).code == 3);
}
