#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "lmfp/serial.hpp"
#include "lmfp/types.hpp"

namespace fs = std::filesystem;
using lmfp::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(LMFP_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  RunResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (std::fgets(buf.data(), buf.size(), pipe)) result.output += buf.data();
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("lmfp_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

std::string data_file(const std::string& name) {
  return (fs::path(LMFP_DATA_DIR) / name).string();
}

void write_sim_handle(const std::string& path, const std::string& id, std::uint64_t style_seed,
                      std::uint64_t variant_seed, double epsilon, const std::string& family,
                      bool request_logprobs = true) {
  json doc;
  doc["format"] = "lmfp/1";
  doc["kind"] = "model_handle";
  doc["id"] = id;
  doc["backend"] = "simulated";
  doc["decode"] =
      json{{"temperature", 0.0}, {"max_tokens", 512}, {"top_logprobs", 20}, {"request_logprobs", request_logprobs}};
  doc["simulated"] = json{{"family_id", family},
                          {"style_seed", style_seed},
                          {"variant_seed", variant_seed},
                          {"epsilon", epsilon},
                          {"pool", data_file("sample_pool.json")}};
  lmfp::write_file(path, doc.dump(2) + "\n");
}

void write_rewriter_handle(const std::string& path, const std::string& id, double strength) {
  json doc;
  doc["format"] = "lmfp/1";
  doc["kind"] = "model_handle";
  doc["id"] = id;
  doc["backend"] = "simulated";
  doc["simulated"] = json{{"rewriter_seed", 9}, {"rewriter_strength", strength}};
  lmfp::write_file(path, doc.dump(2) + "\n");
}

std::string slurp(const std::string& path) { return lmfp::read_file(path); }

}  // namespace

TEST_CASE("cli: no subcommand is a usage error") {
  CHECK(run_cli("").exit_code == 2);
}

TEST_CASE("cli: key-build") {
  Workspace ws;
  write_sim_handle(ws.path("alpha.json"), "alpha-base", 1001, 0, 0.0, "alpha");
  write_sim_handle(ws.path("beta.json"), "beta-base", 2002, 0, 0.0, "beta");
  const std::string base_args = "key-build --pool " + data_file("sample_pool.json") +
                                " --triggers " + data_file("sample_triggers.json") +
                                " --protected " + ws.path("alpha.json") + " --protected " +
                                ws.path("beta.json") + " --seed 5";

  SUBCASE("sample pool at Q=20 gives a 140-question key, reproducibly") {
    auto r1 = run_cli(base_args + " --questions-per-domain 20 --out " + ws.path("key1.json"));
    CHECK(r1.exit_code == 0);
    auto key = lmfp::deserialize<lmfp::SecretKey>(slurp(ws.path("key1.json")));
    CHECK(key.knowledge.size() == 140);
    CHECK(key.domains.size() == 7);
    CHECK(key.triggers.size() == 24);
    CHECK_FALSE(key.run_config.is_null());

    auto r2 = run_cli(base_args + " --questions-per-domain 20 --out " + ws.path("key2.json"));
    CHECK(r2.exit_code == 0);
    CHECK(slurp(ws.path("key1.json")) == slurp(ws.path("key2.json")));
  }
  SUBCASE("Q beyond the pool size fails with counts") {
    auto r = run_cli(base_args + " --questions-per-domain 40 --out " + ws.path("key.json"));
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("insufficient") != std::string::npos);
    CHECK(r.output.find("need 40") != std::string::npos);
  }
}

namespace {

// Builds a small key once for the extraction/verify/evaluate tests.
void build_key(const Workspace& ws, const std::string& out) {
  write_sim_handle(ws.path("pa.json"), "alpha-base", 1001, 0, 0.0, "alpha");
  auto r = run_cli("key-build --pool " + data_file("sample_pool.json") + " --triggers " +
                   data_file("sample_triggers.json") + " --protected " + ws.path("pa.json") +
                   " --seed 5 --questions-per-domain 10 --out " + out);
  REQUIRE(r.exit_code == 0);
}

}  // namespace

TEST_CASE("cli: extract") {
  Workspace ws;
  build_key(ws, ws.path("key.json"));
  write_sim_handle(ws.path("model.json"), "alpha-base", 1001, 0, 0.0, "alpha");

  SUBCASE("knowledge level yields a Q x N fingerprint") {
    auto r = run_cli("extract --key " + ws.path("key.json") + " --model " + ws.path("model.json") +
                     " --level knowledge --out " + ws.path("fp.json"));
    CHECK(r.exit_code == 0);
    auto fp = lmfp::deserialize<lmfp::KnowledgeFingerprint>(slurp(ws.path("fp.json")));
    CHECK(fp.answers.size() == 70);
    CHECK(fp.model_id == "alpha-base");
  }
  SUBCASE("trigger level without an extractor is a usage error") {
    auto r = run_cli("extract --key " + ws.path("key.json") + " --model " + ws.path("model.json") +
                     " --level trigger --out " + ws.path("fp.json"));
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("--extractor") != std::string::npos);
  }
  SUBCASE("entropy against a text-only backend suggests --no-entropy") {
    write_sim_handle(ws.path("text_only.json"), "alpha-text", 1001, 0, 0.0, "alpha", false);
    auto rt = run_cli("train --corpus " + data_file("sim_trigger_corpus.json") + " --config " +
                      data_file("train_config.json") + " --epochs 0 --out " + ws.path("ext.json"));
    REQUIRE(rt.exit_code == 0);
    auto r = run_cli("extract --key " + ws.path("key.json") + " --model " + ws.path("text_only.json") +
                     " --level trigger --extractor " + ws.path("ext.json") + " --out " + ws.path("fp.json"));
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("capability") != std::string::npos);
    auto r2 = run_cli("extract --key " + ws.path("key.json") + " --model " + ws.path("text_only.json") +
                      " --level trigger --extractor " + ws.path("ext.json") + " --no-entropy --out " +
                      ws.path("fp.json"));
    CHECK(r2.exit_code == 0);
  }
  SUBCASE("rerunning the same extract command reproduces the bytes") {
    const std::string cmd = "extract --key " + ws.path("key.json") + " --model " +
                            ws.path("model.json") + " --level knowledge --out " + ws.path("fp.json");
    REQUIRE(run_cli(cmd).exit_code == 0);
    const std::string first = slurp(ws.path("fp.json"));
    REQUIRE(run_cli(cmd).exit_code == 0);
    CHECK(slurp(ws.path("fp.json")) == first);
  }
  SUBCASE("merged level writes both files under the prefix") {
    auto rt = run_cli("train --corpus " + data_file("sim_trigger_corpus.json") + " --config " +
                      data_file("train_config.json") + " --epochs 0 --out " + ws.path("ext.json"));
    REQUIRE(rt.exit_code == 0);
    auto r = run_cli("extract --key " + ws.path("key.json") + " --model " + ws.path("model.json") +
                     " --level merged --extractor " + ws.path("ext.json") + " --out " + ws.path("fp"));
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(ws.path("fp.trigger.json")));
    CHECK(fs::exists(ws.path("fp.knowledge.json")));
  }
}

TEST_CASE("cli: train") {
  Workspace ws;
  const std::string base = "train --corpus " + data_file("sim_trigger_corpus.json") + " --config " +
                           data_file("train_config.json");

  SUBCASE("epochs 0 equals the seeded initialization, reproducibly") {
    auto r1 = run_cli(base + " --epochs 0 --out " + ws.path("e0.json"));
    CHECK(r1.exit_code == 0);
    const std::string first = slurp(ws.path("e0.json"));
    auto r2 = run_cli(base + " --epochs 0 --out " + ws.path("e0.json"));
    CHECK(r2.exit_code == 0);
    CHECK(slurp(ws.path("e0.json")) == first);
  }
  SUBCASE("short run emits an improving loss trace and identical reruns") {
    const std::string cmd = base + " --epochs 3 --out " + ws.path("ext.json") + " --loss-trace " +
                            ws.path("trace.csv");
    auto r1 = run_cli(cmd);
    CHECK(r1.exit_code == 0);
    const std::string first_bytes = slurp(ws.path("ext.json"));
    auto r2 = run_cli(cmd);
    CHECK(r2.exit_code == 0);
    CHECK(slurp(ws.path("ext.json")) == first_bytes);

    std::ifstream trace(ws.path("trace.csv"));
    std::string header;
    std::getline(trace, header);
    CHECK(header == "epoch,mean_loss");
    double first = 0.0, last = 0.0;
    std::string line;
    bool first_set = false;
    while (std::getline(trace, line)) {
      const double v = std::stod(line.substr(line.find(',') + 1));
      if (!first_set) {
        first = v;
        first_set = true;
      }
      last = v;
    }
    CHECK(first_set);
    CHECK(last < first);
  }
}

TEST_CASE("cli: verify") {
  Workspace ws;
  build_key(ws, ws.path("key.json"));
  write_sim_handle(ws.path("pro.json"), "alpha-base", 1001, 0, 0.0, "alpha");
  write_sim_handle(ws.path("sus.json"), "alpha-ft", 1001, 3, 0.1, "alpha");
  write_sim_handle(ws.path("ind.json"), "gamma-base", 3003, 0, 0.0, "gamma");

  auto extract = [&](const std::string& model, const std::string& out) {
    auto r = run_cli("extract --key " + ws.path("key.json") + " --model " + ws.path(model) +
                     " --level knowledge --out " + ws.path(out));
    REQUIRE(r.exit_code == 0);
  };
  extract("pro.json", "pro.fp.json");
  extract("sus.json", "sus.fp.json");
  extract("ind.json", "ind.fp.json");

  SUBCASE("identical fingerprints give d_merged = -alpha at merged... knowledge-only beta") {
    auto r = run_cli("verify --protected " + ws.path("pro.fp.json") + " --suspect " +
                     ws.path("pro.fp.json") + " --beta 1 --threshold 0 --out " + ws.path("v.json"));
    CHECK(r.exit_code == 0);
    json report = json::parse(slurp(ws.path("v.json")));
    CHECK(report["verdict"]["d_K_raw"] == 0);
    CHECK(report["verdict"]["d_merged"] == 0.0);
    CHECK(report["verdict"]["is_pirated"] == true);
  }
  SUBCASE("knowledge-only verify reports beta * d_K_norm and the domain profile") {
    auto r = run_cli("verify --protected " + ws.path("pro.fp.json") + " --suspect " +
                     ws.path("sus.fp.json") + " --negative " + ws.path("ind.fp.json") + " --key " +
                     ws.path("key.json") + " --beta 1 --threshold 0.3 --out " + ws.path("v.json"));
    CHECK(r.exit_code == 0);
    json report = json::parse(slurp(ws.path("v.json")));
    const double d_k = report["verdict"]["d_K_norm"].get<double>();
    CHECK(report["verdict"]["d_merged"].get<double>() == doctest::Approx(d_k));
    CHECK(report["verdict"]["d_T"].is_null());
    CHECK(report["verdict"]["is_pirated"] == (d_k <= 0.3));
    REQUIRE(report.contains("logits"));
    CHECK(report["logits"][0]["labels"][0] == "alpha-base");
    CHECK(report["logits"][0]["labels"][1] == "gamma-base");
    REQUIRE(report.contains("domain_similarity"));
    CHECK(report["domain_similarity"].size() == 7);
  }
  SUBCASE("identical trigger+knowledge fingerprints give d_merged = -alpha") {
    auto rt = run_cli("train --corpus " + data_file("sim_trigger_corpus.json") + " --config " +
                      data_file("train_config.json") + " --epochs 0 --out " + ws.path("ext.json"));
    REQUIRE(rt.exit_code == 0);
    auto rx = run_cli("extract --key " + ws.path("key.json") + " --model " + ws.path("pro.json") +
                      " --level merged --extractor " + ws.path("ext.json") + " --out " + ws.path("pro"));
    REQUIRE(rx.exit_code == 0);
    auto r = run_cli("verify --protected " + ws.path("pro.trigger.json") + " --protected " +
                     ws.path("pro.knowledge.json") + " --suspect " + ws.path("pro.trigger.json") +
                     " --suspect " + ws.path("pro.knowledge.json") +
                     " --alpha 2 --beta 1 --threshold 0 --out " + ws.path("v.json"));
    CHECK(r.exit_code == 0);
    json report = json::parse(slurp(ws.path("v.json")));
    CHECK(report["verdict"]["d_merged"].get<double>() == doctest::Approx(-2.0));
    CHECK(report["verdict"]["is_pirated"] == true);
    CHECK(report["verdict"]["provenance"]["level"] == "merged");
  }
  SUBCASE("incompatible key versions exit with code 4") {
    write_sim_handle(ws.path("pb.json"), "alpha-base", 1001, 0, 0.0, "alpha");
    auto r = run_cli("key-build --pool " + data_file("sample_pool.json") + " --triggers " +
                     data_file("sample_triggers.json") + " --protected " + ws.path("pb.json") +
                     " --seed 6 --questions-per-domain 10 --out " + ws.path("key2.json"));
    REQUIRE(r.exit_code == 0);
    auto r2 = run_cli("extract --key " + ws.path("key2.json") + " --model " + ws.path("sus.json") +
                      " --level knowledge --out " + ws.path("sus2.fp.json"));
    REQUIRE(r2.exit_code == 0);
    auto r3 = run_cli("verify --protected " + ws.path("pro.fp.json") + " --suspect " +
                      ws.path("sus2.fp.json") + " --out " + ws.path("v.json"));
    CHECK(r3.exit_code == 4);
  }
}

TEST_CASE("cli: evaluate") {
  Workspace ws;
  build_key(ws, ws.path("key.json"));
  fs::create_directories(ws.path("fps"));

  auto extract_to_dir = [&](const std::string& id, std::uint64_t style, std::uint64_t vseed,
                            double eps, const std::string& family) {
    const std::string handle = ws.path(id + ".handle.json");
    write_sim_handle(handle, id, style, vseed, eps, family);
    auto r = run_cli("extract --key " + ws.path("key.json") + " --model " + handle +
                     " --level knowledge --out " + ws.path("fps/" + id + ".json"));
    REQUIRE(r.exit_code == 0);
  };
  extract_to_dir("alpha-base", 1001, 0, 0.0, "alpha");
  extract_to_dir("alpha-v1", 1001, 1, 0.05, "alpha");
  extract_to_dir("alpha-v2", 1001, 2, 0.1, "alpha");
  extract_to_dir("gamma-base", 3003, 0, 0.0, "gamma");
  extract_to_dir("gamma-v1", 3003, 1, 0.05, "gamma");

  json labels;
  labels["format"] = "lmfp/1";
  labels["kind"] = "labels";
  labels["families"] = json::array(
      {json{{"family", "alpha"}, {"protected_model", "alpha-base"}, {"pirated", json::array({"alpha-v1", "alpha-v2"})}},
       json{{"family", "gamma"}, {"protected_model", "gamma-base"}, {"pirated", json::array({"gamma-v1"})}}});
  lmfp::write_file(ws.path("labels.json"), labels.dump(2) + "\n");

  SUBCASE("separable families evaluate to IP-ROC 1.0 and rank 1, deterministically") {
    auto r1 = run_cli("evaluate --labels " + ws.path("labels.json") + " --fingerprints " +
                      ws.path("fps") + " --key " + ws.path("key.json") + " --out " + ws.path("s1.json"));
    CHECK(r1.exit_code == 0);
    json summary = json::parse(slurp(ws.path("s1.json")));
    for (const auto& family : summary["families"]) {
      CHECK(family["levels"]["knowledge"]["ip_roc"] == 1.0);
      for (const auto& p : family["levels"]["knowledge"]["pirated"]) CHECK(p["rank"] == 1);
      CHECK(family.contains("domain_similarity"));
    }
    auto r2 = run_cli("evaluate --labels " + ws.path("labels.json") + " --fingerprints " +
                      ws.path("fps") + " --key " + ws.path("key.json") + " --out " + ws.path("s2.json"));
    CHECK(slurp(ws.path("s1.json")) == slurp(ws.path("s2.json")));
  }
  SUBCASE("an unlabeled model in the directory is a labeling error") {
    extract_to_dir("mystery", 4004, 0, 0.0, "mystery");
    auto r = run_cli("evaluate --labels " + ws.path("labels.json") + " --fingerprints " +
                     ws.path("fps") + " --out " + ws.path("s.json"));
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("mystery") != std::string::npos);
  }
}

TEST_CASE("cli: simulate and attack") {
  Workspace ws;

  SUBCASE("simulate reports per-family IP-ROC") {
    json config;
    config["format"] = "lmfp/1";
    config["kind"] = "experiment_config";
    config["families"] = 2;
    config["variants_per_family"] = 2;
    config["epsilon_schedule"] = json::array({0.05, 0.1});
    config["domains"] = 3;
    config["pool_per_domain"] = 10;
    config["questions_per_domain"] = 6;
    config["trigger_count"] = 4;
    config["level"] = "knowledge";
    config["seed"] = 77;
    lmfp::write_file(ws.path("exp.json"), config.dump(2) + "\n");
    auto r = run_cli("simulate --config " + ws.path("exp.json") + " --out " + ws.path("report.json"));
    CHECK(r.exit_code == 0);
    json report = json::parse(slurp(ws.path("report.json")));
    CHECK(report["families"].size() == 2);
    for (const auto& fam : report["families"]) CHECK(fam["ip_roc"].contains("knowledge"));
    CHECK(report["per_epsilon"].size() == 2);

    // --seed overrides the config and shows up in the embedded run config.
    auto r2 = run_cli("simulate --config " + ws.path("exp.json") + " --seed 1234 --out " +
                      ws.path("report2.json"));
    CHECK(r2.exit_code == 0);
    json report2 = json::parse(slurp(ws.path("report2.json")));
    CHECK(report2["run_config"]["experiment"]["seed"] == 1234);
    CHECK(slurp(ws.path("report.json")) != slurp(ws.path("report2.json")));
  }
  SUBCASE("attack with an identity rewriter keeps the key except provenance") {
    build_key(ws, ws.path("key.json"));
    write_rewriter_handle(ws.path("rw.json"), "identity-rw", 0.0);
    auto r = run_cli("attack --key " + ws.path("key.json") + " --rewriter " + ws.path("rw.json") +
                     " --out " + ws.path("attacked.json"));
    CHECK(r.exit_code == 0);
    auto original = lmfp::deserialize<lmfp::SecretKey>(slurp(ws.path("key.json")));
    auto attacked = lmfp::deserialize<lmfp::SecretKey>(slurp(ws.path("attacked.json")));
    CHECK(attacked.knowledge == original.knowledge);
    CHECK(attacked.triggers == original.triggers);
    CHECK(attacked.version == original.version);
    CHECK(attacked.rewriter_id == "identity-rw");
  }
  SUBCASE("attack against an unreachable rewriter exits with code 3") {
    build_key(ws, ws.path("key.json"));
    json doc;
    doc["format"] = "lmfp/1";
    doc["kind"] = "model_handle";
    doc["id"] = "dead-rewriter";
    doc["backend"] = "remote_endpoint";
    doc["endpoint"] = json{{"base_url", "http://127.0.0.1:9"}, {"model", "x"}};
    doc["retry_budget"] = 0;
    doc["timeout_ms"] = 300;
    lmfp::write_file(ws.path("dead.json"), doc.dump(2) + "\n");
    auto r = run_cli("attack --key " + ws.path("key.json") + " --rewriter " + ws.path("dead.json") +
                     " --out " + ws.path("attacked.json"));
    CHECK(r.exit_code == 3);
  }
}
