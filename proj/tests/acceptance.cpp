// Acceptance suite: runs every release criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exits nonzero if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lmfp/detrng.hpp"
#include "lmfp/knowledge_fp.hpp"
#include "lmfp/serial.hpp"
#include "lmfp/sim.hpp"
#include "lmfp/trigger_fp.hpp"
#include "lmfp/verdict.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace lmfp;

namespace {

struct Harness {
  int failures = 0;

  void run(int number, const std::string& name, const std::function<void()>& body) {
    const auto start = std::chrono::steady_clock::now();
    std::string error;
    try {
      body();
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (error.empty()) {
      std::printf("PASS  criterion %2d: %s (%.2fs)\n", number, name.c_str(), secs);
    } else {
      std::printf("FAIL  criterion %2d: %s (%.2fs)\n      %s\n", number, name.c_str(), secs,
                  error.c_str());
      ++failures;
    }
    std::fflush(stdout);
  }
};

void require(bool condition, const std::string& message) {
  if (!condition) throw std::runtime_error(message);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// --------------------------------------------------------------------------
// 1. Template golden tests
// --------------------------------------------------------------------------

void criterion_templates() {
  require(trigger::trajectory_template("Paris.", 0.1234) ==
              "Output: Paris. <SEP> Mean Entropy: 0.1234.",
          "entropy template mismatch");
  require(trigger::trajectory_template("Paris.", std::nullopt) == "Output: Paris.",
          "no-entropy template mismatch");

  // Same check through render_trajectory: build a two-candidate token whose
  // renormalized entropy is 0.1234 nats.
  double lo = 1e-12, hi = 0.5;
  for (int i = 0; i < 200; ++i) {
    const double p = 0.5 * (lo + hi);
    const double h = -p * std::log(p) - (1 - p) * std::log(1 - p);
    (h < 0.1234 ? lo : hi) = p;
  }
  const double p = 0.5 * (lo + hi);
  ModelResponse response;
  response.text = "Paris.";
  TokenCandidates tc;
  tc.candidates.emplace_back("a", std::log(p));
  tc.candidates.emplace_back("b", std::log(1 - p));
  response.token_logprobs = std::vector<TokenCandidates>{tc};
  require(trigger::render_trajectory(response, true) ==
              "Output: Paris. <SEP> Mean Entropy: 0.1234.",
          "render_trajectory(entropy) mismatch");
  require(trigger::render_trajectory(response, false) == "Output: Paris.",
          "render_trajectory(no entropy) mismatch");
}

// --------------------------------------------------------------------------
// 2. Gradient check
// --------------------------------------------------------------------------

double loss_only(const trigger::EmbedderParams& params, const std::vector<trigger::TripleRef>& batch,
                 trigger::LossVariant variant) {
  double objective = 0.0;
  for (const auto& t : batch) {
    auto fa = trigger::embed_sparse(*t.anchor, params);
    auto fp = trigger::embed_sparse(*t.positive, params);
    std::vector<std::vector<double>> negs;
    for (auto* n : t.negatives) negs.push_back(trigger::embed_sparse(*n, params));
    objective += trigger::info_nce_term(fa, fp, negs, params.tau, variant);
  }
  return -objective;
}

void criterion_gradient() {
  trigger::FeaturizerConfig cfg;
  cfg.hash_dim = 64;
  cfg.ngram_sizes = {2, 3};
  const int d = 8;
  const double h = 1e-5;
  for (int inst = 0; inst < 5; ++inst) {
    for (auto variant :
         {trigger::LossVariant::negatives_only, trigger::LossVariant::standard_info_nce}) {
      auto params =
          trigger::EmbedderParams::random_init(cfg, d, 0.5, 500 + static_cast<std::uint64_t>(inst));
      DetRng rng(4200 + static_cast<std::uint64_t>(inst));
      std::vector<trigger::SparseVec> store;
      for (int i = 0; i < 12; ++i) {
        std::string s;
        const auto len = 10 + rng.next_below(20);
        for (std::uint64_t k = 0; k < len; ++k) s += static_cast<char>('a' + rng.next_below(26));
        store.push_back(trigger::featurize_sparse(s, cfg));
      }
      std::vector<trigger::TripleRef> batch;
      for (int t = 0; t < 3; ++t) {
        trigger::TripleRef tr;
        tr.anchor = &store[static_cast<std::size_t>(t * 4)];
        tr.positive = &store[static_cast<std::size_t>(t * 4 + 1)];
        tr.negatives = {&store[static_cast<std::size_t>(t * 4 + 2)],
                        &store[static_cast<std::size_t>(t * 4 + 3)]};
        batch.push_back(tr);
      }
      auto lg = trigger::loss_and_gradient(params, batch, variant);
      for (std::size_t i = 0; i < cfg.hash_dim; ++i) {
        for (int j = 0; j < d; ++j) {
          auto up = params;
          up.W[i * d + static_cast<std::size_t>(j)] += h;
          auto down = params;
          down.W[i * d + static_cast<std::size_t>(j)] -= h;
          const double fd = (loss_only(up, batch, variant) - loss_only(down, batch, variant)) / (2 * h);
          const double an = lg.grad.at(i, j);
          if (std::fabs(fd) < 1e-12 && std::fabs(an) < 1e-12) continue;
          const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an)});
          require(rel <= 1e-4, "instance " + std::to_string(inst) + " entry (" + std::to_string(i) +
                                   "," + std::to_string(j) + ") relative error " + fmt(rel));
        }
      }
    }
  }
}

// --------------------------------------------------------------------------
// 3. ROC oracle equivalence
// --------------------------------------------------------------------------

double brute_force_auc(const verdict::ScoreSet& s) {
  double credit = 0.0;
  for (double p : s.positives) {
    for (double n : s.negatives) {
      if (p > n) credit += 1.0;
      else if (p == n) credit += 0.5;
    }
  }
  return credit /
         (static_cast<double>(s.positives.size()) * static_cast<double>(s.negatives.size()));
}

void criterion_roc() {
  DetRng rng(333);
  for (int trial = 0; trial < 200; ++trial) {
    verdict::ScoreSet s;
    const auto np = 1 + rng.next_below(50);
    const auto nn = 1 + rng.next_below(50);
    const bool gridded = trial % 2 == 0;  // force ties on half the trials
    for (std::uint64_t i = 0; i < np; ++i) {
      s.positives.push_back(gridded ? static_cast<double>(rng.next_below(10)) / 5.0
                                    : rng.next_unit());
    }
    for (std::uint64_t i = 0; i < nn; ++i) {
      s.negatives.push_back(gridded ? static_cast<double>(rng.next_below(10)) / 5.0
                                    : rng.next_unit());
    }
    const double fast = verdict::roc_auc(s);
    const double brute = brute_force_auc(s);
    require(std::fabs(fast - brute) <= 1e-12,
            "trial " + std::to_string(trial) + ": " + fmt(fast) + " vs " + fmt(brute));
  }
}

// --------------------------------------------------------------------------
// 4. Rank formula
// --------------------------------------------------------------------------

void criterion_rank() {
  DetRng rng(444);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> scores;
    const auto n = rng.next_below(40);
    for (std::uint64_t i = 0; i < n; ++i) {
      scores.push_back(static_cast<double>(rng.next_below(12)) / 6.0);
    }
    const double s_p = trial % 3 == 0 && !scores.empty()
                           ? scores[rng.next_below(scores.size())]  // force exact ties
                           : static_cast<double>(rng.next_below(12)) / 6.0;
    std::size_t expected = 1;
    for (double s : scores) {
      if (s >= s_p) ++expected;
    }
    require(verdict::rank(s_p, scores) == expected, "trial " + std::to_string(trial));
  }
}

// --------------------------------------------------------------------------
// 5. Entropy checks
// --------------------------------------------------------------------------

void criterion_entropy() {
  for (int k : {2, 4, 16}) {
    TokenCandidates tc;
    for (int i = 0; i < k; ++i) tc.candidates.emplace_back("t", -2.5);
    ModelResponse r;
    r.text = "x";
    r.token_logprobs = std::vector<TokenCandidates>{tc};
    const double h = trigger::mean_token_entropy(r);
    require(std::fabs(h - std::log(static_cast<double>(k))) <= 1e-9,
            "uniform k=" + std::to_string(k) + ": " + fmt(h));
  }
  ModelResponse one_hot;
  one_hot.text = "x";
  one_hot.token_logprobs =
      std::vector<TokenCandidates>{TokenCandidates{{{"t", 0.0}}}, TokenCandidates{{{"u", -1.0}}}};
  require(trigger::mean_token_entropy(one_hot) == 0.0, "one-hot entropy must be exactly 0");
}

// --------------------------------------------------------------------------
// 6. String-distance properties
// --------------------------------------------------------------------------

void criterion_string_distances() {
  DetRng rng(666);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.next_below(60);
    auto a = test::make_kfp(test::random_answers(rng, n));
    auto b = test::make_kfp(test::random_answers(rng, n));
    auto c = test::make_kfp(test::random_answers(rng, n));

    const int ab = knowledge::hamming_distance(a, b);
    const int ba = knowledge::hamming_distance(b, a);
    const int ac = knowledge::hamming_distance(a, c);
    const int bc = knowledge::hamming_distance(b, c);
    require(ab == ba, "hamming symmetry");
    require(ab >= 0 && ab <= static_cast<int>(n), "hamming bounds");
    require((ab == 0) == (a.answers == b.answers), "identity of indiscernibles");
    require(ac <= ab + bc, "triangle inequality");
    require(knowledge::edit_distance(a, b) <= ab, "edit must not exceed hamming");
    const double j = knowledge::jaccard_similarity(a, b);
    require(j >= 0.0 && j <= 1.0, "jaccard range");
  }
}

// --------------------------------------------------------------------------
// 7. Simulated separation (default experiment)
// --------------------------------------------------------------------------

double mean_over_families(const sim::ExperimentReport& report, const std::string& level) {
  double total = 0.0;
  for (const auto& fr : report.families) total += fr.ip_roc.at(level);
  return total / static_cast<double>(report.families.size());
}

void criterion_separation() {
  sim::SeparationExperimentConfig cfg;
  cfg.seed = 20250811;
  auto report = sim::run_separation_experiment(cfg);

  int rank1 = 0;
  int variants = 0;
  for (const auto& fr : report.families) {
    require(fr.ip_roc.at("knowledge") >= 0.95,
            fr.family_id + " knowledge IP-ROC " + fmt(fr.ip_roc.at("knowledge")) + " < 0.95");
    require(fr.ip_roc.at("merged") >= fr.ip_roc.at("knowledge") - 0.02,
            fr.family_id + " merged IP-ROC " + fmt(fr.ip_roc.at("merged")) + " below knowledge - 0.02");
    for (const auto& vr : fr.variants) {
      ++variants;
      if (vr.rank.at("knowledge") == 1) ++rank1;
    }
  }
  require(variants == 24, "expected 4 families x 6 variants");
  require(rank1 * 10 >= variants * 9,
          "rank-1 fraction " + fmt(static_cast<double>(rank1) / variants) + " < 0.90");

  auto rerun = sim::run_separation_experiment(cfg);
  require(sim::serialize(report) == sim::serialize(rerun), "report not deterministic per seed");
}

// --------------------------------------------------------------------------
// 8. Training effectiveness on the bundled corpus
// --------------------------------------------------------------------------

void criterion_training() {
  const std::string corpus_path = std::string(LMFP_DATA_DIR) + "/sim_trigger_corpus.json";
  auto corpus = trigger::corpus_from_bytes(read_file(corpus_path));

  double trained_total = 0.0;
  double untrained_total = 0.0;
  for (std::uint64_t seed : {101ULL, 202ULL, 303ULL}) {
    trigger::TrainConfig cfg;
    cfg.featurizer.hash_dim = std::size_t{1} << 12;
    cfg.embedding_dim = 64;
    cfg.seed = seed;
    auto init = trigger::EmbedderParams::random_init(cfg.featurizer, cfg.embedding_dim, cfg.tau, seed);
    untrained_total += sim::corpus_eval_trigger_roc(corpus, init);
    auto result = trigger::train_extractor(corpus, cfg);
    require(result.epoch_mean_loss.back() < result.epoch_mean_loss.front(),
            "loss did not improve for seed " + std::to_string(seed));
    trained_total += sim::corpus_eval_trigger_roc(corpus, result.params);
  }
  const double trained = trained_total / 3.0;
  const double untrained = untrained_total / 3.0;
  require(trained - untrained >= 0.10, "trained " + fmt(trained) + " vs untrained " + fmt(untrained) +
                                           ": improvement below 0.10");
}

// --------------------------------------------------------------------------
// 9. Paraphrase robustness
// --------------------------------------------------------------------------

void criterion_paraphrase() {
  sim::SeparationExperimentConfig cfg;
  cfg.seed = 20250811;
  cfg.level = verdict::Level::knowledge;
  auto baseline = sim::run_separation_experiment(cfg);

  auto attacked_cfg = cfg;
  attacked_cfg.attack = true;
  auto attacked = sim::run_separation_experiment(attacked_cfg);

  const double before = mean_over_families(baseline, "knowledge");
  const double after = mean_over_families(attacked, "knowledge");
  require(after >= before - 0.10, "knowledge IP-ROC degraded from " + fmt(before) + " to " +
                                      fmt(after) + " (more than 0.10)");
}

// --------------------------------------------------------------------------
// 10. CLI determinism
// --------------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LMFP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion_cli_determinism() {
  const fs::path dir = fs::temp_directory_path() / "lmfp_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir / "fps");

  // simulate twice with the same seed, same command.
  json config = make_envelope("experiment_config");
  config["families"] = 3;
  config["variants_per_family"] = 3;
  config["epsilon_schedule"] = json::array({0.05, 0.1, 0.15});
  config["domains"] = 4;
  config["pool_per_domain"] = 14;
  config["questions_per_domain"] = 10;
  config["trigger_count"] = 8;
  config["level"] = "knowledge";
  config["seed"] = 99;
  write_file((dir / "exp.json").string(), dump_document(config));

  const std::string report = (dir / "report.json").string();
  const std::string sim_cmd = "simulate --config " + (dir / "exp.json").string() + " --out " + report;
  require(run_cli(sim_cmd) == 0, "simulate run 1 failed");
  const std::string first_report = read_file(report);
  require(run_cli(sim_cmd) == 0, "simulate run 2 failed");
  require(read_file(report) == first_report, "simulate reports differ between runs");

  // evaluate twice over a fingerprint directory produced through the CLI.
  auto handle = [&](const std::string& id, std::uint64_t style, std::uint64_t vseed, double eps) {
    json doc = make_envelope("model_handle");
    doc["id"] = id;
    doc["backend"] = "simulated";
    doc["simulated"] = json{{"family_id", id.substr(0, id.find('-'))},
                            {"style_seed", style},
                            {"variant_seed", vseed},
                            {"epsilon", eps},
                            {"pool", std::string(LMFP_DATA_DIR) + "/sample_pool.json"}};
    const std::string path = (dir / (id + ".handle.json")).string();
    write_file(path, dump_document(doc));
    return path;
  };
  const std::string pa = handle("alpha-base", 11, 0, 0.0);
  require(run_cli("key-build --pool " + std::string(LMFP_DATA_DIR) + "/sample_pool.json --triggers " +
                  LMFP_DATA_DIR + "/sample_triggers.json --protected " + pa +
                  " --seed 3 --questions-per-domain 8 --out " + (dir / "key.json").string()) == 0,
          "key-build failed");
  struct Spec {
    const char* id;
    std::uint64_t style;
    std::uint64_t vseed;
    double eps;
  };
  for (const Spec& m : std::vector<Spec>{{"alpha-base", 11, 0, 0.0},
                                         {"alpha-v1", 11, 1, 0.08},
                                         {"beta-base", 22, 0, 0.0},
                                         {"beta-v1", 22, 1, 0.08}}) {
    require(run_cli("extract --key " + (dir / "key.json").string() + " --model " +
                    handle(m.id, m.style, m.vseed, m.eps) + " --level knowledge --out " +
                    (dir / "fps" / (std::string(m.id) + ".json")).string()) == 0,
            std::string("extract failed for ") + m.id);
  }
  json labels = make_envelope("labels");
  labels["families"] = json::array(
      {json{{"family", "alpha"}, {"protected_model", "alpha-base"}, {"pirated", json::array({"alpha-v1"})}},
       json{{"family", "beta"}, {"protected_model", "beta-base"}, {"pirated", json::array({"beta-v1"})}}});
  write_file((dir / "labels.json").string(), dump_document(labels));

  const std::string summary = (dir / "summary.json").string();
  const std::string eval_cmd = "evaluate --labels " + (dir / "labels.json").string() +
                               " --fingerprints " + (dir / "fps").string() + " --key " +
                               (dir / "key.json").string() + " --out " + summary;
  require(run_cli(eval_cmd) == 0, "evaluate run 1 failed");
  const std::string first_summary = read_file(summary);
  require(run_cli(eval_cmd) == 0, "evaluate run 2 failed");
  require(read_file(summary) == first_summary, "evaluation summaries differ between runs");
  fs::remove_all(dir);
}

}  // namespace

int main() {
  Harness harness;
  harness.run(1, "trajectory template goldens", criterion_templates);
  harness.run(2, "contrastive gradient vs central finite differences", criterion_gradient);
  harness.run(3, "ROC-AUC matches brute-force pair counting", criterion_roc);
  harness.run(4, "rank matches the exhaustive tie-aware formula", criterion_rank);
  harness.run(5, "mean token entropy goldens", criterion_entropy);
  harness.run(6, "hamming/edit/jaccard properties", criterion_string_distances);
  harness.run(7, "simulated separation: knowledge and merged IP-ROC", criterion_separation);
  harness.run(8, "trained extractor beats seeded initialization", criterion_training);
  harness.run(9, "paraphrase attack degrades knowledge IP-ROC by <= 0.10", criterion_paraphrase);
  harness.run(10, "CLI reports are byte-identical across reruns", criterion_cli_determinism);

  if (harness.failures == 0) {
    std::printf("all 10 criteria passed\n");
    return 0;
  }
  std::printf("%d criteria FAILED\n", harness.failures);
  return 1;
}
