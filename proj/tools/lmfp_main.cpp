// lmfp: black-box ownership-verification toolkit for language models.
//
// Subcommands cover the whole pipeline: key-build -> extract -> verify ->
// evaluate, plus extractor training, simulated separation experiments, and
// the paraphrase attack driver. Every command is a pure function of its
// input files, flags, and seeds; outputs embed the invocation that produced
// them. Exit codes: 0 ok, 2 usage/validation, 3 transport, 4 incompatibility,
// 5 divergence.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lmfp/errors.hpp"
#include "lmfp/knowledge_fp.hpp"
#include "lmfp/model_client.hpp"
#include "lmfp/serial.hpp"
#include "lmfp/sim.hpp"
#include "lmfp/trigger_fp.hpp"
#include "lmfp/types.hpp"
#include "lmfp/verdict.hpp"

namespace {

using lmfp::Error;
using lmfp::ErrorKind;
using lmfp::json;

// Loads a model handle file and, for simulated backends, builds the model (or
// rewriter) it names and registers it with the client.
lmfp::client::ModelHandle resolve_handle(const std::string& path, lmfp::client::ModelClient& mc) {
  auto handle = lmfp::client::handle_from_file(path);
  if (handle.backend == lmfp::client::Backend::stub) {
    throw Error(ErrorKind::usage,
                "handle '" + handle.id + "': stub backends are only usable in-process");
  }
  if (handle.backend != lmfp::client::Backend::simulated) return handle;

  const json& cfg = handle.simulated;
  if (cfg.is_null()) {
    throw Error(ErrorKind::usage, "handle '" + handle.id + "': missing 'simulated' config");
  }
  if (cfg.contains("rewriter_seed")) {
    const double strength = cfg.value("rewriter_strength", 1.0);
    lmfp::sim::make_sim_rewriter(mc, cfg["rewriter_seed"].get<std::uint64_t>(), strength, handle.id);
    return handle;
  }
  if (!cfg.contains("pool") || !cfg.contains("style_seed")) {
    throw Error(ErrorKind::usage, "handle '" + handle.id +
                                      "': simulated config needs 'pool' and 'style_seed' (or "
                                      "'rewriter_seed' for a rewriter)");
  }
  auto pool = lmfp::knowledge::pool_from_bytes(lmfp::read_file(cfg["pool"].get<std::string>()));
  const std::string family_id = cfg.value("family_id", handle.id);
  auto profile = std::make_shared<lmfp::sim::ModelFamilyProfile>(
      lmfp::sim::make_family_profile(family_id, cfg["style_seed"].get<std::uint64_t>(), pool));
  auto model = lmfp::sim::spawn_variant(profile, cfg.value("epsilon", 0.0),
                                        cfg.value("variant_seed", std::uint64_t{0}), handle.id);
  lmfp::sim::register_simulated(mc, model);
  return handle;
}

json run_config(const std::string& command, std::initializer_list<std::pair<const char*, json>> flags) {
  json rc;
  rc["command"] = command;
  for (const auto& [name, value] : flags) rc[name] = value;
  return rc;
}

// ---------------------------------------------------------------------------
// key-build
// ---------------------------------------------------------------------------

struct KeyBuildArgs {
  std::string pool_path;
  std::string triggers_path;
  int questions_per_domain = 20;
  std::uint64_t seed = 1;
  std::vector<std::string> protected_handles;
  int max_parallel = 4;
  std::string out;
};

void cmd_key_build(const KeyBuildArgs& args) {
  lmfp::client::ModelClient mc;
  auto pool = lmfp::knowledge::pool_from_bytes(lmfp::read_file(args.pool_path));
  auto triggers = lmfp::trigger_set_from_bytes(lmfp::read_file(args.triggers_path));
  std::vector<lmfp::client::ModelHandle> handles;
  for (const auto& p : args.protected_handles) handles.push_back(resolve_handle(p, mc));

  auto filtered = lmfp::knowledge::filter_questions(mc, pool, handles, args.max_parallel);
  auto key = lmfp::sim::assemble_key(filtered, triggers, args.questions_per_domain, args.seed);
  json protected_ids = json::array();
  for (const auto& h : handles) protected_ids.push_back(h.id);
  key.run_config = run_config("key-build", {{"pool", args.pool_path},
                                            {"triggers", args.triggers_path},
                                            {"questions_per_domain", args.questions_per_domain},
                                            {"seed", args.seed},
                                            {"protected", protected_ids},
                                            {"max_parallel", args.max_parallel}});
  lmfp::write_file(args.out, lmfp::serialize(key));
  std::cout << "key " << key.version << ": " << key.knowledge.size() << " questions over "
            << key.domains.size() << " domains, " << key.triggers.size() << " triggers -> "
            << args.out << "\n";
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string key_path;
  std::string model_path;
  std::string level = "knowledge";
  std::string extractor_path;
  bool no_entropy = false;
  int max_parallel = 4;
  std::string out;
};

void cmd_extract(const ExtractArgs& args) {
  const auto level = lmfp::verdict::level_from_string(args.level);
  const bool want_trigger = level != lmfp::verdict::Level::knowledge;
  const bool want_knowledge = level != lmfp::verdict::Level::trigger;
  if (want_trigger && args.extractor_path.empty()) {
    throw Error(ErrorKind::usage, "--extractor is required at trigger level");
  }

  lmfp::client::ModelClient mc;
  auto key = lmfp::deserialize<lmfp::SecretKey>(lmfp::read_file(args.key_path));
  auto handle = resolve_handle(args.model_path, mc);

  json rc = run_config("extract", {{"key", args.key_path},
                                   {"model", args.model_path},
                                   {"level", args.level},
                                   {"extractor", args.extractor_path},
                                   {"no_entropy", args.no_entropy},
                                   {"max_parallel", args.max_parallel}});

  const bool merged = want_trigger && want_knowledge;
  const std::string trigger_out = merged ? args.out + ".trigger.json" : args.out;
  const std::string knowledge_out = merged ? args.out + ".knowledge.json" : args.out;

  if (want_trigger) {
    auto stored = lmfp::trigger::extractor_from_bytes(lmfp::read_file(args.extractor_path));
    auto fp = lmfp::trigger::extract_trigger_fingerprint(mc, handle, key, stored.params,
                                                         !args.no_entropy, args.max_parallel);
    fp.run_config = rc;
    lmfp::write_file(trigger_out, lmfp::serialize(fp));
    std::cout << "trigger fingerprint (" << fp.vectors.size() << " x " << fp.vectors.front().size()
              << ") -> " << trigger_out << "\n";
  }
  if (want_knowledge) {
    auto fp = lmfp::knowledge::extract_knowledge_fingerprint(mc, handle, key, args.max_parallel);
    fp.run_config = rc;
    lmfp::write_file(knowledge_out, lmfp::serialize(fp));
    std::cout << "knowledge fingerprint (" << fp.answers.size() << " answers) -> " << knowledge_out
              << "\n";
  }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string corpus_path;
  std::string config_path;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> learning_rate;
  std::optional<double> warmup;
  std::optional<double> tau;
  std::optional<std::string> loss_variant;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> hash_dim;
  std::optional<int> embed_dim;
  std::string out;
  std::string loss_trace;
};

void cmd_train(const TrainArgs& args) {
  auto corpus = lmfp::trigger::corpus_from_bytes(lmfp::read_file(args.corpus_path));
  lmfp::trigger::TrainConfig cfg;
  if (!args.config_path.empty()) {
    cfg = lmfp::trigger::train_config_from_json(
        lmfp::parse_document(lmfp::read_file(args.config_path), "train_config"));
  }
  if (args.epochs) cfg.epochs = *args.epochs;
  if (args.batch_size) cfg.batch_size = *args.batch_size;
  if (args.learning_rate) cfg.peak_learning_rate = *args.learning_rate;
  if (args.warmup) cfg.warmup_fraction = *args.warmup;
  if (args.tau) cfg.tau = *args.tau;
  if (args.loss_variant) cfg.loss_variant = lmfp::trigger::loss_variant_from_string(*args.loss_variant);
  if (args.seed) cfg.seed = *args.seed;
  if (args.hash_dim) cfg.featurizer.hash_dim = *args.hash_dim;
  if (args.embed_dim) cfg.embedding_dim = *args.embed_dim;

  auto result = lmfp::trigger::train_extractor(corpus, cfg);

  json provenance;
  provenance["corpus"] = args.corpus_path;
  provenance["corpus_hash"] = result.corpus_digest;
  provenance["config"] = lmfp::trigger::train_config_to_json(cfg);
  provenance["epoch_mean_loss"] = result.epoch_mean_loss;
  provenance["final_loss"] =
      result.epoch_mean_loss.empty() ? json(nullptr) : json(result.epoch_mean_loss.back());
  provenance["run_config"] = run_config("train", {{"corpus", args.corpus_path},
                                                  {"config", args.config_path},
                                                  {"out", args.out}});
  lmfp::write_file(args.out, lmfp::trigger::serialize_extractor(result.params, provenance));

  if (!args.loss_trace.empty()) {
    std::string csv = "epoch,mean_loss\n";
    for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e) {
      char line[64];
      std::snprintf(line, sizeof(line), "%zu,%.17g\n", e, result.epoch_mean_loss[e]);
      csv += line;
    }
    lmfp::write_file(args.loss_trace, csv);
  }
  std::cout << "extractor " << lmfp::trigger::embedder_id(result.params) << " (" << cfg.epochs
            << " epochs";
  if (!result.epoch_mean_loss.empty()) {
    std::cout << ", loss " << result.epoch_mean_loss.front() << " -> " << result.epoch_mean_loss.back();
  }
  std::cout << ") -> " << args.out << "\n";
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

lmfp::verdict::FingerprintSet load_fingerprints(const std::vector<std::string>& paths,
                                                const char* who) {
  lmfp::verdict::FingerprintSet fs;
  for (const auto& path : paths) {
    const std::string bytes = lmfp::read_file(path);
    json doc;
    try {
      doc = json::parse(bytes);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::parse, path + ": malformed document at byte " + std::to_string(e.byte));
    }
    const std::string kind = doc.is_object() ? doc.value("kind", "") : "";
    if (kind == "trigger_fingerprint") {
      if (fs.trigger) throw Error(ErrorKind::usage, std::string(who) + ": duplicate trigger fingerprint");
      fs.trigger = lmfp::deserialize<lmfp::TriggerFingerprint>(bytes);
    } else if (kind == "knowledge_fingerprint") {
      if (fs.knowledge) throw Error(ErrorKind::usage, std::string(who) + ": duplicate knowledge fingerprint");
      fs.knowledge = lmfp::deserialize<lmfp::KnowledgeFingerprint>(bytes);
    } else {
      throw Error(ErrorKind::usage, path + ": not a fingerprint file");
    }
  }
  return fs;
}

struct VerifyArgs {
  std::vector<std::string> protected_paths;
  std::vector<std::string> suspect_paths;
  std::vector<std::string> negative_paths;  // fingerprint files of negative models
  std::string key_path;                     // optional, enables the domain profile
  double alpha = 1.0;
  double beta = 1.0;
  double threshold = 0.0;
  std::string level;  // inferred from files when empty
  std::string out;
};

void cmd_verify(const VerifyArgs& args) {
  auto protected_fp = load_fingerprints(args.protected_paths, "protected");
  auto suspect_fp = load_fingerprints(args.suspect_paths, "suspect");

  lmfp::verdict::VerifyConfig cfg;
  cfg.alpha = args.alpha;
  cfg.beta = args.beta;
  cfg.threshold = args.threshold;
  if (!args.level.empty()) {
    cfg.level = lmfp::verdict::level_from_string(args.level);
  } else if (suspect_fp.trigger && suspect_fp.knowledge && protected_fp.trigger &&
             protected_fp.knowledge) {
    cfg.level = lmfp::verdict::Level::merged;
  } else if (suspect_fp.knowledge && protected_fp.knowledge) {
    cfg.level = lmfp::verdict::Level::knowledge;
  } else {
    cfg.level = lmfp::verdict::Level::trigger;
  }

  auto verdict = lmfp::verdict::verify(suspect_fp, protected_fp, cfg);

  json doc = lmfp::make_envelope("verdict_report");
  doc["verdict"] = json::parse(lmfp::serialize(verdict));
  doc["verdict"].erase("format");
  doc["verdict"].erase("kind");

  // Negative-model fingerprints turn the verdict into logit vectors.
  if (!args.negative_paths.empty()) {
    std::map<std::string, std::vector<std::string>> by_model;
    std::vector<std::string> order;
    for (const auto& path : args.negative_paths) {
      json peek = json::parse(lmfp::read_file(path));
      const std::string model = peek.is_object() ? peek.value("model_id", path) : path;
      if (!by_model.count(model)) order.push_back(model);
      by_model[model].push_back(path);
    }
    std::vector<std::pair<std::string, lmfp::verdict::FingerprintSet>> negatives;
    for (const auto& model : order) {
      negatives.emplace_back(model, load_fingerprints(by_model[model], "negative"));
    }
    json logits = json::array();
    auto emit = [&](lmfp::verdict::Level level) {
      auto lv = lmfp::verdict::build_logit_vector(suspect_fp, verdict.provenance.protected_model,
                                                  protected_fp, negatives, level);
      json jl;
      jl["level"] = lmfp::verdict::to_string(lv.level);
      jl["labels"] = lv.labels;
      jl["entries"] = lv.entries;
      logits.push_back(jl);
    };
    if (cfg.level == lmfp::verdict::Level::merged) {
      emit(lmfp::verdict::Level::trigger);
      emit(lmfp::verdict::Level::knowledge);
      emit(lmfp::verdict::Level::merged);
    } else {
      emit(cfg.level);
    }
    doc["logits"] = logits;
  }

  if (!args.key_path.empty() && suspect_fp.knowledge && protected_fp.knowledge) {
    auto key = lmfp::deserialize<lmfp::SecretKey>(lmfp::read_file(args.key_path));
    json profile;
    for (const auto& [domain, value] :
         lmfp::knowledge::domain_similarity_profile(*protected_fp.knowledge, *suspect_fp.knowledge, key)) {
      profile[domain] = value;
    }
    doc["domain_similarity"] = profile;
  }

  doc["run_config"] = run_config("verify", {{"protected", args.protected_paths},
                                            {"suspect", args.suspect_paths},
                                            {"negatives", args.negative_paths},
                                            {"key", args.key_path},
                                            {"alpha", args.alpha},
                                            {"beta", args.beta},
                                            {"threshold", args.threshold},
                                            {"level", lmfp::verdict::to_string(cfg.level)}});
  lmfp::write_file(args.out, lmfp::dump_document(doc));
  std::cout << "verdict: d_merged=" << verdict.d_merged << " threshold=" << verdict.threshold
            << " is_pirated=" << (verdict.is_pirated ? "true" : "false") << " -> " << args.out << "\n";
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string labels_path;
  std::string fingerprint_dir;
  std::string key_path;  // optional, enables radar data
  std::string out;
};

void cmd_evaluate(const EvaluateArgs& args) {
  json labels = lmfp::parse_document(lmfp::read_file(args.labels_path), "labels");

  struct FamilySpec {
    std::string family;
    std::string protected_model;
    std::vector<std::string> pirated;
  };
  std::vector<FamilySpec> families;
  std::set<std::string> labeled;
  for (const auto& jf : lmfp::require(labels, "families")) {
    FamilySpec spec;
    spec.family = lmfp::require_string(jf, "family");
    spec.protected_model = lmfp::require_string(jf, "protected_model");
    labeled.insert(spec.protected_model);
    for (const auto& p : lmfp::require(jf, "pirated")) {
      spec.pirated.push_back(p.get<std::string>());
      labeled.insert(spec.pirated.back());
    }
    families.push_back(std::move(spec));
  }
  if (families.empty()) throw Error(ErrorKind::usage, "labels: no families listed");

  // Scan the fingerprint directory in sorted order so reruns are identical.
  std::vector<std::string> paths;
  for (const auto& entry : std::filesystem::directory_iterator(args.fingerprint_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      paths.push_back(entry.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) {
    throw Error(ErrorKind::usage, "no .json fingerprint files under '" + args.fingerprint_dir + "'");
  }

  std::map<std::string, lmfp::verdict::FingerprintSet> models;
  for (const auto& path : paths) {
    const std::string bytes = lmfp::read_file(path);
    json peek;
    try {
      peek = json::parse(bytes);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::parse, path + ": malformed document at byte " + std::to_string(e.byte));
    }
    const std::string kind = peek.is_object() ? peek.value("kind", "") : "";
    if (kind == "trigger_fingerprint") {
      auto fp = lmfp::deserialize<lmfp::TriggerFingerprint>(bytes);
      models[fp.model_id].trigger = std::move(fp);
    } else if (kind == "knowledge_fingerprint") {
      auto fp = lmfp::deserialize<lmfp::KnowledgeFingerprint>(bytes);
      models[fp.model_id].knowledge = std::move(fp);
    }
  }
  if (models.empty()) {
    throw Error(ErrorKind::usage, "no fingerprint documents under '" + args.fingerprint_dir + "'");
  }
  for (const auto& [model, fs] : models) {
    if (!labeled.count(model)) {
      throw Error(ErrorKind::labeling, "model '" + model + "' appears in the fingerprint directory "
                                           "but is not labeled");
    }
  }
  for (const auto& spec : families) {
    if (!models.count(spec.protected_model)) {
      throw Error(ErrorKind::labeling, "protected model '" + spec.protected_model +
                                           "' has no fingerprints in the directory");
    }
  }

  const bool all_trigger = std::all_of(models.begin(), models.end(),
                                       [](const auto& kv) { return kv.second.trigger.has_value(); });
  const bool all_knowledge = std::all_of(models.begin(), models.end(),
                                         [](const auto& kv) { return kv.second.knowledge.has_value(); });
  std::vector<std::string> levels;
  if (all_trigger) levels.push_back("trigger");
  if (all_knowledge) levels.push_back("knowledge");
  if (all_trigger && all_knowledge) levels.push_back("merged");
  if (levels.empty()) {
    throw Error(ErrorKind::usage, "models do not share a common fingerprint level");
  }

  std::optional<lmfp::SecretKey> key;
  if (!args.key_path.empty()) {
    key = lmfp::deserialize<lmfp::SecretKey>(lmfp::read_file(args.key_path));
  }

  json doc = lmfp::make_envelope("evaluation_summary");
  doc["levels"] = levels;
  json jfamilies = json::array();
  for (const auto& spec : families) {
    json jf;
    jf["family"] = spec.family;
    jf["protected_model"] = spec.protected_model;

    std::vector<std::string> negative_ids;
    for (const auto& [model, fs] : models) {
      if (model == spec.protected_model) continue;
      if (std::find(spec.pirated.begin(), spec.pirated.end(), model) != spec.pirated.end()) continue;
      negative_ids.push_back(model);
    }

    json per_level;
    for (const auto& level_name : levels) {
      const auto level = lmfp::verdict::level_from_string(level_name);
      lmfp::verdict::ScoreSet scores;
      json pirated = json::array();
      if (spec.pirated.empty()) {
        // Negatives-only family: its models only serve as independents for
        // the other families.
        json jl;
        jl["ip_roc"] = nullptr;
        jl["calibration_threshold"] = nullptr;
        jl["roc_points"] = json::array();
        jl["pirated"] = pirated;
        per_level[level_name] = jl;
        continue;
      }
      for (const auto& pid : spec.pirated) {
        if (!models.count(pid)) {
          throw Error(ErrorKind::labeling, "pirated model '" + pid + "' has no fingerprints");
        }
        scores.positives.push_back(
            -lmfp::verdict::level_distance(level, models[spec.protected_model], models[pid]));
      }
      for (const auto& nid : negative_ids) {
        scores.negatives.push_back(
            -lmfp::verdict::level_distance(level, models[spec.protected_model], models[nid]));
      }
      for (std::size_t i = 0; i < spec.pirated.size(); ++i) {
        json jp;
        jp["model"] = spec.pirated[i];
        jp["similarity"] = scores.positives[i];
        jp["rank"] = lmfp::verdict::rank(scores.positives[i], scores.negatives);
        lmfp::verdict::ScoreSet one;
        one.positives = {scores.positives[i]};
        one.negatives = scores.negatives;
        jp["ip_roc"] = lmfp::verdict::roc_auc(one);
        pirated.push_back(jp);
      }
      json jl;
      jl["ip_roc"] = lmfp::verdict::roc_auc(scores);
      const double worst_pos = -*std::min_element(scores.positives.begin(), scores.positives.end());
      const double best_neg = -*std::max_element(scores.negatives.begin(), scores.negatives.end());
      jl["calibration_threshold"] = 0.5 * (worst_pos + best_neg);
      json points = json::array();
      for (const auto& [fpr, tpr] : lmfp::verdict::roc_points(scores)) {
        points.push_back(json::array({fpr, tpr}));
      }
      jl["roc_points"] = points;
      jl["pirated"] = pirated;
      per_level[level_name] = jl;
    }
    jf["levels"] = per_level;

    if (key && all_knowledge) {
      json radar = json::array();
      for (const auto& [model, fs] : models) {
        if (model == spec.protected_model) continue;
        json row;
        row["suspect"] = model;
        json sims;
        for (const auto& [domain, value] : lmfp::knowledge::domain_similarity_profile(
                 *models[spec.protected_model].knowledge, *fs.knowledge, *key)) {
          sims[domain] = value;
        }
        row["similarity"] = sims;
        radar.push_back(row);
      }
      jf["domain_similarity"] = radar;
    }
    jfamilies.push_back(jf);
  }
  doc["families"] = jfamilies;
  doc["run_config"] = run_config("evaluate", {{"labels", args.labels_path},
                                              {"fingerprints", args.fingerprint_dir},
                                              {"key", args.key_path}});
  lmfp::write_file(args.out, lmfp::dump_document(doc));
  std::cout << "evaluation of " << models.size() << " models at levels [";
  for (std::size_t i = 0; i < levels.size(); ++i) std::cout << (i ? " " : "") << levels[i];
  std::cout << "] -> " << args.out << "\n";
}

// ---------------------------------------------------------------------------
// simulate / attack
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void cmd_simulate(const SimulateArgs& args) {
  lmfp::sim::SeparationExperimentConfig cfg;
  if (!args.config_path.empty()) {
    cfg = lmfp::sim::experiment_config_from_json(
        lmfp::parse_document(lmfp::read_file(args.config_path), "experiment_config"));
  }
  if (args.seed) cfg.seed = *args.seed;
  auto report = lmfp::sim::run_separation_experiment(cfg);
  report.config = run_config("simulate", {{"config", args.config_path},
                                          {"experiment", lmfp::sim::experiment_config_to_json(cfg)}});
  lmfp::write_file(args.out, lmfp::sim::serialize(report));
  std::cout << "experiment report (" << report.families.size() << " families";
  for (const auto& level : report.levels) {
    double mean = 0.0;
    for (const auto& fr : report.families) mean += fr.ip_roc.at(level);
    std::cout << ", " << level << " IP-ROC " << mean / static_cast<double>(report.families.size());
  }
  std::cout << ") -> " << args.out << "\n";
}

struct AttackArgs {
  std::string key_path;
  std::string rewriter_path;
  int max_parallel = 4;
  std::string out;
};

void cmd_attack(const AttackArgs& args) {
  lmfp::client::ModelClient mc;
  auto key = lmfp::deserialize<lmfp::SecretKey>(lmfp::read_file(args.key_path));
  auto rewriter = resolve_handle(args.rewriter_path, mc);
  auto attacked = lmfp::sim::paraphrase_key(mc, key, rewriter, args.max_parallel);
  attacked.run_config = run_config("attack", {{"key", args.key_path},
                                              {"rewriter", args.rewriter_path},
                                              {"max_parallel", args.max_parallel}});
  lmfp::write_file(args.out, lmfp::serialize(attacked));
  std::cout << "paraphrased key (" << attacked.knowledge.size() << " stems, "
            << attacked.warnings.size() << " kept unchanged) -> " << args.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"black-box ownership-verification toolkit for language models"};
  app.require_subcommand(1);

  KeyBuildArgs kb;
  auto* key_build = app.add_subcommand("key-build", "filter a question pool and sample a secret key");
  key_build->add_option("--pool", kb.pool_path, "question pool file")->required();
  key_build->add_option("--triggers", kb.triggers_path, "trigger set file")->required();
  key_build->add_option("--questions-per-domain,-Q", kb.questions_per_domain, "questions sampled per domain");
  key_build->add_option("--seed", kb.seed, "sampling seed");
  key_build->add_option("--protected", kb.protected_handles, "protected model handle file (repeatable)")
      ->required();
  key_build->add_option("--max-parallel", kb.max_parallel, "parallel requests");
  key_build->add_option("--out", kb.out, "output key file")->required();

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "extract fingerprint(s) from a model");
  extract->add_option("--key", ex.key_path, "secret key file")->required();
  extract->add_option("--model", ex.model_path, "model handle file")->required();
  extract->add_option("--level", ex.level, "trigger|knowledge|merged")->required();
  extract->add_option("--extractor", ex.extractor_path, "trained extractor file (trigger level)");
  extract->add_flag("--no-entropy", ex.no_entropy, "text-only trajectories (no logprobs needed)");
  extract->add_option("--max-parallel", ex.max_parallel, "parallel requests");
  extract->add_option("--out", ex.out, "output file (merged level: prefix)")->required();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "train the trigger fingerprint extractor");
  train->add_option("--corpus", tr.corpus_path, "trajectory corpus file")->required();
  train->add_option("--config", tr.config_path, "train_config file");
  train->add_option("--epochs", tr.epochs, "override: epochs");
  train->add_option("--batch-size", tr.batch_size, "override: batch size");
  train->add_option("--learning-rate", tr.learning_rate, "override: peak learning rate");
  train->add_option("--warmup", tr.warmup, "override: warmup fraction");
  train->add_option("--tau", tr.tau, "override: temperature");
  train->add_option("--loss-variant", tr.loss_variant, "negatives_only|standard_info_nce");
  train->add_option("--seed", tr.seed, "override: seed");
  train->add_option("--hash-dim", tr.hash_dim, "override: featurizer hash dimension");
  train->add_option("--embed-dim", tr.embed_dim, "override: embedding dimension");
  train->add_option("--out", tr.out, "output extractor file")->required();
  train->add_option("--loss-trace", tr.loss_trace, "per-epoch loss CSV");

  VerifyArgs vf;
  auto* verify = app.add_subcommand("verify", "compare suspect fingerprints against a protected model");
  verify->add_option("--protected", vf.protected_paths, "protected fingerprint file (repeatable)")
      ->required();
  verify->add_option("--suspect", vf.suspect_paths, "suspect fingerprint file (repeatable)")->required();
  verify->add_option("--negative", vf.negative_paths, "negative-model fingerprint file (repeatable)");
  verify->add_option("--key", vf.key_path, "key file (adds the per-domain profile)");
  verify->add_option("--alpha", vf.alpha, "trigger weight");
  verify->add_option("--beta", vf.beta, "knowledge weight");
  verify->add_option("--threshold", vf.threshold, "piracy decision threshold");
  verify->add_option("--level", vf.level, "trigger|knowledge|merged (default: inferred)");
  verify->add_option("--out", vf.out, "output verdict report")->required();

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "IP-ROC and Rank over a labeled fingerprint set");
  evaluate->add_option("--labels", ev.labels_path, "labels file")->required();
  evaluate->add_option("--fingerprints", ev.fingerprint_dir, "fingerprint directory")->required();
  evaluate->add_option("--key", ev.key_path, "key file (adds radar data)");
  evaluate->add_option("--out", ev.out, "output summary file")->required();

  SimulateArgs si;
  auto* simulate = app.add_subcommand("simulate", "run a simulated separation experiment");
  simulate->add_option("--config", si.config_path, "experiment_config file");
  simulate->add_option("--seed", si.seed, "override: seed");
  simulate->add_option("--out", si.out, "output report file")->required();

  AttackArgs at;
  auto* attack = app.add_subcommand("attack", "paraphrase a key's question stems with a rewriter model");
  attack->add_option("--key", at.key_path, "secret key file")->required();
  attack->add_option("--rewriter", at.rewriter_path, "rewriter model handle file")->required();
  attack->add_option("--max-parallel", at.max_parallel, "parallel requests");
  attack->add_option("--out", at.out, "output key file")->required();

  try {
    app.parse(argc, argv);
    if (*key_build) cmd_key_build(kb);
    if (*extract) cmd_extract(ex);
    if (*train) cmd_train(tr);
    if (*verify) cmd_verify(vf);
    if (*evaluate) cmd_evaluate(ev);
    if (*simulate) cmd_simulate(si);
    if (*attack) cmd_attack(at);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error (" << Error::kind_name(e.kind()) << "): " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (...) {
    std::cerr << "error: unknown failure\n";
    return 1;
  }
  return 0;
}
