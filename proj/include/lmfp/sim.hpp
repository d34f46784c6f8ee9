#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lmfp/knowledge_fp.hpp"
#include "lmfp/model_client.hpp"
#include "lmfp/serial.hpp"
#include "lmfp/trigger_fp.hpp"
#include "lmfp/types.hpp"
#include "lmfp/verdict.hpp"

namespace lmfp::sim {

// ---------------------------------------------------------------------------
// Simulated model families
// ---------------------------------------------------------------------------

// A family stands in for an independently trained model lineage: a styled way
// of answering free-form prompts plus fixed per-question answer tendencies.
struct ModelFamilyProfile {
  std::string family_id;
  std::uint64_t style_seed = 0;
  // question id -> (base answer letter, flip probability base)
  std::map<std::string, std::pair<char, double>> knowledge_profile;
  std::map<std::string, double> domain_skill;  // accuracy-like, per domain
  // Reverse lookup from the hash of a prompt's choice block; survives stem
  // paraphrasing because choices are never rewritten.
  std::map<std::uint64_t, std::string> question_index;
  std::map<std::string, std::uint64_t> canonical_stem_hash;
};

ModelFamilyProfile make_family_profile(const std::string& family_id, std::uint64_t style_seed,
                                       const knowledge::QuestionPool& pool);

// A derived model: epsilon models the intensity of whatever modification
// (fine-tune, quantization, preference tuning) produced it. epsilon = 0 is
// behaviorally identical to the family base.
struct SimulatedModel {
  std::shared_ptr<const ModelFamilyProfile> family;
  double epsilon = 0.0;
  std::uint64_t variant_seed = 0;
  std::string id;
};

SimulatedModel spawn_variant(std::shared_ptr<const ModelFamilyProfile> family, double epsilon,
                             std::uint64_t variant_seed, std::string id = "");
SimulatedModel base_model(std::shared_ptr<const ModelFamilyProfile> family);

// Deterministic function of (family seeds, variant seed, epsilon, prompt).
// Knowledge prompts (recognized by the pinned instruction line) get the
// family's base answer, flipped to a different letter with probability
// epsilon * flip_base; other prompts get family-styled token streams with
// per-token candidate distributions so entropy is computable.
ModelResponse simulate_response(const SimulatedModel& model, const std::string& prompt);

client::ModelHandle handle_for(const SimulatedModel& model);
void register_simulated(client::ModelClient& mc, const SimulatedModel& model);

// How often a model changes its answer when the same question arrives with an
// unfamiliar stem wording.
inline constexpr double kParaphraseSensitivity = 0.06;

// ---------------------------------------------------------------------------
// Synthetic key material
// ---------------------------------------------------------------------------

knowledge::QuestionPool make_question_pool(int n_domains, int per_domain, std::uint64_t seed);
std::vector<PromptTrigger> make_trigger_set(int count, std::uint64_t seed);

// Assembles a secret key from a filtered pool plus triggers; the version is a
// content hash so identical inputs yield identical key files.
SecretKey assemble_key(const knowledge::QuestionPool& filtered_pool,
                       const std::vector<PromptTrigger>& triggers, int questions_per_domain,
                       std::uint64_t seed);

// ---------------------------------------------------------------------------
// Paraphrase attack
// ---------------------------------------------------------------------------

inline constexpr const char* kRewriterSystemPrompt =
    "You are a question-rewriting assistant. Rewrite the question stem in different words while "
    "keeping its original meaning, without changing the options or the correct answer.";

std::string attack_prompt(const KnowledgeQuestion& question);

// Registers a deterministic rewriter model; strength is the probability a
// stem gets rewritten at all.
client::ModelHandle make_sim_rewriter(client::ModelClient& mc, std::uint64_t seed,
                                      double strength, const std::string& id = "sim-rewriter");

// Replaces every knowledge stem with the rewriter's output; ids, choices,
// ground truths, ordering, and key version stay fixed so fingerprints remain
// positionally comparable. Empty rewrites keep the original stem and record a
// warning.
SecretKey paraphrase_key(const client::ModelClient& mc, const SecretKey& key,
                         client::ModelHandle rewriter, int max_parallel = 4);

// ---------------------------------------------------------------------------
// Trigger-trajectory corpus generator
// ---------------------------------------------------------------------------

// Synthesizes a corpus where family identity is carried by a small set of
// consistent marker tokens buried under per-trigger scrambled shared
// vocabulary, so a raw bag-of-ngrams cosine separates families poorly until
// the extractor is trained to reweight the markers.
struct CorpusGenConfig {
  int train_families = 4;
  int positives_per_train_family = 2;
  int eval_families = 3;
  int variants_per_eval_family = 3;
  int triggers = 24;
  int tokens_per_trajectory = 36;
  double marker_fraction = 0.05;
  double cluster_fraction = 0.55;
  int clusters = 2;
  double variant_noise = 0.15;
};

trigger::TrainingCorpus make_training_corpus(const CorpusGenConfig& cfg, std::uint64_t seed);

// Mean per-eval-family trigger-level IP-ROC of an extractor over the corpus
// eval split (positives vs negatives of each eval group).
double corpus_eval_trigger_roc(const trigger::TrainingCorpus& corpus,
                               const trigger::EmbedderParams& params);

// ---------------------------------------------------------------------------
// Separation experiments
// ---------------------------------------------------------------------------

struct SeparationExperimentConfig {
  int families = 4;
  int variants_per_family = 6;
  std::vector<double> epsilon_schedule{0.025, 0.05, 0.075, 0.10, 0.125, 0.15};
  int trigger_count = 32;
  int questions_per_domain = 20;  // Q
  int domains = 7;                // N
  int pool_per_domain = 30;
  verdict::Level level = verdict::Level::merged;
  bool include_entropy = true;
  std::uint64_t seed = 1;

  // Trigger-level extractor: trained on generated held-out families unless
  // train_extractor is false (seeded init only).
  bool train_extractor = true;
  int extractor_train_families = 3;
  trigger::TrainConfig extractor_config;

  // Paraphrase attack applied to the suspect-side key.
  bool attack = false;
  double attack_strength = 1.0;
  std::uint64_t attack_seed = 7;

  SeparationExperimentConfig();
};

void validate(const SeparationExperimentConfig& cfg);
json experiment_config_to_json(const SeparationExperimentConfig& cfg);
SeparationExperimentConfig experiment_config_from_json(const json& j);

struct VariantResult {
  std::string id;
  double epsilon = 0.0;
  std::map<std::string, double> similarity;  // level -> similarity to own base
  std::map<std::string, double> ip_roc;      // level -> one-vs-independents ROC
  std::map<std::string, std::size_t> rank;   // level -> rank among independents
};

struct FamilyResult {
  std::string family_id;
  std::string base_id;
  std::map<std::string, double> ip_roc;                 // level -> family ROC
  std::map<std::string, double> calibration_threshold;  // level -> distance midpoint
  std::vector<VariantResult> variants;
};

struct EpsilonRow {
  double epsilon = 0.0;
  int variants = 0;
  std::map<std::string, double> mean_ip_roc;
  std::map<std::string, double> rank1_fraction;
};

struct DomainSimRow {
  std::string family_id;
  std::string suspect_id;
  std::vector<std::pair<std::string, double>> similarity;  // key domain order
};

struct ExperimentReport {
  json config;
  std::vector<std::string> levels;
  std::vector<FamilyResult> families;
  std::vector<EpsilonRow> per_epsilon;
  std::vector<DomainSimRow> domain_similarity;
};

ExperimentReport run_separation_experiment(const SeparationExperimentConfig& cfg);
std::string serialize(const ExperimentReport& report);

}  // namespace lmfp::sim
