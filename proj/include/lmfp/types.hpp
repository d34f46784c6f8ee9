#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace lmfp {

// ---------------------------------------------------------------------------
// Secret key material
// ---------------------------------------------------------------------------

enum class TriggerCategory { safety, math_reasoning, commonsense };

const char* to_string(TriggerCategory c);
TriggerCategory trigger_category_from_string(const std::string& s);

struct PromptTrigger {
  std::string id;
  std::string text;
  TriggerCategory category = TriggerCategory::commonsense;

  bool operator==(const PromptTrigger&) const = default;
};

// Multiple-choice answers live in the fixed alphabet {A,B,C,D}; kNoAnswer is
// the fifth symbol recorded when a response could not be parsed. It is a
// value, not an error, so fingerprints keep their full length.
inline constexpr char kNoAnswer = '\0';
inline constexpr const char* kNoAnswerToken = "\xe2\x88\x85";  // U+2205

bool is_choice_letter(char c);
std::string answer_to_string(char answer);
char answer_from_string(const std::string& s);  // throws on anything else

struct KnowledgeQuestion {
  std::string id;
  std::string domain;
  std::string stem;
  std::map<char, std::string> choices;  // letter -> choice text, letter order
  char ground_truth = 'A';

  bool operator==(const KnowledgeQuestion&) const = default;
};

struct SecretKey {
  std::vector<PromptTrigger> triggers;
  // Canonical fingerprint-position order: domain-major (following `domains`),
  // then sampled order within each domain.
  std::vector<KnowledgeQuestion> knowledge;
  std::vector<std::string> domains;
  int questions_per_domain = 0;
  std::uint64_t seed = 0;
  std::string version;

  // Provenance, populated when a key is derived from another one.
  std::string rewriter_id;
  std::vector<std::string> warnings;

  // The command invocation that produced the file, carried verbatim.
  nlohmann::ordered_json run_config;

  int num_questions() const { return static_cast<int>(knowledge.size()); }

  bool operator==(const SecretKey&) const = default;
};

// ---------------------------------------------------------------------------
// Model I/O
// ---------------------------------------------------------------------------

// Per-generated-token candidate list: (token, log-probability), logprob <= 0.
struct TokenCandidates {
  std::vector<std::pair<std::string, double>> candidates;

  bool operator==(const TokenCandidates&) const = default;
};

struct ModelResponse {
  std::string text;
  std::optional<std::vector<TokenCandidates>> token_logprobs;
  bool truncated = false;
  std::vector<std::string> warnings;

  bool operator==(const ModelResponse&) const = default;
};

// ---------------------------------------------------------------------------
// Fingerprints
// ---------------------------------------------------------------------------

struct TriggerFingerprint {
  std::vector<std::vector<double>> vectors;  // one unit row per trigger
  std::string embedder_id;
  std::string key_version;
  std::string model_id;  // provenance
  nlohmann::ordered_json run_config;

  bool operator==(const TriggerFingerprint&) const = default;
};

struct KnowledgeFingerprint {
  std::vector<char> answers;  // 'A'..'D' or kNoAnswer, canonical key order
  int num_questions = 0;      // expected length (Q x N)
  std::string key_version;
  std::string model_id;  // provenance
  nlohmann::ordered_json run_config;

  bool operator==(const KnowledgeFingerprint&) const = default;
};

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

struct VerdictProvenance {
  std::string protected_model;
  std::string suspect_model;
  std::string key_version;
  std::string level;       // "trigger" | "knowledge" | "merged"
  int num_questions = 0;   // Q x N when a knowledge distance is present

  bool operator==(const VerdictProvenance&) const = default;
};

struct VerificationVerdict {
  std::optional<double> d_T;      // negative mean cosine, [-1, 1]
  std::optional<int> d_K_raw;     // mismatch count
  std::optional<double> d_K_norm; // d_K_raw / (Q x N)
  double alpha = 1.0;
  double beta = 1.0;
  double d_merged = 0.0;
  double threshold = 0.0;
  bool is_pirated = false;
  VerdictProvenance provenance;

  bool operator==(const VerificationVerdict&) const = default;
};

// ---------------------------------------------------------------------------
// Invariant checks. Each throws Error{ErrorKind::validation} naming the
// offending field; value types stay immutable-by-convention after they pass.
// ---------------------------------------------------------------------------

void validate(const PromptTrigger& t);
void validate(const KnowledgeQuestion& q);
void validate(const SecretKey& key);
void validate(const ModelResponse& r);
void validate(const TriggerFingerprint& fp);
void validate(const KnowledgeFingerprint& fp);
void validate(const VerificationVerdict& v);

}  // namespace lmfp
