#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lmfp/model_client.hpp"
#include "lmfp/serial.hpp"
#include "lmfp/types.hpp"

namespace lmfp::knowledge {

// Domain-grouped question pool the key is sampled from.
struct QuestionPool {
  std::vector<std::pair<std::string, std::vector<KnowledgeQuestion>>> domains;
  std::string provenance;

  std::size_t total_questions() const;
};

void validate(const QuestionPool& pool);
std::string serialize(const QuestionPool& pool);
QuestionPool pool_from_bytes(std::string_view bytes);

struct AnswerRecord {
  std::string question_id;
  std::string raw_text;
  char parsed = kNoAnswer;
};

// Pinned prompt: stem, the lettered choices on their own lines, then a fixed
// instruction. Fingerprints embed answers to these exact bytes, so the
// template is part of the fingerprint definition.
std::string answer_prompt(const KnowledgeQuestion& question);

// Marker line answer_prompt always ends with; lets simulated backends
// recognize knowledge queries.
inline constexpr const char* kAnswerInstruction =
    "Answer with the single letter of the correct choice.";

// Last "answer is (L)" / "answer is L" occurrence (case-insensitive, L in
// A..D); falls back to the last standalone choice letter; otherwise the
// no-answer sentinel. Never an error.
char parse_choice(std::string_view text);

// Keeps a question iff a strict majority of the protected models produce a
// parseable choice letter for it. Domain grouping and order are preserved.
QuestionPool filter_questions(const client::ModelClient& mc, const QuestionPool& pool,
                              const std::vector<client::ModelHandle>& protected_models,
                              int max_parallel = 4);

// One answer per key question, in canonical key order; keeps the raw text for
// auditing. Unparseable responses carry the no-answer sentinel.
std::vector<AnswerRecord> collect_answers(const client::ModelClient& mc,
                                          const client::ModelHandle& model, const SecretKey& key,
                                          int max_parallel = 4);

// Samples exactly Q questions per domain without replacement, ordered by a
// seeded per-question priority. The draw depends only on (seed, question id),
// so growing the pool elsewhere leaves an existing sample unchanged.
std::vector<KnowledgeQuestion> build_knowledge_key(const QuestionPool& pool,
                                                   int questions_per_domain, std::uint64_t seed);

KnowledgeFingerprint extract_knowledge_fingerprint(const client::ModelClient& mc,
                                                   const client::ModelHandle& model,
                                                   const SecretKey& key, int max_parallel = 4);

// Positions where the answer vectors differ; the no-answer sentinel differs
// from every letter and equals itself.
int hamming_distance(const KnowledgeFingerprint& a, const KnowledgeFingerprint& b);

// Levenshtein distance over the answer sequences, unit costs.
int edit_distance(const KnowledgeFingerprint& a, const KnowledgeFingerprint& b);

enum class JaccardMode { multiset, set };

// Position-free token overlap: |intersection| / |union| over answer tokens,
// multiset counts by default.
double jaccard_similarity(const KnowledgeFingerprint& a, const KnowledgeFingerprint& b,
                          JaccardMode mode = JaccardMode::multiset);

// Per domain, 1 - mismatches/Q, in key domain order. Radar-plot data.
std::vector<std::pair<std::string, double>> domain_similarity_profile(
    const KnowledgeFingerprint& a, const KnowledgeFingerprint& b, const SecretKey& key);

}  // namespace lmfp::knowledge
