#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lmfp/types.hpp"

namespace lmfp::verdict {

enum class Level { trigger, knowledge, merged };

const char* to_string(Level level);
Level level_from_string(const std::string& s);

// A suspect's (or candidate's) fingerprints; which ones are present decides
// the levels it can be verified at.
struct FingerprintSet {
  std::optional<TriggerFingerprint> trigger;
  std::optional<KnowledgeFingerprint> knowledge;
};

// d = alpha * d_T + beta * d_K_norm. The knowledge distance is normalized to
// [0,1] before merging so the two levels mix on commensurate scales.
double merged_distance(double d_T, double d_K_norm, double alpha, double beta);

// Distance between two fingerprint sets at a level; merged uses unit weights.
double level_distance(Level level, const FingerprintSet& a, const FingerprintSet& b);

// Negated distances of one suspect to the protected model (position 0) and to
// each negative model, labeled by model id.
struct LogitVector {
  Level level = Level::merged;
  std::vector<double> entries;
  std::vector<std::string> labels;
};

void validate(const LogitVector& lv);

LogitVector build_logit_vector(const FingerprintSet& suspect, const std::string& protected_id,
                               const FingerprintSet& protected_fp,
                               const std::vector<std::pair<std::string, FingerprintSet>>& negatives,
                               Level level);

// Elementwise sum of the trigger- and knowledge-level vectors; labels must
// align exactly.
LogitVector merge_logits(const LogitVector& trigger_logit, const LogitVector& knowledge_logit);

// Similarity scores, higher = more similar; positives should outrank
// negatives.
struct ScoreSet {
  std::vector<double> positives;
  std::vector<double> negatives;
};

// Mann-Whitney AUC: pairs where the positive wins count 1, ties 0.5.
double roc_auc(const ScoreSet& scores);

// (false-positive rate, true-positive rate) sweep for plotting.
std::vector<std::pair<double, double>> roc_points(const ScoreSet& scores);

// 1 + |{s in S : s >= s_p}|; ties count against the suspect.
std::size_t rank(double s_p, const std::vector<double>& scores);

struct VerifyConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double threshold = 0.0;
  Level level = Level::merged;
};

// Distance at the requested level, merged verdict, and threshold decision.
VerificationVerdict verify(const FingerprintSet& suspect, const FingerprintSet& protected_fp,
                           const VerifyConfig& cfg);

}  // namespace lmfp::verdict
