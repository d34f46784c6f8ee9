#include "lmfp/verdict.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "lmfp/errors.hpp"
#include "lmfp/knowledge_fp.hpp"
#include "lmfp/trigger_fp.hpp"

namespace lmfp::verdict {

const char* to_string(Level level) {
  switch (level) {
    case Level::trigger: return "trigger";
    case Level::knowledge: return "knowledge";
    case Level::merged: return "merged";
  }
  return "merged";
}

Level level_from_string(const std::string& s) {
  if (s == "trigger") return Level::trigger;
  if (s == "knowledge") return Level::knowledge;
  if (s == "merged") return Level::merged;
  throw Error(ErrorKind::validation, "level: unknown value '" + s + "'");
}

double merged_distance(double d_T, double d_K_norm, double alpha, double beta) {
  if (d_T < -1.0 || d_T > 1.0) throw Error(ErrorKind::domain_error, "d_T: outside [-1, 1]");
  if (d_K_norm < 0.0 || d_K_norm > 1.0) {
    throw Error(ErrorKind::domain_error, "d_K_norm: outside [0, 1]");
  }
  if (alpha < 0.0 || beta < 0.0 || alpha + beta <= 0.0) {
    throw Error(ErrorKind::domain_error, "alpha, beta: must be >= 0 with alpha + beta > 0");
  }
  return alpha * d_T + beta * d_K_norm;
}

namespace {

double knowledge_distance_norm(const KnowledgeFingerprint& a, const KnowledgeFingerprint& b) {
  const int raw = knowledge::hamming_distance(a, b);
  return static_cast<double>(raw) / static_cast<double>(a.answers.size());
}

const TriggerFingerprint& need_trigger(const FingerprintSet& fs, const char* who) {
  if (!fs.trigger) {
    throw Error(ErrorKind::validation,
                std::string(who) + ": trigger fingerprint required for this level");
  }
  return *fs.trigger;
}

const KnowledgeFingerprint& need_knowledge(const FingerprintSet& fs, const char* who) {
  if (!fs.knowledge) {
    throw Error(ErrorKind::validation,
                std::string(who) + ": knowledge fingerprint required for this level");
  }
  return *fs.knowledge;
}

}  // namespace

double level_distance(Level level, const FingerprintSet& a, const FingerprintSet& b) {
  switch (level) {
    case Level::trigger:
      return trigger::trigger_distance(need_trigger(a, "left"), need_trigger(b, "right"));
    case Level::knowledge:
      return knowledge_distance_norm(need_knowledge(a, "left"), need_knowledge(b, "right"));
    case Level::merged:
      return level_distance(Level::trigger, a, b) + level_distance(Level::knowledge, a, b);
  }
  throw Error(ErrorKind::validation, "level: invalid");
}

void validate(const LogitVector& lv) {
  if (lv.entries.size() < 2) {
    throw Error(ErrorKind::validation, "logits: need the protected entry plus at least one negative");
  }
  if (lv.entries.size() != lv.labels.size()) {
    throw Error(ErrorKind::validation, "logits: entries and labels must have equal length");
  }
  std::set<std::string> seen(lv.labels.begin(), lv.labels.end());
  if (seen.size() != lv.labels.size()) {
    throw Error(ErrorKind::validation, "logits: labels must be unique");
  }
}

LogitVector build_logit_vector(const FingerprintSet& suspect, const std::string& protected_id,
                               const FingerprintSet& protected_fp,
                               const std::vector<std::pair<std::string, FingerprintSet>>& negatives,
                               Level level) {
  if (level == Level::merged) {
    return merge_logits(
        build_logit_vector(suspect, protected_id, protected_fp, negatives, Level::trigger),
        build_logit_vector(suspect, protected_id, protected_fp, negatives, Level::knowledge));
  }
  LogitVector lv;
  lv.level = level;
  lv.entries.push_back(-level_distance(level, suspect, protected_fp));
  lv.labels.push_back(protected_id);
  for (const auto& [id, fp] : negatives) {
    lv.entries.push_back(-level_distance(level, suspect, fp));
    lv.labels.push_back(id);
  }
  validate(lv);
  return lv;
}

LogitVector merge_logits(const LogitVector& trigger_logit, const LogitVector& knowledge_logit) {
  validate(trigger_logit);
  validate(knowledge_logit);
  if (trigger_logit.labels != knowledge_logit.labels) {
    throw Error(ErrorKind::incompatibility, "logit alignment: label orders differ");
  }
  LogitVector merged;
  merged.level = Level::merged;
  merged.labels = trigger_logit.labels;
  merged.entries.resize(trigger_logit.entries.size());
  for (std::size_t i = 0; i < merged.entries.size(); ++i) {
    merged.entries[i] = trigger_logit.entries[i] + knowledge_logit.entries[i];
  }
  return merged;
}

double roc_auc(const ScoreSet& scores) {
  if (scores.positives.empty() || scores.negatives.empty()) {
    throw Error(ErrorKind::validation, "roc_auc: needs at least one positive and one negative score");
  }
  // Rank-sum with midranks for ties; equals pairwise counting with half
  // credit for ties.
  std::vector<std::pair<double, int>> all;
  all.reserve(scores.positives.size() + scores.negatives.size());
  for (double s : scores.positives) all.emplace_back(s, 1);
  for (double s : scores.negatives) all.emplace_back(s, 0);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second == 1) positive_rank_sum += midrank;
    }
    i = j;
  }
  const double n1 = static_cast<double>(scores.positives.size());
  const double n0 = static_cast<double>(scores.negatives.size());
  const double u = positive_rank_sum - n1 * (n1 + 1.0) / 2.0;
  return u / (n1 * n0);
}

std::vector<std::pair<double, double>> roc_points(const ScoreSet& scores) {
  if (scores.positives.empty() || scores.negatives.empty()) {
    throw Error(ErrorKind::validation, "roc_points: needs at least one positive and one negative score");
  }
  std::vector<std::pair<double, int>> all;
  for (double s : scores.positives) all.emplace_back(s, 1);
  for (double s : scores.negatives) all.emplace_back(s, 0);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<std::pair<double, double>> points{{0.0, 0.0}};
  const double n1 = static_cast<double>(scores.positives.size());
  const double n0 = static_cast<double>(scores.negatives.size());
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second == 1) {
        ++tp;
      } else {
        ++fp;
      }
    }
    points.emplace_back(static_cast<double>(fp) / n0, static_cast<double>(tp) / n1);
    i = j;
  }
  return points;
}

std::size_t rank(double s_p, const std::vector<double>& scores) {
  std::size_t r = 1;
  for (double s : scores) {
    if (s >= s_p) ++r;
  }
  return r;
}

VerificationVerdict verify(const FingerprintSet& suspect, const FingerprintSet& protected_fp,
                           const VerifyConfig& cfg) {
  if (cfg.alpha < 0.0 || cfg.beta < 0.0 || cfg.alpha + cfg.beta <= 0.0) {
    throw Error(ErrorKind::domain_error, "alpha, beta: must be >= 0 with alpha + beta > 0");
  }
  VerificationVerdict v;
  v.alpha = cfg.alpha;
  v.beta = cfg.beta;
  v.threshold = cfg.threshold;
  v.provenance.level = to_string(cfg.level);

  const bool want_trigger = cfg.level == Level::trigger || cfg.level == Level::merged;
  const bool want_knowledge = cfg.level == Level::knowledge || cfg.level == Level::merged;

  if (want_trigger) {
    const auto& sus = need_trigger(suspect, "suspect");
    const auto& pro = need_trigger(protected_fp, "protected");
    v.d_T = trigger::trigger_distance(pro, sus);
    v.provenance.suspect_model = sus.model_id;
    v.provenance.protected_model = pro.model_id;
    v.provenance.key_version = sus.key_version;
  }
  if (want_knowledge) {
    const auto& sus = need_knowledge(suspect, "suspect");
    const auto& pro = need_knowledge(protected_fp, "protected");
    const int raw = knowledge::hamming_distance(pro, sus);
    v.d_K_raw = raw;
    v.d_K_norm = static_cast<double>(raw) / static_cast<double>(sus.answers.size());
    v.provenance.num_questions = static_cast<int>(sus.answers.size());
    if (!v.provenance.key_version.empty() && v.provenance.key_version != sus.key_version) {
      throw Error(ErrorKind::incompatibility,
                  "trigger and knowledge fingerprints come from different key versions");
    }
    v.provenance.suspect_model = sus.model_id;
    v.provenance.protected_model = pro.model_id;
    v.provenance.key_version = sus.key_version;
  }

  switch (cfg.level) {
    case Level::trigger:
      v.d_merged = cfg.alpha * *v.d_T;
      break;
    case Level::knowledge:
      v.d_merged = cfg.beta * *v.d_K_norm;
      break;
    case Level::merged:
      v.d_merged = merged_distance(*v.d_T, *v.d_K_norm, cfg.alpha, cfg.beta);
      break;
  }
  v.is_pirated = v.d_merged <= v.threshold;
  lmfp::validate(v);
  return v;
}

}  // namespace lmfp::verdict
