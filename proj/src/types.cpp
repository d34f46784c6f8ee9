#include "lmfp/types.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "lmfp/errors.hpp"

namespace lmfp {

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw Error(ErrorKind::validation, field + ": " + what);
}

}  // namespace

const char* to_string(TriggerCategory c) {
  switch (c) {
    case TriggerCategory::safety: return "safety";
    case TriggerCategory::math_reasoning: return "math_reasoning";
    case TriggerCategory::commonsense: return "commonsense";
  }
  return "commonsense";
}

TriggerCategory trigger_category_from_string(const std::string& s) {
  if (s == "safety") return TriggerCategory::safety;
  if (s == "math_reasoning") return TriggerCategory::math_reasoning;
  if (s == "commonsense") return TriggerCategory::commonsense;
  throw Error(ErrorKind::validation, "category: unknown value '" + s + "'");
}

bool is_choice_letter(char c) { return c >= 'A' && c <= 'D'; }

std::string answer_to_string(char answer) {
  if (answer == kNoAnswer) return kNoAnswerToken;
  if (!is_choice_letter(answer)) {
    throw Error(ErrorKind::validation, "answer: not in {A,B,C,D," + std::string(kNoAnswerToken) + "}");
  }
  return std::string(1, answer);
}

char answer_from_string(const std::string& s) {
  if (s == kNoAnswerToken) return kNoAnswer;
  if (s.size() == 1 && is_choice_letter(s[0])) return s[0];
  throw Error(ErrorKind::validation, "answer: unknown token '" + s + "'");
}

void validate(const PromptTrigger& t) {
  if (t.id.empty()) fail("trigger.id", "must be non-empty");
  if (t.text.empty()) fail("trigger.text", "must be non-empty for trigger '" + t.id + "'");
}

void validate(const KnowledgeQuestion& q) {
  if (q.id.empty()) fail("question.id", "must be non-empty");
  if (q.stem.empty()) fail("question.stem", "must be non-empty for question '" + q.id + "'");
  if (q.choices.empty()) fail("question.choices", "question '" + q.id + "' has no choices");
  for (const auto& [letter, text] : q.choices) {
    if (!is_choice_letter(letter)) {
      fail("question.choices", "question '" + q.id + "' uses a letter outside {A,B,C,D}");
    }
    if (text.empty()) fail("question.choices", "empty choice text in question '" + q.id + "'");
  }
  if (!q.choices.count(q.ground_truth)) {
    fail("question.ground_truth", "not among the choices of question '" + q.id + "'");
  }
}

void validate(const SecretKey& key) {
  std::set<std::string> ids;
  for (const auto& t : key.triggers) {
    validate(t);
    if (!ids.insert(t.id).second) fail("key.triggers", "duplicate id '" + t.id + "'");
  }
  for (const auto& q : key.knowledge) {
    validate(q);
    if (!ids.insert(q.id).second) fail("key.knowledge", "duplicate id '" + q.id + "'");
  }
  std::set<std::string> domain_set(key.domains.begin(), key.domains.end());
  if (domain_set.size() != key.domains.size()) fail("key.domains", "labels must be distinct");
  if (key.questions_per_domain < 0) fail("key.questions_per_domain", "must be >= 0");

  // Canonical order: domain-major following `domains`, Q questions each.
  std::size_t pos = 0;
  for (const auto& domain : key.domains) {
    for (int j = 0; j < key.questions_per_domain; ++j, ++pos) {
      if (pos >= key.knowledge.size() || key.knowledge[pos].domain != domain) {
        fail("key.knowledge",
             "domain '" + domain + "' must contribute exactly " +
                 std::to_string(key.questions_per_domain) + " consecutive questions");
      }
    }
  }
  if (pos != key.knowledge.size()) {
    fail("key.knowledge", "length must equal domains x questions_per_domain");
  }
}

void validate(const ModelResponse& r) {
  if (!r.token_logprobs) return;
  for (std::size_t i = 0; i < r.token_logprobs->size(); ++i) {
    const auto& tok = (*r.token_logprobs)[i];
    if (tok.candidates.empty()) {
      fail("response.token_logprobs", "token " + std::to_string(i) + " has no candidates");
    }
    for (const auto& [text, lp] : tok.candidates) {
      if (!(lp <= 0.0)) {
        fail("response.token_logprobs",
             "token " + std::to_string(i) + " has log-probability > 0");
      }
    }
  }
}

void validate(const TriggerFingerprint& fp) {
  if (fp.vectors.empty()) fail("fingerprint.vectors", "must have at least one row");
  const std::size_t dim = fp.vectors.front().size();
  if (dim == 0) fail("fingerprint.vectors", "rows must be non-empty");
  for (std::size_t i = 0; i < fp.vectors.size(); ++i) {
    const auto& row = fp.vectors[i];
    if (row.size() != dim) fail("fingerprint.vectors", "row " + std::to_string(i) + " has mismatched width");
    double sq = 0.0;
    for (double v : row) {
      if (!std::isfinite(v)) fail("fingerprint.vectors", "row " + std::to_string(i) + " has non-finite entry");
      sq += v * v;
    }
    if (std::fabs(std::sqrt(sq) - 1.0) > 1e-9) {
      fail("fingerprint.vectors", "row " + std::to_string(i) + " is not unit-norm");
    }
  }
}

void validate(const KnowledgeFingerprint& fp) {
  if (fp.num_questions <= 0) fail("fingerprint.num_questions", "must be positive");
  if (static_cast<int>(fp.answers.size()) != fp.num_questions) {
    fail("fingerprint.answers",
         "length " + std::to_string(fp.answers.size()) + " does not match num_questions " +
             std::to_string(fp.num_questions));
  }
  for (char a : fp.answers) {
    if (a != kNoAnswer && !is_choice_letter(a)) {
      fail("fingerprint.answers", "entry outside {A,B,C,D," + std::string(kNoAnswerToken) + "}");
    }
  }
}

void validate(const VerificationVerdict& v) {
  if (v.d_T && (*v.d_T < -1.0 - 1e-12 || *v.d_T > 1.0 + 1e-12)) {
    fail("verdict.d_T", "outside [-1, 1]");
  }
  if (v.d_K_norm && (*v.d_K_norm < -1e-12 || *v.d_K_norm > 1.0 + 1e-12)) {
    fail("verdict.d_K_norm", "outside [0, 1]");
  }
  if (v.d_K_raw.has_value() != v.d_K_norm.has_value()) {
    fail("verdict.d_K_raw", "raw and normalized knowledge distances must come together");
  }
  if (v.d_K_raw) {
    if (v.provenance.num_questions <= 0) {
      fail("verdict.provenance.num_questions", "required with a knowledge distance");
    }
    const double expect = static_cast<double>(*v.d_K_raw) / v.provenance.num_questions;
    if (std::fabs(expect - *v.d_K_norm) > 1e-12) {
      fail("verdict.d_K_norm", "must equal d_K_raw / num_questions");
    }
  }
  if (v.alpha < 0 || v.beta < 0 || v.alpha + v.beta <= 0) {
    fail("verdict.alpha", "alpha, beta must be >= 0 with alpha + beta > 0");
  }
  if (v.is_pirated != (v.d_merged <= v.threshold)) {
    fail("verdict.is_pirated", "must equal (d_merged <= threshold)");
  }
}

}  // namespace lmfp
