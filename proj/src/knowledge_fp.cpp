#include "lmfp/knowledge_fp.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "lmfp/detrng.hpp"
#include "lmfp/errors.hpp"

namespace lmfp::knowledge {

std::size_t QuestionPool::total_questions() const {
  std::size_t n = 0;
  for (const auto& [domain, questions] : domains) n += questions.size();
  return n;
}

void validate(const QuestionPool& pool) {
  std::set<std::string> labels;
  std::set<std::string> ids;
  for (const auto& [domain, questions] : pool.domains) {
    if (domain.empty()) throw Error(ErrorKind::validation, "pool.domains: empty domain label");
    if (!labels.insert(domain).second) {
      throw Error(ErrorKind::validation, "pool.domains: duplicate domain '" + domain + "'");
    }
    if (questions.empty()) {
      throw Error(ErrorKind::validation, "pool.domains: domain '" + domain + "' has no questions");
    }
    for (const auto& q : questions) {
      lmfp::validate(q);
      if (q.domain != domain) {
        throw Error(ErrorKind::validation,
                    "pool.domains: question '" + q.id + "' is filed under '" + domain +
                        "' but labeled '" + q.domain + "'");
      }
      if (!ids.insert(q.id).second) {
        throw Error(ErrorKind::validation, "pool.domains: duplicate question id '" + q.id + "'");
      }
    }
  }
}

std::string serialize(const QuestionPool& pool) {
  validate(pool);
  json doc = make_envelope("question_pool");
  doc["provenance"] = pool.provenance;
  json domains = json::array();
  for (const auto& [domain, questions] : pool.domains) {
    json jd;
    jd["domain"] = domain;
    json qs = json::array();
    for (const auto& q : questions) qs.push_back(question_to_json(q));
    jd["questions"] = qs;
    domains.push_back(jd);
  }
  doc["domains"] = domains;
  return dump_document(doc);
}

QuestionPool pool_from_bytes(std::string_view bytes) {
  json doc = parse_document(bytes, "question_pool");
  QuestionPool pool;
  if (doc.contains("provenance")) pool.provenance = doc["provenance"].get<std::string>();
  for (const auto& jd : require(doc, "domains")) {
    std::vector<KnowledgeQuestion> questions;
    for (const auto& q : require(jd, "questions")) questions.push_back(question_from_json(q));
    pool.domains.emplace_back(require_string(jd, "domain"), std::move(questions));
  }
  validate(pool);
  return pool;
}

std::string answer_prompt(const KnowledgeQuestion& question) {
  lmfp::validate(question);
  std::string prompt = question.stem;
  prompt += '\n';
  for (const auto& [letter, text] : question.choices) {
    prompt += letter;
    prompt += ") ";
    prompt += text;
    prompt += '\n';
  }
  prompt += kAnswerInstruction;
  return prompt;
}

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

char upper_choice(char c) {
  const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return is_choice_letter(u) ? u : kNoAnswer;
}

}  // namespace

char parse_choice(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });

  // Last "answer is (L)" / "answer is L" with L in the alphabet.
  static constexpr std::string_view kPattern = "answer is";
  char from_pattern = kNoAnswer;
  for (std::size_t pos = lower.find(kPattern); pos != std::string::npos;
       pos = lower.find(kPattern, pos + 1)) {
    std::size_t i = pos + kPattern.size();
    while (i < text.size() && (text[i] == ' ' || text[i] == ':')) ++i;
    if (i < text.size() && text[i] == '(') ++i;
    if (i >= text.size()) continue;
    const char letter = upper_choice(text[i]);
    if (letter == kNoAnswer) continue;
    if (i + 1 < text.size() && is_word_char(text[i + 1])) continue;  // part of a longer word
    from_pattern = letter;
  }
  if (from_pattern != kNoAnswer) return from_pattern;

  // Fallback: last standalone choice-letter token.
  char last = kNoAnswer;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_char(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_word_char(text[j])) ++j;
    if (j - i == 1) {
      const char letter = upper_choice(text[i]);
      if (letter != kNoAnswer) last = letter;
    }
    i = j;
  }
  return last;
}

namespace {

// One model's parseability vector over the pool, in pool order.
std::vector<bool> parseable_mask(const client::ModelClient& mc, const client::ModelHandle& model,
                                 const QuestionPool& pool, int max_parallel) {
  client::QueryPlan plan;
  std::vector<const KnowledgeQuestion*> flat;
  for (const auto& [domain, questions] : pool.domains) {
    for (const auto& q : questions) {
      plan.prompts.push_back(answer_prompt(q));
      flat.push_back(&q);
    }
  }
  plan.max_parallel = max_parallel;
  plan.retry_budget = model.retry_budget;
  plan.timeout = model.timeout;
  auto results = mc.batch_complete(model, plan);
  std::vector<bool> mask(results.size(), false);
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].ok()) {
      throw Error(results[i].error_kind,
                  "question '" + flat[i]->id + "' against model '" + model.id +
                      "': " + results[i].error);
    }
    mask[i] = parse_choice(results[i].response->text) != kNoAnswer;
  }
  return mask;
}

}  // namespace

QuestionPool filter_questions(const client::ModelClient& mc, const QuestionPool& pool,
                              const std::vector<client::ModelHandle>& protected_models,
                              int max_parallel) {
  validate(pool);
  if (protected_models.empty()) {
    throw Error(ErrorKind::validation, "filter_questions: needs at least one protected model");
  }
  std::vector<int> parseable(pool.total_questions(), 0);
  for (const auto& model : protected_models) {
    const auto mask = parseable_mask(mc, model, pool, max_parallel);
    for (std::size_t i = 0; i < mask.size(); ++i) parseable[i] += mask[i] ? 1 : 0;
  }

  const int n_models = static_cast<int>(protected_models.size());
  QuestionPool filtered;
  filtered.provenance = pool.provenance;
  std::size_t index = 0;
  for (const auto& [domain, questions] : pool.domains) {
    std::vector<KnowledgeQuestion> kept;
    for (const auto& q : questions) {
      if (2 * parseable[index] > n_models) kept.push_back(q);  // strict majority
      ++index;
    }
    if (kept.empty()) {
      throw Error(ErrorKind::data, "domain '" + domain + "' exhausted: no question was answerable by a majority of the " +
                                       std::to_string(n_models) + " protected models");
    }
    filtered.domains.emplace_back(domain, std::move(kept));
  }
  return filtered;
}

std::vector<KnowledgeQuestion> build_knowledge_key(const QuestionPool& pool,
                                                   int questions_per_domain, std::uint64_t seed) {
  validate(pool);
  if (questions_per_domain < 1) {
    throw Error(ErrorKind::validation, "questions_per_domain: must be >= 1");
  }
  std::vector<KnowledgeQuestion> key;
  for (const auto& [domain, questions] : pool.domains) {
    if (static_cast<int>(questions.size()) < questions_per_domain) {
      throw Error(ErrorKind::data, "insufficient questions in domain '" + domain + "': have " +
                                       std::to_string(questions.size()) + ", need " +
                                       std::to_string(questions_per_domain));
    }
    // Priority draw keyed by (seed, id): stable under pool growth elsewhere.
    std::vector<std::pair<std::uint64_t, const KnowledgeQuestion*>> ranked;
    ranked.reserve(questions.size());
    for (const auto& q : questions) {
      ranked.emplace_back(hash_u64(seed, "key-sample", q.id), &q);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return a.second->id < b.second->id;
    });
    for (int i = 0; i < questions_per_domain; ++i) key.push_back(*ranked[static_cast<std::size_t>(i)].second);
  }
  return key;
}

std::vector<AnswerRecord> collect_answers(const client::ModelClient& mc,
                                          const client::ModelHandle& model, const SecretKey& key,
                                          int max_parallel) {
  if (key.knowledge.empty()) {
    throw Error(ErrorKind::validation, "key has no knowledge questions");
  }
  client::QueryPlan plan;
  for (const auto& q : key.knowledge) plan.prompts.push_back(answer_prompt(q));
  plan.max_parallel = max_parallel;
  plan.retry_budget = model.retry_budget;
  plan.timeout = model.timeout;
  auto results = mc.batch_complete(model, plan);

  std::vector<AnswerRecord> records;
  records.reserve(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].ok()) {
      throw Error(results[i].error_kind,
                  "question '" + key.knowledge[i].id + "': " + results[i].error);
    }
    AnswerRecord record;
    record.question_id = key.knowledge[i].id;
    record.raw_text = results[i].response->text;
    record.parsed = parse_choice(record.raw_text);
    records.push_back(std::move(record));
  }
  return records;
}

KnowledgeFingerprint extract_knowledge_fingerprint(const client::ModelClient& mc,
                                                   const client::ModelHandle& model,
                                                   const SecretKey& key, int max_parallel) {
  KnowledgeFingerprint fp;
  fp.num_questions = key.num_questions();
  fp.key_version = key.version;
  fp.model_id = model.id;
  for (const auto& record : collect_answers(mc, model, key, max_parallel)) {
    fp.answers.push_back(record.parsed);
  }
  lmfp::validate(fp);
  return fp;
}

namespace {

void check_comparable(const KnowledgeFingerprint& a, const KnowledgeFingerprint& b) {
  if (a.key_version != b.key_version) {
    throw Error(ErrorKind::incompatibility, "fingerprints come from different key versions ('" +
                                                a.key_version + "' vs '" + b.key_version + "')");
  }
  if (a.answers.size() != b.answers.size()) {
    throw Error(ErrorKind::incompatibility, "fingerprints have different lengths (" +
                                                std::to_string(a.answers.size()) + " vs " +
                                                std::to_string(b.answers.size()) + ")");
  }
}

}  // namespace

int hamming_distance(const KnowledgeFingerprint& a, const KnowledgeFingerprint& b) {
  check_comparable(a, b);
  int mismatches = 0;
  for (std::size_t i = 0; i < a.answers.size(); ++i) {
    if (a.answers[i] != b.answers[i]) ++mismatches;
  }
  return mismatches;
}

int edit_distance(const KnowledgeFingerprint& a, const KnowledgeFingerprint& b) {
  check_comparable(a, b);
  const auto& s = a.answers;
  const auto& t = b.answers;
  std::vector<int> prev(t.size() + 1), curr(t.size() + 1);
  for (std::size_t j = 0; j <= t.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= s.size(); ++i) {
    curr[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= t.size(); ++j) {
      const int sub = prev[j - 1] + (s[i - 1] == t[j - 1] ? 0 : 1);
      curr[j] = std::min({prev[j] + 1, curr[j - 1] + 1, sub});
    }
    std::swap(prev, curr);
  }
  return prev[t.size()];
}

double jaccard_similarity(const KnowledgeFingerprint& a, const KnowledgeFingerprint& b,
                          JaccardMode mode) {
  check_comparable(a, b);
  auto counts = [](const KnowledgeFingerprint& fp) {
    std::map<char, int> c;
    for (char ch : fp.answers) c[ch] += 1;
    return c;
  };
  auto ca = counts(a);
  auto cb = counts(b);
  double inter = 0.0;
  double uni = 0.0;
  std::set<char> tokens;
  for (const auto& [t, n] : ca) tokens.insert(t);
  for (const auto& [t, n] : cb) tokens.insert(t);
  for (char t : tokens) {
    const int na = ca.count(t) ? ca[t] : 0;
    const int nb = cb.count(t) ? cb[t] : 0;
    if (mode == JaccardMode::multiset) {
      inter += std::min(na, nb);
      uni += std::max(na, nb);
    } else {
      inter += (na > 0 && nb > 0) ? 1.0 : 0.0;
      uni += 1.0;
    }
  }
  return uni == 0.0 ? 1.0 : inter / uni;
}

std::vector<std::pair<std::string, double>> domain_similarity_profile(
    const KnowledgeFingerprint& a, const KnowledgeFingerprint& b, const SecretKey& key) {
  check_comparable(a, b);
  if (static_cast<int>(a.answers.size()) != key.num_questions()) {
    throw Error(ErrorKind::incompatibility, "fingerprint length does not match the key");
  }
  const int q = key.questions_per_domain;
  std::vector<std::pair<std::string, double>> profile;
  profile.reserve(key.domains.size());
  std::size_t pos = 0;
  for (const auto& domain : key.domains) {
    int mismatches = 0;
    for (int j = 0; j < q; ++j, ++pos) {
      if (a.answers[pos] != b.answers[pos]) ++mismatches;
    }
    profile.emplace_back(domain, 1.0 - static_cast<double>(mismatches) / static_cast<double>(q));
  }
  return profile;
}

}  // namespace lmfp::knowledge
