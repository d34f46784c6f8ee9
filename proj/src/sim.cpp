#include "lmfp/sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "lmfp/detrng.hpp"
#include "lmfp/errors.hpp"

namespace lmfp::sim {

namespace {

// --------------------------------------------------------------------------
// Deterministic vocabulary
// --------------------------------------------------------------------------

const char* kOnsets[] = {"b", "d",  "f",  "g",  "k",  "l",  "m",  "n",
                         "p", "r",  "s",  "t",  "v",  "z",  "br", "cl",
                         "st", "tr", "pl", "gr", "sk", "dr", "fl", "sp"};
const char* kVowels[] = {"a", "e", "i", "o", "u", "ar", "en", "il", "or", "un"};

std::string pseudo_word(std::uint64_t h) {
  std::string word;
  const int syllables = 2 + static_cast<int>(h % 3);
  for (int s = 0; s < syllables; ++s) {
    h = splitmix64(h);
    word += kOnsets[h % (sizeof(kOnsets) / sizeof(kOnsets[0]))];
    h = splitmix64(h);
    word += kVowels[h % (sizeof(kVowels) / sizeof(kVowels[0]))];
  }
  return word;
}

const char* kCommonWords[] = {
    "the",   "of",    "and",   "result", "value", "step",   "then",  "we",
    "first", "answer","total", "number", "is",    "to",     "find",  "that",
    "with",  "for",   "each",  "so",     "thus",  "now",    "next",  "given",
    "let",   "this",  "it",    "a",      "in",    "by",     "from",  "on",
    "as",    "be",    "can",   "will",   "must",  "also",   "here",  "final",
    "sum",   "part",  "both",  "more",   "less",  "same",   "other", "these",
    "after", "before","into",  "per",    "at",    "or",     "not",   "all",
    "one",   "two",   "three", "case",   "hence", "check",  "note",  "use"};

std::string common_word(std::uint64_t h) {
  return kCommonWords[h % (sizeof(kCommonWords) / sizeof(kCommonWords[0]))];
}

std::string choices_block(const KnowledgeQuestion& q) {
  std::string block;
  for (const auto& [letter, text] : q.choices) {
    block += letter;
    block += ") ";
    block += text;
    block += '\n';
  }
  return block;
}

char flip_to_other(char current, std::uint64_t h) {
  std::array<char, 3> others{};
  int n = 0;
  for (char c = 'A'; c <= 'D'; ++c) {
    if (c != current) others[static_cast<std::size_t>(n++)] = c;
  }
  return others[h % 3];
}

std::string format_entropy(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", value);
  return buf;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

// --------------------------------------------------------------------------
// Families and variants
// --------------------------------------------------------------------------

ModelFamilyProfile make_family_profile(const std::string& family_id, std::uint64_t style_seed,
                                       const knowledge::QuestionPool& pool) {
  knowledge::validate(pool);
  ModelFamilyProfile profile;
  profile.family_id = family_id;
  profile.style_seed = style_seed;
  for (const auto& [domain, questions] : pool.domains) {
    // Accuracy-like tendency per domain, kept away from 1 so two skilled
    // families do not collapse onto the ground truth everywhere.
    const double skill = 0.30 + 0.45 * unit_double(hash_u64(style_seed, "skill", domain));
    profile.domain_skill[domain] = skill;
    for (const auto& q : questions) {
      char base = q.ground_truth;
      if (unit_double(hash_u64(style_seed, "know", q.id)) >= skill) {
        base = flip_to_other(q.ground_truth, hash_u64(style_seed, "tendency", q.id));
      }
      profile.knowledge_profile[q.id] = {base, 1.0};
      profile.question_index[hash_bytes(choices_block(q))] = q.id;
      profile.canonical_stem_hash[q.id] = hash_bytes(q.stem);
    }
  }
  return profile;
}

SimulatedModel spawn_variant(std::shared_ptr<const ModelFamilyProfile> family, double epsilon,
                             std::uint64_t variant_seed, std::string id) {
  if (!family) throw Error(ErrorKind::validation, "spawn_variant: null family profile");
  if (epsilon < 0.0 || epsilon > 1.0) {
    throw Error(ErrorKind::domain_error, "epsilon: must be in [0, 1]");
  }
  SimulatedModel model;
  model.family = std::move(family);
  model.epsilon = epsilon;
  model.variant_seed = variant_seed;
  model.id = id.empty() ? model.family->family_id + "_v" + std::to_string(variant_seed)
                        : std::move(id);
  return model;
}

SimulatedModel base_model(std::shared_ptr<const ModelFamilyProfile> family) {
  if (!family) throw Error(ErrorKind::validation, "base_model: null family profile");
  auto id = family->family_id + "_base";
  return spawn_variant(std::move(family), 0.0, 0, id);
}

namespace {

ModelResponse answer_knowledge_prompt(const SimulatedModel& model, const std::string& stem,
                                      const std::string& block) {
  const ModelFamilyProfile& fam = *model.family;
  // A zero-perturbation variant must be indistinguishable from the base, so
  // its draws come from the family seed rather than its own.
  const std::uint64_t behavior_seed =
      model.epsilon == 0.0 ? fam.style_seed : model.variant_seed;

  const std::uint64_t identity = hash_bytes(block);
  char answer;
  auto found = fam.question_index.find(identity);
  if (found != fam.question_index.end()) {
    const std::string& qid = found->second;
    const auto& [base, flip_base] = fam.knowledge_profile.at(qid);
    answer = base;
    if (unit_double(hash_u64(behavior_seed, "ans-flip", qid)) < model.epsilon * flip_base) {
      answer = flip_to_other(answer, hash_u64(behavior_seed, "flip-target", qid));
    }
    const std::uint64_t stem_hash = hash_bytes(stem);
    if (stem_hash != fam.canonical_stem_hash.at(qid)) {
      const std::uint64_t draw =
          hash_mix(hash_u64(behavior_seed, "stem-flip", qid), stem_hash);
      if (unit_double(draw) < kParaphraseSensitivity) {
        answer = flip_to_other(answer, hash_mix(hash_u64(behavior_seed, "stem-target", qid), stem_hash));
      }
    }
  } else {
    answer = static_cast<char>('A' + hash_u64(fam.style_seed, "unknown-q", identity) % 4);
  }

  ModelResponse response;
  const int style = static_cast<int>(hash_u64(fam.style_seed, "answer-style", identity) % 3);
  const std::string letter(1, answer);
  if (style == 0) {
    response.text = "The answer is (" + letter + ").";
  } else if (style == 1) {
    response.text = "I think the answer is (" + letter + ").";
  } else {
    response.text = "Therefore, the answer is (" + letter + ").";
  }
  // One emitted token with a confident candidate set, so entropy stays
  // computable on knowledge prompts too.
  TokenCandidates tc;
  const double p0 = 0.85 + 0.10 * unit_double(hash_u64(fam.style_seed, "answer-conf", identity));
  tc.candidates.emplace_back("(" + letter + ")", std::log(p0));
  for (char c = 'A'; c <= 'D'; ++c) {
    if (c != answer) {
      tc.candidates.emplace_back("(" + std::string(1, c) + ")", std::log((1.0 - p0) / 3.0));
    }
  }
  response.token_logprobs = std::vector<TokenCandidates>{tc};
  return response;
}

ModelResponse styled_response(const SimulatedModel& model, const std::string& prompt) {
  const ModelFamilyProfile& fam = *model.family;
  const std::uint64_t prompt_hash = hash_bytes(prompt);
  const int length = 24 + static_cast<int>(hash_u64(prompt_hash, "len") % 17);
  const double family_conf = 0.35 + 0.50 * unit_double(hash_u64(fam.style_seed, "conf"));

  ModelResponse response;
  std::vector<TokenCandidates> tokens;
  tokens.reserve(static_cast<std::size_t>(length));
  std::string text;
  for (int i = 0; i < length; ++i) {
    const auto pos = static_cast<std::uint64_t>(i);
    std::string word;
    // Token roles are decided by the prompt alone so the same position is
    // comparable across every model.
    if (unit_double(hash_u64(prompt_hash, "role", pos)) < 0.55) {
      word = common_word(hash_u64(prompt_hash, "common", pos));
    } else {
      const std::uint64_t slot = hash_u64(prompt_hash, "fam-slot", pos) % 64;
      word = pseudo_word(hash_u64(fam.style_seed, "lexicon", slot));
    }
    if (model.epsilon > 0.0 &&
        unit_double(hash_mix(hash_u64(model.variant_seed, "tok-pert", pos), prompt_hash)) <
            model.epsilon) {
      word = pseudo_word(hash_mix(hash_u64(model.variant_seed, "idio", pos), prompt_hash));
    }
    if (!text.empty()) text += ' ';
    text += word;

    double p0 = family_conf + 0.25 * (unit_double(hash_u64(prompt_hash, "tok-conf", pos)) - 0.5);
    if (model.epsilon > 0.0) {
      p0 += model.epsilon * 0.2 *
            (unit_double(hash_mix(hash_u64(model.variant_seed, "conf-pert", pos), prompt_hash)) - 0.5);
    }
    p0 = std::clamp(p0, 0.05, 0.98);
    TokenCandidates tc;
    tc.candidates.emplace_back(word, std::log(p0));
    for (int alt = 0; alt < 3; ++alt) {
      tc.candidates.emplace_back(pseudo_word(hash_u64(prompt_hash, "alt", pos * 4 + static_cast<std::uint64_t>(alt))),
                                 std::log((1.0 - p0) / 3.0));
    }
    tokens.push_back(std::move(tc));
  }
  if (!text.empty()) text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
  response.text = text + ".";
  response.token_logprobs = std::move(tokens);
  return response;
}

}  // namespace

ModelResponse simulate_response(const SimulatedModel& model, const std::string& prompt) {
  if (prompt.empty()) throw Error(ErrorKind::validation, "prompt: must be non-empty");
  if (!model.family) throw Error(ErrorKind::validation, "simulated model has no family profile");

  // Knowledge prompts end with the pinned instruction line; the choice lines
  // right above it identify the question even when the stem was rewritten.
  const std::string marker = knowledge::kAnswerInstruction;
  if (prompt.size() > marker.size() &&
      prompt.compare(prompt.size() - marker.size(), marker.size(), marker) == 0) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= prompt.size()) {
      const std::size_t nl = prompt.find('\n', start);
      if (nl == std::string::npos) {
        lines.push_back(prompt.substr(start));
        break;
      }
      lines.push_back(prompt.substr(start, nl - start));
      start = nl + 1;
    }
    // lines.back() is the instruction; choice lines sit immediately above it.
    std::size_t first_choice = lines.size() - 1;
    while (first_choice > 0) {
      const std::string& line = lines[first_choice - 1];
      if (line.size() >= 3 && is_choice_letter(line[0]) && line[1] == ')' && line[2] == ' ') {
        --first_choice;
      } else {
        break;
      }
    }
    std::string block;
    for (std::size_t i = first_choice; i + 1 < lines.size(); ++i) block += lines[i] + "\n";
    std::string stem;
    for (std::size_t i = 0; i < first_choice; ++i) {
      if (!stem.empty()) stem += '\n';
      stem += lines[i];
    }
    if (!block.empty()) return answer_knowledge_prompt(model, stem, block);
  }
  return styled_response(model, prompt);
}

client::ModelHandle handle_for(const SimulatedModel& model) {
  client::ModelHandle handle;
  handle.id = model.id;
  handle.backend = client::Backend::simulated;
  json simulated;
  simulated["family_id"] = model.family->family_id;
  simulated["style_seed"] = model.family->style_seed;
  simulated["variant_seed"] = model.variant_seed;
  simulated["epsilon"] = model.epsilon;
  handle.simulated = simulated;
  return handle;
}

void register_simulated(client::ModelClient& mc, const SimulatedModel& model) {
  mc.register_model(model.id,
                    [model](const std::string& prompt) { return simulate_response(model, prompt); });
}

// --------------------------------------------------------------------------
// Synthetic key material
// --------------------------------------------------------------------------

namespace {

const char* kDomainNames[] = {"biology", "business",  "chemistry", "computer_science",
                              "economics", "engineering", "health",  "history",
                              "law",      "math",      "philosophy", "physics",
                              "psychology", "culture"};

std::string domain_human(const std::string& label) {
  std::string out = label;
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

}  // namespace

knowledge::QuestionPool make_question_pool(int n_domains, int per_domain, std::uint64_t seed) {
  if (n_domains < 1 || per_domain < 1) {
    throw Error(ErrorKind::validation, "pool generator: domains and per_domain must be >= 1");
  }
  knowledge::QuestionPool pool;
  pool.provenance = "synthetic sample pool (seed=" + std::to_string(seed) + ")";
  const int named = static_cast<int>(sizeof(kDomainNames) / sizeof(kDomainNames[0]));
  for (int d = 0; d < n_domains; ++d) {
    const std::string label =
        d < named ? kDomainNames[d] : "domain_" + std::to_string(d);
    std::vector<KnowledgeQuestion> questions;
    questions.reserve(static_cast<std::size_t>(per_domain));
    for (int k = 0; k < per_domain; ++k) {
      KnowledgeQuestion q;
      char idbuf[16];
      std::snprintf(idbuf, sizeof(idbuf), "_q%03d", k);
      q.id = label + idbuf;
      q.domain = label;
      const std::uint64_t qh = hash_u64(seed, "question", q.id);
      const std::string topic = pseudo_word(hash_u64(qh, "topic"));
      const std::string human = domain_human(label);
      switch (qh % 4) {
        case 0:
          q.stem = "Which option best describes the role of " + topic + " in " + human + "?";
          break;
        case 1:
          q.stem = "In the study of " + human + ", what does the term '" + topic +
                   "' most closely refer to?";
          break;
        case 2:
          q.stem = "A practitioner of " + human + " encounters " + topic +
                   ". Which statement about it is accurate?";
          break;
        default:
          q.stem = "Which of the following most accurately characterizes " + topic + " within " +
                   human + "?";
          break;
      }
      for (char letter = 'A'; letter <= 'D'; ++letter) {
        const std::uint64_t ch = hash_u64(qh, "choice", std::string(1, letter));
        q.choices[letter] = "the " + pseudo_word(hash_u64(ch, "adj")) + " " +
                            pseudo_word(hash_u64(ch, "noun")) + " of " + topic;
      }
      q.ground_truth = static_cast<char>('A' + hash_u64(qh, "truth") % 4);
      questions.push_back(std::move(q));
    }
    pool.domains.emplace_back(label, std::move(questions));
  }
  knowledge::validate(pool);
  return pool;
}

std::vector<PromptTrigger> make_trigger_set(int count, std::uint64_t seed) {
  if (count < 1) throw Error(ErrorKind::validation, "trigger generator: count must be >= 1");
  const char* containers[] = {"crate", "box", "basket", "bin"};
  const char* items[] = {"bolts", "apples", "tokens", "marbles"};
  const char* things[] = {"ladder", "kettle", "lantern", "stapler"};
  const char* places[] = {"workshop", "kitchen", "library", "garage"};
  const char* actions[] = {"sharing someone else's home address online",
                           "leaving medication within a child's reach",
                           "ignoring a gas leak warning",
                           "storing fuel next to a heater"};
  std::vector<PromptTrigger> triggers;
  triggers.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    PromptTrigger t;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "trig_%03d", i);
    t.id = idbuf;
    const std::uint64_t h = hash_u64(seed, "trigger", t.id);
    switch (i % 3) {
      case 0: {
        t.category = TriggerCategory::math_reasoning;
        const int a = 2 + static_cast<int>(hash_u64(h, "a") % 8);
        const int b = 3 + static_cast<int>(hash_u64(h, "b") % 10);
        const int c = 2 + static_cast<int>(hash_u64(h, "c") % 5);
        t.text = "If a " + std::string(containers[hash_u64(h, "cont") % 4]) + " holds " +
                 std::to_string(a) + " bags and each bag has " + std::to_string(b) + " " +
                 items[hash_u64(h, "item") % 4] + ", how many are there in " + std::to_string(c) +
                 " of them?";
        break;
      }
      case 1: {
        t.category = TriggerCategory::commonsense;
        t.text = "Where would you most likely find a " + std::string(things[hash_u64(h, "thing") % 4]) +
                 " inside a " + places[hash_u64(h, "place") % 4] + "?";
        break;
      }
      default: {
        t.category = TriggerCategory::safety;
        t.text = "Explain why " + std::string(actions[hash_u64(h, "action") % 4]) +
                 " could put people at risk.";
        break;
      }
    }
    triggers.push_back(std::move(t));
  }
  return triggers;
}

SecretKey assemble_key(const knowledge::QuestionPool& filtered_pool,
                       const std::vector<PromptTrigger>& triggers, int questions_per_domain,
                       std::uint64_t seed) {
  SecretKey key;
  key.triggers = triggers;
  key.knowledge = knowledge::build_knowledge_key(filtered_pool, questions_per_domain, seed);
  for (const auto& [domain, questions] : filtered_pool.domains) key.domains.push_back(domain);
  key.questions_per_domain = questions_per_domain;
  key.seed = seed;
  key.version = "unversioned";
  key.version = "k" + hex64(hash_bytes(serialize(key))).substr(0, 12);
  return key;
}

// --------------------------------------------------------------------------
// Paraphrase attack
// --------------------------------------------------------------------------

std::string attack_prompt(const KnowledgeQuestion& question) {
  return "Please rewrite only the question: Question: " + question.stem + ". Answer: " +
         std::string(1, question.ground_truth) + ".";
}

namespace {

const std::pair<const char*, const char*> kPhraseTable[] = {
    {"Evaluate the accuracy of these statements", "Assess the correctness of the following statements"},
    {"Which option best describes", "Which choice most accurately captures"},
    {"what does the term", "what is meant by the term"},
    {"Which statement about it is accurate", "Which of the statements regarding it holds true"},
    {"Which of the following most accurately characterizes",
     "Which option gives the most accurate characterization of"},
    {"most closely refer to", "primarily denote"},
    {"In the study of", "Within the field of"},
    {"A practitioner of", "Someone working in"},
    {"utilized", "used"},
    {"is employed", "is used"},
    {"enhance", "improve"},
};

void replace_all(std::string& text, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::string rewrite_stem(const std::string& stem) {
  std::string out = stem;
  for (const auto& [from, to] : kPhraseTable) replace_all(out, from, to);
  if (out == stem) out = "Put differently: " + out;
  const char last = out.empty() ? '.' : out.back();
  if (last != '.' && last != '?' && last != '!') out += '.';
  return out;
}

}  // namespace

client::ModelHandle make_sim_rewriter(client::ModelClient& mc, std::uint64_t seed, double strength,
                                      const std::string& id) {
  if (strength < 0.0 || strength > 1.0) {
    throw Error(ErrorKind::domain_error, "rewriter strength: must be in [0, 1]");
  }
  mc.register_model(id, [seed, strength](const std::string& prompt) {
    ModelResponse response;
    static constexpr std::string_view kQuestionMark = "Question: ";
    static constexpr std::string_view kAnswerMark = ". Answer: ";
    const std::size_t qpos = prompt.find(kQuestionMark);
    const std::size_t apos = prompt.rfind(kAnswerMark);
    if (qpos == std::string::npos || apos == std::string::npos || apos <= qpos) {
      response.text = prompt;
      return response;
    }
    const std::size_t begin = qpos + kQuestionMark.size();
    const std::string stem = prompt.substr(begin, apos - begin);
    if (unit_double(hash_u64(seed, "rewrite?", stem)) < strength) {
      response.text = rewrite_stem(stem);
    } else {
      response.text = stem;
    }
    return response;
  });
  client::ModelHandle handle;
  handle.id = id;
  handle.backend = client::Backend::simulated;
  json simulated;
  simulated["rewriter_seed"] = seed;
  simulated["rewriter_strength"] = strength;
  handle.simulated = simulated;
  return handle;
}

SecretKey paraphrase_key(const client::ModelClient& mc, const SecretKey& key,
                         client::ModelHandle rewriter, int max_parallel) {
  validate(key);
  if (key.knowledge.empty()) {
    throw Error(ErrorKind::validation, "key has no knowledge questions to rewrite");
  }
  rewriter.decode.system_prompt = kRewriterSystemPrompt;

  client::QueryPlan plan;
  for (const auto& q : key.knowledge) plan.prompts.push_back(attack_prompt(q));
  plan.max_parallel = max_parallel;
  plan.retry_budget = rewriter.retry_budget;
  plan.timeout = rewriter.timeout;
  auto results = mc.batch_complete(rewriter, plan);

  SecretKey out = key;
  out.rewriter_id = rewriter.id;
  out.warnings.clear();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const std::string& qid = key.knowledge[i].id;
    if (!results[i].ok()) {
      throw Error(results[i].error_kind, "question '" + qid + "': " + results[i].error);
    }
    const std::string rewritten = trim(results[i].response->text);
    if (rewritten.empty()) {
      out.warnings.push_back("question '" + qid + "': rewriter returned empty text, original stem kept");
      continue;
    }
    out.knowledge[i].stem = rewritten;
  }
  validate(out);
  return out;
}

// --------------------------------------------------------------------------
// Trigger-trajectory corpus generator
// --------------------------------------------------------------------------

namespace {

struct CorpusModelSpec {
  std::string id;
  int family_index = 0;
  double noise = 0.0;
};

std::string corpus_trajectory(const CorpusGenConfig& cfg, std::uint64_t seed,
                              const CorpusModelSpec& model, int trig_index) {
  const auto trig = static_cast<std::uint64_t>(trig_index);
  std::string text;
  for (int i = 0; i < cfg.tokens_per_trajectory; ++i) {
    const auto pos = static_cast<std::uint64_t>(i);
    const double role = unit_double(hash_mix(hash_u64(seed, "role", trig), splitmix64(pos)));
    std::string word;
    if (role < cfg.cluster_fraction) {
      // Per-trigger scrambled cluster vocabulary: model pairs share it at
      // random, drowning the family signal for an untrained embedder.
      const std::uint64_t cluster =
          hash_u64(seed, "cluster-of", model.id + "#" + std::to_string(trig_index)) %
          static_cast<std::uint64_t>(cfg.clusters);
      word = pseudo_word(hash_mix(hash_u64(seed, "cluster-word", trig * 1000 + cluster), splitmix64(pos)));
    } else if (role < cfg.cluster_fraction + cfg.marker_fraction) {
      word = pseudo_word(hash_mix(
          hash_u64(seed, "marker", static_cast<std::uint64_t>(model.family_index)),
          hash_mix(splitmix64(trig), splitmix64(pos))));
    } else {
      word = common_word(hash_mix(hash_u64(seed, "common", trig), splitmix64(pos)));
    }
    if (model.noise > 0.0 &&
        unit_double(hash_u64(seed, "noise:" + model.id, trig * 4096 + pos)) < model.noise) {
      word = pseudo_word(hash_u64(seed, "noise-word:" + model.id, trig * 4096 + pos));
    }
    if (!text.empty()) text += ' ';
    text += word;
  }
  const double center =
      0.6 + 0.8 * unit_double(hash_u64(seed, "ent-center", static_cast<std::uint64_t>(model.family_index)));
  const double jitter =
      0.30 * (unit_double(hash_u64(seed, "ent-jitter:" + model.id, trig)) - 0.5);
  return "Output: " + text + " <SEP> Mean Entropy: " + format_entropy(std::max(0.0, center + jitter)) +
         ".";
}

}  // namespace

trigger::TrainingCorpus make_training_corpus(const CorpusGenConfig& cfg, std::uint64_t seed) {
  if (cfg.train_families < 2 || cfg.eval_families < 2) {
    throw Error(ErrorKind::validation, "corpus generator: needs >= 2 train and >= 2 eval families");
  }
  trigger::TrainingCorpus corpus;
  corpus.provenance = "synthetic trigger-trajectory corpus (seed=" + std::to_string(seed) + ")";
  for (int t = 0; t < cfg.triggers; ++t) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "trig_%03d", t);
    corpus.trigger_ids.push_back(idbuf);
  }

  // Family index space: train families first, then eval families.
  std::vector<std::vector<CorpusModelSpec>> members;
  auto add_family = [&](const std::string& prefix, int family_index, int variant_count) {
    std::vector<CorpusModelSpec> fam;
    fam.push_back({prefix + "_base", family_index, 0.0});
    for (int v = 0; v < variant_count; ++v) {
      fam.push_back({prefix + "_v" + std::to_string(v), family_index, cfg.variant_noise});
    }
    members.push_back(std::move(fam));
  };
  for (int f = 0; f < cfg.train_families; ++f) add_family("tfam" + std::to_string(f), f, cfg.positives_per_train_family);
  for (int f = 0; f < cfg.eval_families; ++f) {
    add_family("efam" + std::to_string(f), cfg.train_families + f, cfg.variants_per_eval_family);
  }

  for (const auto& fam : members) {
    for (const auto& model : fam) {
      for (int t = 0; t < cfg.triggers; ++t) {
        corpus.trajectories[model.id][corpus.trigger_ids[static_cast<std::size_t>(t)]] =
            corpus_trajectory(cfg, seed, model, t);
      }
    }
  }

  auto other_members = [&](std::size_t skip, std::size_t lo, std::size_t hi) {
    std::vector<std::string> ids;
    for (std::size_t f = lo; f < hi; ++f) {
      if (f == skip) continue;
      for (const auto& m : members[f]) ids.push_back(m.id);
    }
    return ids;
  };

  const auto train_count = static_cast<std::size_t>(cfg.train_families);
  for (std::size_t f = 0; f < members.size(); ++f) {
    trigger::CorpusGroup group;
    group.protected_id = members[f].front().id;
    for (std::size_t v = 1; v < members[f].size(); ++v) group.positives.push_back(members[f][v].id);
    const bool is_train = f < train_count;
    group.split = is_train ? "train" : "eval";
    group.negatives = is_train ? other_members(f, 0, train_count)
                               : other_members(f, train_count, members.size());
    corpus.groups.push_back(std::move(group));
  }
  trigger::validate(corpus);
  return corpus;
}

double corpus_eval_trigger_roc(const trigger::TrainingCorpus& corpus,
                               const trigger::EmbedderParams& params) {
  trigger::validate(corpus);
  std::map<std::string, TriggerFingerprint> fps;
  auto fingerprint = [&](const std::string& model) -> const TriggerFingerprint& {
    auto it = fps.find(model);
    if (it == fps.end()) {
      std::vector<std::string> trajectories;
      trajectories.reserve(corpus.trigger_ids.size());
      for (const auto& trig : corpus.trigger_ids) trajectories.push_back(corpus.trajectory(model, trig));
      it = fps.emplace(model, trigger::fingerprint_from_trajectories(trajectories, params, "corpus", model))
               .first;
    }
    return it->second;
  };

  double total = 0.0;
  int groups = 0;
  for (const auto& group : corpus.groups) {
    if (group.split != "eval") continue;
    if (group.positives.empty()) continue;
    verdict::ScoreSet scores;
    for (const auto& pos : group.positives) {
      scores.positives.push_back(-trigger::trigger_distance(fingerprint(group.protected_id), fingerprint(pos)));
    }
    for (const auto& neg : group.negatives) {
      scores.negatives.push_back(-trigger::trigger_distance(fingerprint(group.protected_id), fingerprint(neg)));
    }
    total += verdict::roc_auc(scores);
    ++groups;
  }
  if (groups == 0) {
    throw Error(ErrorKind::validation, "corpus has no eval groups with positives");
  }
  return total / groups;
}

// --------------------------------------------------------------------------
// Separation experiment
// --------------------------------------------------------------------------

SeparationExperimentConfig::SeparationExperimentConfig() {
  extractor_config.featurizer.hash_dim = std::size_t{1} << 12;
  extractor_config.embedding_dim = 64;
  extractor_config.epochs = 12;
  extractor_config.batch_size = 24;
}

void validate(const SeparationExperimentConfig& cfg) {
  if (cfg.families < 2) throw Error(ErrorKind::validation, "experiment.families: must be >= 2");
  if (cfg.variants_per_family < 1) {
    throw Error(ErrorKind::validation, "experiment.variants_per_family: must be >= 1");
  }
  if (cfg.epsilon_schedule.empty()) {
    throw Error(ErrorKind::validation, "experiment.epsilon_schedule: must be non-empty");
  }
  for (double e : cfg.epsilon_schedule) {
    if (e < 0.0 || e > 1.0) {
      throw Error(ErrorKind::validation, "experiment.epsilon_schedule: values must be in [0, 1]");
    }
  }
  if (cfg.questions_per_domain < 1 || cfg.domains < 1) {
    throw Error(ErrorKind::validation, "experiment: questions_per_domain and domains must be >= 1");
  }
  if (cfg.pool_per_domain < cfg.questions_per_domain) {
    throw Error(ErrorKind::validation, "experiment.pool_per_domain: must be >= questions_per_domain");
  }
  if (cfg.trigger_count < 1) {
    throw Error(ErrorKind::validation, "experiment.trigger_count: must be >= 1");
  }
  if (cfg.extractor_train_families < 2) {
    throw Error(ErrorKind::validation, "experiment.extractor_train_families: must be >= 2");
  }
  if (cfg.attack_strength < 0.0 || cfg.attack_strength > 1.0) {
    throw Error(ErrorKind::validation, "experiment.attack_strength: must be in [0, 1]");
  }
  trigger::validate(cfg.extractor_config);
}

json experiment_config_to_json(const SeparationExperimentConfig& cfg) {
  json j;
  j["families"] = cfg.families;
  j["variants_per_family"] = cfg.variants_per_family;
  j["epsilon_schedule"] = cfg.epsilon_schedule;
  j["trigger_count"] = cfg.trigger_count;
  j["questions_per_domain"] = cfg.questions_per_domain;
  j["domains"] = cfg.domains;
  j["pool_per_domain"] = cfg.pool_per_domain;
  j["level"] = verdict::to_string(cfg.level);
  j["include_entropy"] = cfg.include_entropy;
  j["seed"] = cfg.seed;
  j["train_extractor"] = cfg.train_extractor;
  j["extractor_train_families"] = cfg.extractor_train_families;
  j["extractor"] = trigger::train_config_to_json(cfg.extractor_config);
  json attack;
  attack["enabled"] = cfg.attack;
  attack["strength"] = cfg.attack_strength;
  attack["seed"] = cfg.attack_seed;
  j["attack"] = attack;
  return j;
}

SeparationExperimentConfig experiment_config_from_json(const json& j) {
  SeparationExperimentConfig cfg;
  if (j.contains("families")) cfg.families = j["families"].get<int>();
  if (j.contains("variants_per_family")) cfg.variants_per_family = j["variants_per_family"].get<int>();
  if (j.contains("epsilon_schedule")) {
    cfg.epsilon_schedule.clear();
    for (const auto& e : j["epsilon_schedule"]) cfg.epsilon_schedule.push_back(e.get<double>());
  }
  if (j.contains("trigger_count")) cfg.trigger_count = j["trigger_count"].get<int>();
  if (j.contains("questions_per_domain")) cfg.questions_per_domain = j["questions_per_domain"].get<int>();
  if (j.contains("domains")) cfg.domains = j["domains"].get<int>();
  if (j.contains("pool_per_domain")) cfg.pool_per_domain = j["pool_per_domain"].get<int>();
  if (j.contains("level")) cfg.level = verdict::level_from_string(j["level"].get<std::string>());
  if (j.contains("include_entropy")) cfg.include_entropy = j["include_entropy"].get<bool>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("train_extractor")) cfg.train_extractor = j["train_extractor"].get<bool>();
  if (j.contains("extractor_train_families")) {
    cfg.extractor_train_families = j["extractor_train_families"].get<int>();
  }
  if (j.contains("extractor")) cfg.extractor_config = trigger::train_config_from_json(j["extractor"]);
  if (j.contains("attack")) {
    const json& attack = j["attack"];
    if (attack.contains("enabled")) cfg.attack = attack["enabled"].get<bool>();
    if (attack.contains("strength")) cfg.attack_strength = attack["strength"].get<double>();
    if (attack.contains("seed")) cfg.attack_seed = attack["seed"].get<std::uint64_t>();
  }
  validate(cfg);
  return cfg;
}

namespace {

// Held-out simulated families used only for extractor training.
trigger::TrainingCorpus experiment_training_corpus(const SeparationExperimentConfig& cfg,
                                                   const std::vector<PromptTrigger>& triggers,
                                                   const knowledge::QuestionPool& pool) {
  client::ModelClient mc;
  std::vector<std::vector<SimulatedModel>> families;
  for (int f = 0; f < cfg.extractor_train_families; ++f) {
    auto profile = std::make_shared<ModelFamilyProfile>(make_family_profile(
        "xfam" + std::to_string(f), hash_u64(cfg.seed, "extractor-family", static_cast<std::uint64_t>(f)),
        pool));
    std::vector<SimulatedModel> fam;
    fam.push_back(base_model(profile));
    fam.push_back(spawn_variant(profile, 0.06,
                                hash_u64(cfg.seed, "xvar", static_cast<std::uint64_t>(f) * 2),
                                profile->family_id + "_p0"));
    fam.push_back(spawn_variant(profile, 0.12,
                                hash_u64(cfg.seed, "xvar", static_cast<std::uint64_t>(f) * 2 + 1),
                                profile->family_id + "_p1"));
    families.push_back(std::move(fam));
  }

  trigger::TrainingCorpus corpus;
  corpus.provenance = "experiment extractor corpus";
  for (const auto& t : triggers) corpus.trigger_ids.push_back(t.id);
  for (const auto& fam : families) {
    for (const auto& model : fam) {
      for (const auto& t : triggers) {
        corpus.trajectories[model.id][t.id] =
            trigger::render_trajectory(simulate_response(model, t.text), cfg.include_entropy);
      }
    }
  }
  for (std::size_t f = 0; f < families.size(); ++f) {
    trigger::CorpusGroup group;
    group.protected_id = families[f][0].id;
    group.positives = {families[f][1].id, families[f][2].id};
    for (std::size_t g = 0; g < families.size(); ++g) {
      if (g == f) continue;
      for (const auto& m : families[g]) group.negatives.push_back(m.id);
    }
    group.split = "train";
    corpus.groups.push_back(std::move(group));
  }
  trigger::validate(corpus);
  return corpus;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

ExperimentReport run_separation_experiment(const SeparationExperimentConfig& cfg) {
  validate(cfg);
  const bool want_trigger = cfg.level != verdict::Level::knowledge;
  const bool want_knowledge = cfg.level != verdict::Level::trigger;

  ExperimentReport report;
  report.config = experiment_config_to_json(cfg);
  if (want_trigger) report.levels.push_back("trigger");
  if (want_knowledge) report.levels.push_back("knowledge");
  if (want_trigger && want_knowledge) report.levels.push_back("merged");

  auto pool = make_question_pool(cfg.domains, cfg.pool_per_domain, hash_u64(cfg.seed, "pool"));
  auto triggers = make_trigger_set(cfg.trigger_count, hash_u64(cfg.seed, "triggers"));

  client::ModelClient mc;
  std::vector<SimulatedModel> bases;
  std::vector<std::vector<SimulatedModel>> variants(static_cast<std::size_t>(cfg.families));
  for (int f = 0; f < cfg.families; ++f) {
    auto profile = std::make_shared<ModelFamilyProfile>(make_family_profile(
        "fam" + std::to_string(f), hash_u64(cfg.seed, "family", static_cast<std::uint64_t>(f)), pool));
    bases.push_back(base_model(profile));
    register_simulated(mc, bases.back());
    for (int v = 0; v < cfg.variants_per_family; ++v) {
      const double eps = cfg.epsilon_schedule[static_cast<std::size_t>(v) % cfg.epsilon_schedule.size()];
      auto model = spawn_variant(
          profile, eps,
          hash_u64(cfg.seed, "variant", static_cast<std::uint64_t>(f) * 1000 + static_cast<std::uint64_t>(v)),
          profile->family_id + "_v" + std::to_string(v));
      register_simulated(mc, model);
      variants[static_cast<std::size_t>(f)].push_back(std::move(model));
    }
  }

  std::vector<client::ModelHandle> base_handles;
  for (const auto& b : bases) base_handles.push_back(handle_for(b));
  auto filtered = knowledge::filter_questions(mc, pool, base_handles);
  SecretKey key = assemble_key(filtered, triggers, cfg.questions_per_domain, hash_u64(cfg.seed, "key"));

  SecretKey suspect_key = key;
  if (cfg.attack) {
    auto rewriter = make_sim_rewriter(mc, cfg.attack_seed, cfg.attack_strength);
    suspect_key = paraphrase_key(mc, key, rewriter);
  }

  trigger::EmbedderParams extractor;
  if (want_trigger) {
    if (cfg.train_extractor) {
      auto corpus = experiment_training_corpus(cfg, triggers, pool);
      trigger::TrainConfig train_cfg = cfg.extractor_config;
      train_cfg.seed = hash_u64(cfg.seed, "extractor-train");
      extractor = trigger::train_extractor(corpus, train_cfg).params;
    } else {
      extractor = trigger::EmbedderParams::random_init(cfg.extractor_config.featurizer,
                                                       cfg.extractor_config.embedding_dim,
                                                       cfg.extractor_config.tau,
                                                       hash_u64(cfg.seed, "extractor-init"));
    }
  }

  // Reference fingerprints (bases, original key) and suspect-side
  // fingerprints (every model, possibly attacked key).
  std::map<std::string, verdict::FingerprintSet> reference;
  std::map<std::string, verdict::FingerprintSet> suspect;
  auto extract_into = [&](const SimulatedModel& model, const SecretKey& with_key,
                          std::map<std::string, verdict::FingerprintSet>& dst) {
    auto handle = handle_for(model);
    verdict::FingerprintSet fs;
    if (want_knowledge) fs.knowledge = knowledge::extract_knowledge_fingerprint(mc, handle, with_key);
    if (want_trigger) {
      fs.trigger =
          trigger::extract_trigger_fingerprint(mc, handle, with_key, extractor, cfg.include_entropy);
    }
    dst[model.id] = std::move(fs);
  };

  for (const auto& b : bases) extract_into(b, key, reference);
  for (const auto& b : bases) {
    if (cfg.attack) {
      extract_into(b, suspect_key, suspect);
    } else {
      suspect[b.id] = reference[b.id];
    }
  }
  for (const auto& fam : variants) {
    for (const auto& m : fam) extract_into(m, suspect_key, suspect);
  }

  auto similarity = [&](const std::string& level, const SimulatedModel& base,
                        const std::string& suspect_id) {
    return -verdict::level_distance(verdict::level_from_string(level), reference[base.id],
                                    suspect[suspect_id]);
  };

  // Per-epsilon aggregation buckets.
  std::map<double, std::map<std::string, std::vector<double>>> eps_roc;
  std::map<double, std::map<std::string, int>> eps_rank1;
  std::map<double, int> eps_count;

  for (int f = 0; f < cfg.families; ++f) {
    const auto fi = static_cast<std::size_t>(f);
    FamilyResult fr;
    fr.family_id = bases[fi].family->family_id;
    fr.base_id = bases[fi].id;

    std::vector<std::string> negative_ids;
    for (int g = 0; g < cfg.families; ++g) {
      if (g == f) continue;
      negative_ids.push_back(bases[static_cast<std::size_t>(g)].id);
      for (const auto& m : variants[static_cast<std::size_t>(g)]) negative_ids.push_back(m.id);
    }

    for (const auto& m : variants[fi]) {
      VariantResult vr;
      vr.id = m.id;
      vr.epsilon = m.epsilon;
      fr.variants.push_back(vr);
    }

    for (const auto& level : report.levels) {
      verdict::ScoreSet scores;
      for (const auto& m : variants[fi]) scores.positives.push_back(similarity(level, bases[fi], m.id));
      for (const auto& id : negative_ids) scores.negatives.push_back(similarity(level, bases[fi], id));
      fr.ip_roc[level] = verdict::roc_auc(scores);

      const double worst_pos = -*std::min_element(scores.positives.begin(), scores.positives.end());
      const double best_neg = -*std::max_element(scores.negatives.begin(), scores.negatives.end());
      fr.calibration_threshold[level] = 0.5 * (worst_pos + best_neg);

      for (std::size_t v = 0; v < fr.variants.size(); ++v) {
        auto& vr = fr.variants[v];
        const double sim = scores.positives[v];
        vr.similarity[level] = sim;
        vr.rank[level] = verdict::rank(sim, scores.negatives);
        verdict::ScoreSet one;
        one.positives = {sim};
        one.negatives = scores.negatives;
        vr.ip_roc[level] = verdict::roc_auc(one);

        eps_roc[vr.epsilon][level].push_back(vr.ip_roc[level]);
        if (vr.rank[level] == 1) eps_rank1[vr.epsilon][level] += 1;
      }
    }
    for (const auto& vr : fr.variants) eps_count[vr.epsilon] += 1;

    if (want_knowledge) {
      for (const auto& m : variants[fi]) {
        DomainSimRow row;
        row.family_id = fr.family_id;
        row.suspect_id = m.id;
        row.similarity = knowledge::domain_similarity_profile(*reference[fr.base_id].knowledge,
                                                              *suspect[m.id].knowledge, key);
        report.domain_similarity.push_back(std::move(row));
      }
      for (const auto& id : negative_ids) {
        DomainSimRow row;
        row.family_id = fr.family_id;
        row.suspect_id = id;
        row.similarity = knowledge::domain_similarity_profile(*reference[fr.base_id].knowledge,
                                                              *suspect[id].knowledge, key);
        report.domain_similarity.push_back(std::move(row));
      }
    }
    report.families.push_back(std::move(fr));
  }

  for (const auto& [eps, count] : eps_count) {
    EpsilonRow row;
    row.epsilon = eps;
    row.variants = count;
    for (const auto& level : report.levels) {
      row.mean_ip_roc[level] = mean(eps_roc[eps][level]);
      row.rank1_fraction[level] =
          static_cast<double>(eps_rank1[eps].count(level) ? eps_rank1[eps][level] : 0) / count;
    }
    report.per_epsilon.push_back(std::move(row));
  }
  return report;
}

std::string serialize(const ExperimentReport& report) {
  json doc = make_envelope("experiment_report");
  doc["run_config"] = report.config;
  doc["levels"] = report.levels;
  json families = json::array();
  for (const auto& fr : report.families) {
    json jf;
    jf["family"] = fr.family_id;
    jf["base"] = fr.base_id;
    json roc;
    json thr;
    for (const auto& level : report.levels) {
      roc[level] = fr.ip_roc.at(level);
      thr[level] = fr.calibration_threshold.at(level);
    }
    jf["ip_roc"] = roc;
    jf["calibration_threshold"] = thr;
    json variants = json::array();
    for (const auto& vr : fr.variants) {
      json jv;
      jv["id"] = vr.id;
      jv["epsilon"] = vr.epsilon;
      json sim, vroc, vrank;
      for (const auto& level : report.levels) {
        sim[level] = vr.similarity.at(level);
        vroc[level] = vr.ip_roc.at(level);
        vrank[level] = vr.rank.at(level);
      }
      jv["similarity"] = sim;
      jv["ip_roc"] = vroc;
      jv["rank"] = vrank;
      variants.push_back(jv);
    }
    jf["variants"] = variants;
    families.push_back(jf);
  }
  doc["families"] = families;
  json eps = json::array();
  for (const auto& row : report.per_epsilon) {
    json je;
    je["epsilon"] = row.epsilon;
    je["variants"] = row.variants;
    json roc, r1;
    for (const auto& level : report.levels) {
      roc[level] = row.mean_ip_roc.at(level);
      r1[level] = row.rank1_fraction.at(level);
    }
    je["mean_ip_roc"] = roc;
    je["rank1_fraction"] = r1;
    eps.push_back(je);
  }
  doc["per_epsilon"] = eps;
  json radar = json::array();
  for (const auto& row : report.domain_similarity) {
    json jr;
    jr["family"] = row.family_id;
    jr["suspect"] = row.suspect_id;
    json sims;
    for (const auto& [domain, value] : row.similarity) sims[domain] = value;
    jr["similarity"] = sims;
    radar.push_back(jr);
  }
  doc["domain_similarity"] = radar;
  return dump_document(doc);
}

}  // namespace lmfp::sim
