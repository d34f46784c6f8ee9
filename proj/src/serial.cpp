#include "lmfp/serial.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "lmfp/errors.hpp"

namespace lmfp {

json make_envelope(const char* kind) {
  json doc;
  doc["format"] = kFormatVersion;
  doc["kind"] = kind;
  return doc;
}

std::string dump_document(const json& doc) { return doc.dump(2) + "\n"; }

json parse_document(std::string_view bytes, const char* expected_kind) {
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::parse,
                "malformed document at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorKind::parse, "document is not an object");
  const std::string format = require_string(doc, "format");
  if (format != kFormatVersion) {
    throw Error(ErrorKind::validation,
                "format: unsupported version '" + format + "' (expected " + kFormatVersion + ")");
  }
  const std::string kind = require_string(doc, "kind");
  if (kind != expected_kind) {
    throw Error(ErrorKind::validation,
                "kind: expected '" + std::string(expected_kind) + "', found '" + kind + "'");
  }
  return doc;
}

const json& require(const json& doc, const char* field) {
  auto it = doc.find(field);
  if (it == doc.end()) {
    throw Error(ErrorKind::parse, std::string(field) + ": missing field");
  }
  return *it;
}

namespace {

[[noreturn]] void bad_type(const char* field, const char* want) {
  throw Error(ErrorKind::parse, std::string(field) + ": expected " + want);
}

}  // namespace

std::string require_string(const json& doc, const char* field) {
  const json& v = require(doc, field);
  if (!v.is_string()) bad_type(field, "a string");
  return v.get<std::string>();
}

double require_double(const json& doc, const char* field) {
  const json& v = require(doc, field);
  if (!v.is_number()) bad_type(field, "a number");
  return v.get<double>();
}

std::int64_t require_int(const json& doc, const char* field) {
  const json& v = require(doc, field);
  if (!v.is_number_integer()) bad_type(field, "an integer");
  return v.get<std::int64_t>();
}

std::uint64_t require_uint(const json& doc, const char* field) {
  const json& v = require(doc, field);
  if (!v.is_number_integer()) bad_type(field, "an unsigned integer");
  return v.get<std::uint64_t>();
}

bool require_bool(const json& doc, const char* field) {
  const json& v = require(doc, field);
  if (!v.is_boolean()) bad_type(field, "a boolean");
  return v.get<bool>();
}

json trigger_to_json(const PromptTrigger& t) {
  json j;
  j["id"] = t.id;
  j["text"] = t.text;
  j["category"] = to_string(t.category);
  return j;
}

PromptTrigger trigger_from_json(const json& j) {
  PromptTrigger t;
  t.id = require_string(j, "id");
  t.text = require_string(j, "text");
  t.category = trigger_category_from_string(require_string(j, "category"));
  return t;
}

json question_to_json(const KnowledgeQuestion& q) {
  json j;
  j["id"] = q.id;
  j["domain"] = q.domain;
  j["stem"] = q.stem;
  json choices;
  for (const auto& [letter, text] : q.choices) choices[std::string(1, letter)] = text;
  j["choices"] = choices;
  j["ground_truth"] = std::string(1, q.ground_truth);
  return j;
}

KnowledgeQuestion question_from_json(const json& j) {
  KnowledgeQuestion q;
  q.id = require_string(j, "id");
  q.domain = require_string(j, "domain");
  q.stem = require_string(j, "stem");
  const json& choices = require(j, "choices");
  if (!choices.is_object()) bad_type("choices", "an object");
  for (const auto& [letter, text] : choices.items()) {
    if (letter.size() != 1 || !text.is_string()) {
      throw Error(ErrorKind::parse, "choices: entries must map a letter to a string");
    }
    q.choices[letter[0]] = text.get<std::string>();
  }
  const std::string gt = require_string(j, "ground_truth");
  if (gt.size() != 1) bad_type("ground_truth", "a single letter");
  q.ground_truth = gt[0];
  return q;
}

// --------------------------------------------------------------------------
// Trigger sets
// --------------------------------------------------------------------------

std::string serialize_trigger_set(const std::vector<PromptTrigger>& triggers) {
  json doc = make_envelope("trigger_set");
  json arr = json::array();
  std::set<std::string> ids;
  for (const auto& t : triggers) {
    validate(t);
    if (!ids.insert(t.id).second) {
      throw Error(ErrorKind::validation, "triggers: duplicate id '" + t.id + "'");
    }
    arr.push_back(trigger_to_json(t));
  }
  doc["triggers"] = arr;
  return dump_document(doc);
}

std::vector<PromptTrigger> trigger_set_from_bytes(std::string_view bytes) {
  json doc = parse_document(bytes, "trigger_set");
  std::vector<PromptTrigger> triggers;
  std::set<std::string> ids;
  for (const auto& t : require(doc, "triggers")) {
    triggers.push_back(trigger_from_json(t));
    validate(triggers.back());
    if (!ids.insert(triggers.back().id).second) {
      throw Error(ErrorKind::validation, "triggers: duplicate id '" + triggers.back().id + "'");
    }
  }
  return triggers;
}

// --------------------------------------------------------------------------
// SecretKey
// --------------------------------------------------------------------------

std::string serialize(const SecretKey& key) {
  validate(key);
  json doc = make_envelope("secret_key");
  doc["version"] = key.version;
  doc["seed"] = key.seed;
  doc["questions_per_domain"] = key.questions_per_domain;
  doc["domains"] = key.domains;
  json triggers = json::array();
  for (const auto& t : key.triggers) triggers.push_back(trigger_to_json(t));
  doc["triggers"] = triggers;
  json questions = json::array();
  for (const auto& q : key.knowledge) questions.push_back(question_to_json(q));
  doc["knowledge"] = questions;
  if (!key.rewriter_id.empty() || !key.warnings.empty()) {
    json prov;
    if (!key.rewriter_id.empty()) prov["rewriter"] = key.rewriter_id;
    if (!key.warnings.empty()) prov["warnings"] = key.warnings;
    doc["provenance"] = prov;
  }
  if (!key.run_config.is_null()) doc["run_config"] = key.run_config;
  return dump_document(doc);
}

template <>
SecretKey deserialize<SecretKey>(std::string_view bytes) {
  json doc = parse_document(bytes, "secret_key");
  SecretKey key;
  key.version = require_string(doc, "version");
  key.seed = require_uint(doc, "seed");
  key.questions_per_domain = static_cast<int>(require_int(doc, "questions_per_domain"));
  for (const auto& d : require(doc, "domains")) key.domains.push_back(d.get<std::string>());
  for (const auto& t : require(doc, "triggers")) key.triggers.push_back(trigger_from_json(t));
  for (const auto& q : require(doc, "knowledge")) key.knowledge.push_back(question_from_json(q));
  if (doc.contains("provenance")) {
    const json& prov = doc["provenance"];
    if (prov.contains("rewriter")) key.rewriter_id = prov["rewriter"].get<std::string>();
    if (prov.contains("warnings")) {
      for (const auto& w : prov["warnings"]) key.warnings.push_back(w.get<std::string>());
    }
  }
  if (doc.contains("run_config")) key.run_config = doc["run_config"];
  validate(key);
  return key;
}

// --------------------------------------------------------------------------
// Fingerprints
// --------------------------------------------------------------------------

std::string serialize(const TriggerFingerprint& fp) {
  validate(fp);
  json doc = make_envelope("trigger_fingerprint");
  doc["key_version"] = fp.key_version;
  doc["embedder_id"] = fp.embedder_id;
  doc["model_id"] = fp.model_id;
  doc["vectors"] = fp.vectors;
  if (!fp.run_config.is_null()) doc["run_config"] = fp.run_config;
  return dump_document(doc);
}

template <>
TriggerFingerprint deserialize<TriggerFingerprint>(std::string_view bytes) {
  json doc = parse_document(bytes, "trigger_fingerprint");
  TriggerFingerprint fp;
  fp.key_version = require_string(doc, "key_version");
  fp.embedder_id = require_string(doc, "embedder_id");
  fp.model_id = require_string(doc, "model_id");
  const json& vectors = require(doc, "vectors");
  if (!vectors.is_array()) bad_type("vectors", "an array of rows");
  for (const auto& row : vectors) {
    fp.vectors.emplace_back();
    for (const auto& v : row) fp.vectors.back().push_back(v.get<double>());
  }
  if (doc.contains("run_config")) fp.run_config = doc["run_config"];
  validate(fp);
  return fp;
}

std::string serialize(const KnowledgeFingerprint& fp) {
  validate(fp);
  json doc = make_envelope("knowledge_fingerprint");
  doc["key_version"] = fp.key_version;
  doc["model_id"] = fp.model_id;
  doc["num_questions"] = fp.num_questions;
  json answers = json::array();
  for (char a : fp.answers) answers.push_back(answer_to_string(a));
  doc["answers"] = answers;
  if (!fp.run_config.is_null()) doc["run_config"] = fp.run_config;
  return dump_document(doc);
}

template <>
KnowledgeFingerprint deserialize<KnowledgeFingerprint>(std::string_view bytes) {
  json doc = parse_document(bytes, "knowledge_fingerprint");
  KnowledgeFingerprint fp;
  fp.key_version = require_string(doc, "key_version");
  fp.model_id = require_string(doc, "model_id");
  fp.num_questions = static_cast<int>(require_int(doc, "num_questions"));
  for (const auto& a : require(doc, "answers")) {
    fp.answers.push_back(answer_from_string(a.get<std::string>()));
  }
  if (doc.contains("run_config")) fp.run_config = doc["run_config"];
  validate(fp);
  return fp;
}

// --------------------------------------------------------------------------
// Verdicts
// --------------------------------------------------------------------------

namespace {

json optional_to_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

std::string serialize(const VerificationVerdict& v) {
  validate(v);
  json doc = make_envelope("verdict");
  doc["d_T"] = optional_to_json(v.d_T);
  doc["d_K_raw"] = v.d_K_raw ? json(*v.d_K_raw) : json(nullptr);
  doc["d_K_norm"] = optional_to_json(v.d_K_norm);
  doc["alpha"] = v.alpha;
  doc["beta"] = v.beta;
  doc["d_merged"] = v.d_merged;
  doc["threshold"] = v.threshold;
  doc["is_pirated"] = v.is_pirated;
  json prov;
  prov["protected_model"] = v.provenance.protected_model;
  prov["suspect_model"] = v.provenance.suspect_model;
  prov["key_version"] = v.provenance.key_version;
  prov["level"] = v.provenance.level;
  prov["num_questions"] = v.provenance.num_questions;
  doc["provenance"] = prov;
  return dump_document(doc);
}

template <>
VerificationVerdict deserialize<VerificationVerdict>(std::string_view bytes) {
  json doc = parse_document(bytes, "verdict");
  VerificationVerdict v;
  if (!require(doc, "d_T").is_null()) v.d_T = doc["d_T"].get<double>();
  if (!require(doc, "d_K_raw").is_null()) v.d_K_raw = doc["d_K_raw"].get<int>();
  if (!require(doc, "d_K_norm").is_null()) v.d_K_norm = doc["d_K_norm"].get<double>();
  v.alpha = require_double(doc, "alpha");
  v.beta = require_double(doc, "beta");
  v.d_merged = require_double(doc, "d_merged");
  v.threshold = require_double(doc, "threshold");
  v.is_pirated = require_bool(doc, "is_pirated");
  const json& prov = require(doc, "provenance");
  v.provenance.protected_model = require_string(prov, "protected_model");
  v.provenance.suspect_model = require_string(prov, "suspect_model");
  v.provenance.key_version = require_string(prov, "key_version");
  v.provenance.level = require_string(prov, "level");
  v.provenance.num_questions = static_cast<int>(require_int(prov, "num_questions"));
  validate(v);
  return v;
}

// --------------------------------------------------------------------------
// Files
// --------------------------------------------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::usage, "cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::usage, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::usage, "failed writing '" + path + "'");
}

}  // namespace lmfp
