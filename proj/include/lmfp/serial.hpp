#pragma once

#include <string>
#include <string_view>

#include <json.hpp>

#include "lmfp/types.hpp"

namespace lmfp {

// All artifact files share one envelope: a single JSON document with a
// "format" version tag and a "kind" discriminator, dumped with a fixed key
// order and two-space indent so identical objects produce identical bytes.
using json = nlohmann::ordered_json;

inline constexpr const char* kFormatVersion = "lmfp/1";

json make_envelope(const char* kind);
std::string dump_document(const json& doc);

// Parses and checks the envelope. Malformed input raises a parse error with
// the byte offset; an unsupported format version or foreign kind raises a
// validation error without producing a partial object.
json parse_document(std::string_view bytes, const char* expected_kind);

// Field access that names the missing/mistyped field in its error.
const json& require(const json& doc, const char* field);
std::string require_string(const json& doc, const char* field);
double require_double(const json& doc, const char* field);
std::int64_t require_int(const json& doc, const char* field);
std::uint64_t require_uint(const json& doc, const char* field);
bool require_bool(const json& doc, const char* field);

json trigger_to_json(const PromptTrigger& t);
PromptTrigger trigger_from_json(const json& j);
json question_to_json(const KnowledgeQuestion& q);
KnowledgeQuestion question_from_json(const json& j);

std::string serialize_trigger_set(const std::vector<PromptTrigger>& triggers);
std::vector<PromptTrigger> trigger_set_from_bytes(std::string_view bytes);

std::string serialize(const SecretKey& key);
std::string serialize(const TriggerFingerprint& fp);
std::string serialize(const KnowledgeFingerprint& fp);
std::string serialize(const VerificationVerdict& v);

template <typename T>
T deserialize(std::string_view bytes);

template <> SecretKey deserialize<SecretKey>(std::string_view bytes);
template <> TriggerFingerprint deserialize<TriggerFingerprint>(std::string_view bytes);
template <> KnowledgeFingerprint deserialize<KnowledgeFingerprint>(std::string_view bytes);
template <> VerificationVerdict deserialize<VerificationVerdict>(std::string_view bytes);

// File helpers used across the toolkit.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace lmfp
