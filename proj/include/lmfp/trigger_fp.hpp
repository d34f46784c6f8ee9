#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lmfp/model_client.hpp"
#include "lmfp/serial.hpp"
#include "lmfp/types.hpp"

namespace lmfp::trigger {

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

// Mean Shannon entropy (nats) over the per-token candidate distributions,
// each renormalized to sum to 1. Top-k truncation means this underestimates
// the true entropy; the value is only ever compared with values produced the
// same way.
double mean_token_entropy(const ModelResponse& response);

// "Output: {text} <SEP> Mean Entropy: {e}." with the entropy fixed to four
// decimals, or "Output: {text}" when no entropy is given. Byte-exact:
// fingerprints embed these strings, so the format is part of the fingerprint
// definition.
std::string trajectory_template(std::string_view output_text, std::optional<double> mean_entropy);

std::string render_trajectory(const ModelResponse& response, bool include_entropy);

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

struct FeaturizerConfig {
  std::vector<int> ngram_sizes{3, 4, 5};
  std::size_t hash_dim = std::size_t{1} << 18;  // power of two
  std::uint64_t hash_seed = 0x5eedu;

  bool operator==(const FeaturizerConfig&) const = default;
};

// L2-normalized hashed character n-gram counts, kept sparse: sorted
// (bucket, weight) pairs. Empty text produces no entries.
struct SparseVec {
  std::vector<std::pair<std::uint32_t, double>> entries;
};

SparseVec featurize_sparse(std::string_view text, const FeaturizerConfig& cfg);
std::vector<double> featurize(std::string_view text, const FeaturizerConfig& cfg);

struct EmbedderParams {
  FeaturizerConfig featurizer;
  int embedding_dim = 256;
  double tau = 0.04;
  std::vector<double> W;  // row-major, hash_dim x embedding_dim

  const double* row(std::size_t i) const { return W.data() + i * static_cast<std::size_t>(embedding_dim); }
  double* row(std::size_t i) { return W.data() + i * static_cast<std::size_t>(embedding_dim); }

  // W entries i.i.d. uniform on [-1/sqrt(F), +1/sqrt(F)) from the seed.
  static EmbedderParams random_init(const FeaturizerConfig& cfg, int embedding_dim, double tau,
                                    std::uint64_t seed);
};

void validate(const EmbedderParams& params);

// Content hash identifying a trained extractor; recorded in fingerprints so
// incompatible ones cannot be compared.
std::string embedder_id(const EmbedderParams& params);

// L2-normalize(W^T . featurize(trajectory)). A zero pre-normalization vector
// (empty trajectory, null projection) is an error, never a NaN vector.
std::vector<double> embed(std::string_view trajectory, const EmbedderParams& params);
std::vector<double> embed_sparse(const SparseVec& features, const EmbedderParams& params);

// ---------------------------------------------------------------------------
// Contrastive objective
// ---------------------------------------------------------------------------

// Which similarities the log-denominator sums over. negatives_only matches
// the objective this extractor is trained with by default; standard_info_nce
// additionally includes the positive pair.
enum class LossVariant { negatives_only, standard_info_nce };

const char* to_string(LossVariant v);
LossVariant loss_variant_from_string(const std::string& s);

// One objective term: (f.f+)/tau - logsumexp over the denominator
// similarities. The training loss is the negated sum of these terms.
double info_nce_term(const std::vector<double>& anchor, const std::vector<double>& positive,
                     const std::vector<std::vector<double>>& negatives, double tau,
                     LossVariant variant = LossVariant::negatives_only);

struct TripleRef {
  const SparseVec* anchor = nullptr;
  const SparseVec* positive = nullptr;
  std::vector<const SparseVec*> negatives;
};

// Sparse gradient w.r.t. W: only rows touched by the batch are stored.
struct WGradient {
  std::size_t feature_dim = 0;
  int embed_dim = 0;
  std::map<std::uint32_t, std::vector<double>> rows;

  double at(std::size_t i, int j) const;
  std::vector<double> to_dense() const;
};

struct LossGrad {
  double loss = 0.0;
  WGradient grad;
};

// Loss = -sum of info_nce_term over the batch; gradient is the exact analytic
// derivative through featurize -> project -> normalize -> dot -> logsumexp.
LossGrad loss_and_gradient(const EmbedderParams& params, const std::vector<TripleRef>& batch,
                           LossVariant variant);

// ---------------------------------------------------------------------------
// Training corpus and loop
// ---------------------------------------------------------------------------

struct CorpusGroup {
  std::string protected_id;
  std::vector<std::string> positives;  // pirated-variant ids
  std::vector<std::string> negatives;  // independent model ids
  std::string split = "train";         // "train" or "eval"
};

struct TrainingCorpus {
  std::vector<std::string> trigger_ids;
  std::vector<CorpusGroup> groups;
  // model id -> trigger id -> trajectory string
  std::map<std::string, std::map<std::string, std::string>> trajectories;
  std::string provenance;

  const std::string& trajectory(const std::string& model, const std::string& trig) const;
};

void validate(const TrainingCorpus& corpus);
std::string serialize(const TrainingCorpus& corpus);
TrainingCorpus corpus_from_bytes(std::string_view bytes);
std::string corpus_hash(const TrainingCorpus& corpus);

struct TrainConfig {
  FeaturizerConfig featurizer;
  int embedding_dim = 256;
  int epochs = 24;
  int batch_size = 24;
  double peak_learning_rate = 1e-4;
  double warmup_fraction = 0.03;  // linear warmup, then cosine decay to zero
  double tau = 0.04;              // 0.004 is the other stock setting
  LossVariant loss_variant = LossVariant::negatives_only;
  std::uint64_t seed = 1;
};

void validate(const TrainConfig& cfg);
json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const json& j);

struct TrainResult {
  EmbedderParams params;
  std::vector<double> epoch_mean_loss;  // mean per-triple loss, one per epoch
  std::string corpus_digest;
};

// Mini-batch gradient ascent on the contrastive objective, deterministic per
// seed. epochs = 0 returns the seeded initialization untouched.
TrainResult train_extractor(const TrainingCorpus& corpus, const TrainConfig& cfg);

// Extractor file: featurizer + W + tau + training provenance.
std::string serialize_extractor(const EmbedderParams& params, const json& provenance);
struct StoredExtractor {
  EmbedderParams params;
  json provenance;
};
StoredExtractor extractor_from_bytes(std::string_view bytes);

// ---------------------------------------------------------------------------
// Fingerprints
// ---------------------------------------------------------------------------

TriggerFingerprint fingerprint_from_trajectories(const std::vector<std::string>& trajectories,
                                                 const EmbedderParams& params,
                                                 const std::string& key_version,
                                                 const std::string& model_id);

TriggerFingerprint extract_trigger_fingerprint(const client::ModelClient& mc,
                                               const client::ModelHandle& model,
                                               const SecretKey& key, const EmbedderParams& params,
                                               bool include_entropy, int max_parallel = 4);

// d_T = -(1/|X|) sum_x cos(f_pro_x, f_sus_x), in [-1, 1].
double trigger_distance(const TriggerFingerprint& fp_pro, const TriggerFingerprint& fp_sus);

}  // namespace lmfp::trigger
