#include "lmfp/trigger_fp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <set>

#include "lmfp/detrng.hpp"
#include "lmfp/errors.hpp"

namespace lmfp::trigger {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Streaming FNV-1a fed with explicit little-endian bytes so digests match
// across platforms.
struct StreamHash {
  std::uint64_t h = 0xcbf29ce484222325ULL;

  void byte(unsigned char b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  void bytes(std::string_view s) {
    for (unsigned char c : s) byte(c);
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) byte(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
  }
  void f64(double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    u64(bits);
  }
  std::uint64_t digest() const { return splitmix64(h); }
};

double log_sum_exp(const std::vector<double>& values) {
  double m = values.front();
  for (double v : values) m = std::max(m, v);
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - m);
  return m + std::log(sum);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

double mean_token_entropy(const ModelResponse& response) {
  if (!response.token_logprobs) {
    throw Error(ErrorKind::capability,
                "response has no token logprobs; entropy unavailable (use the no-entropy mode)");
  }
  const auto& tokens = *response.token_logprobs;
  if (tokens.empty()) throw Error(ErrorKind::data, "response has an empty token list");

  double total = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto& cands = tokens[t].candidates;
    if (cands.empty()) {
      throw Error(ErrorKind::data, "token " + std::to_string(t) + " has an empty candidate list");
    }
    // Renormalize the (possibly truncated) candidate set to a distribution.
    double m = cands.front().second;
    for (const auto& [tok, lp] : cands) m = std::max(m, lp);
    double z = 0.0;
    for (const auto& [tok, lp] : cands) z += std::exp(lp - m);
    double h = 0.0;
    for (const auto& [tok, lp] : cands) {
      const double p = std::exp(lp - m) / z;
      if (p > 0.0) h -= p * std::log(p);
    }
    total += h;
  }
  return std::max(0.0, total / static_cast<double>(tokens.size()));
}

std::string trajectory_template(std::string_view output_text, std::optional<double> mean_entropy) {
  std::string out = "Output: ";
  out += output_text;
  if (!mean_entropy) return out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", *mean_entropy);
  out += " <SEP> Mean Entropy: ";
  out += buf;
  out += ".";
  return out;
}

std::string render_trajectory(const ModelResponse& response, bool include_entropy) {
  if (!include_entropy) return trajectory_template(response.text, std::nullopt);
  return trajectory_template(response.text, mean_token_entropy(response));
}

// ---------------------------------------------------------------------------
// Featurizer
// ---------------------------------------------------------------------------

SparseVec featurize_sparse(std::string_view text, const FeaturizerConfig& cfg) {
  std::map<std::uint32_t, double> buckets;
  const std::uint64_t mask = cfg.hash_dim - 1;
  for (int n : cfg.ngram_sizes) {
    if (n <= 0 || static_cast<std::size_t>(n) > text.size()) continue;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= text.size(); ++i) {
      const std::uint64_t h = hash_bytes(text.substr(i, static_cast<std::size_t>(n)), cfg.hash_seed);
      buckets[static_cast<std::uint32_t>(h & mask)] += 1.0;
    }
  }
  SparseVec out;
  out.entries.reserve(buckets.size());
  double sq = 0.0;
  for (const auto& [idx, count] : buckets) sq += count * count;
  if (sq > 0.0) {
    const double inv = 1.0 / std::sqrt(sq);
    for (const auto& [idx, count] : buckets) out.entries.emplace_back(idx, count * inv);
  }
  return out;
}

std::vector<double> featurize(std::string_view text, const FeaturizerConfig& cfg) {
  std::vector<double> dense(cfg.hash_dim, 0.0);
  for (const auto& [idx, v] : featurize_sparse(text, cfg).entries) dense[idx] = v;
  return dense;
}

// ---------------------------------------------------------------------------
// Embedder
// ---------------------------------------------------------------------------

void validate(const EmbedderParams& params) {
  if (params.featurizer.hash_dim == 0 ||
      (params.featurizer.hash_dim & (params.featurizer.hash_dim - 1)) != 0) {
    throw Error(ErrorKind::validation, "featurizer.hash_dim: must be a power of two");
  }
  if (params.featurizer.ngram_sizes.empty()) {
    throw Error(ErrorKind::validation, "featurizer.ngram_sizes: must be non-empty");
  }
  for (int n : params.featurizer.ngram_sizes) {
    if (n < 1) throw Error(ErrorKind::validation, "featurizer.ngram_sizes: sizes must be >= 1");
  }
  if (params.embedding_dim < 1) {
    throw Error(ErrorKind::validation, "embedder.embedding_dim: must be >= 1");
  }
  if (!(params.tau > 0.0)) throw Error(ErrorKind::validation, "embedder.tau: must be > 0");
  if (params.W.size() != params.featurizer.hash_dim * static_cast<std::size_t>(params.embedding_dim)) {
    throw Error(ErrorKind::validation, "embedder.W: size must be hash_dim x embedding_dim");
  }
  for (double w : params.W) {
    if (!std::isfinite(w)) throw Error(ErrorKind::validation, "embedder.W: non-finite entry");
  }
}

EmbedderParams EmbedderParams::random_init(const FeaturizerConfig& cfg, int embedding_dim,
                                           double tau, std::uint64_t seed) {
  EmbedderParams params;
  params.featurizer = cfg;
  params.embedding_dim = embedding_dim;
  params.tau = tau;
  params.W.resize(cfg.hash_dim * static_cast<std::size_t>(embedding_dim));
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.hash_dim));
  DetRng rng(hash_u64(seed, "w-init"));
  for (double& w : params.W) w = (2.0 * rng.next_unit() - 1.0) * scale;
  validate(params);
  return params;
}

std::string embedder_id(const EmbedderParams& params) {
  StreamHash hash;
  for (int n : params.featurizer.ngram_sizes) hash.u64(static_cast<std::uint64_t>(n));
  hash.u64(params.featurizer.hash_dim);
  hash.u64(params.featurizer.hash_seed);
  hash.u64(static_cast<std::uint64_t>(params.embedding_dim));
  hash.f64(params.tau);
  for (double w : params.W) hash.f64(w);
  return hex64(hash.digest());
}

std::vector<double> embed_sparse(const SparseVec& features, const EmbedderParams& params) {
  const int d = params.embedding_dim;
  std::vector<double> y(static_cast<std::size_t>(d), 0.0);
  for (const auto& [idx, v] : features.entries) {
    const double* w = params.row(idx);
    for (int j = 0; j < d; ++j) y[static_cast<std::size_t>(j)] += v * w[j];
  }
  double sq = 0.0;
  for (double v : y) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0)) {
    throw Error(ErrorKind::data, "degenerate input: embedding has zero norm");
  }
  for (double& v : y) v /= norm;
  return y;
}

std::vector<double> embed(std::string_view trajectory, const EmbedderParams& params) {
  validate(params);
  return embed_sparse(featurize_sparse(trajectory, params.featurizer), params);
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

const char* to_string(LossVariant v) {
  return v == LossVariant::negatives_only ? "negatives_only" : "standard_info_nce";
}

LossVariant loss_variant_from_string(const std::string& s) {
  if (s == "negatives_only") return LossVariant::negatives_only;
  if (s == "standard_info_nce") return LossVariant::standard_info_nce;
  throw Error(ErrorKind::validation, "loss_variant: unknown value '" + s + "'");
}

double info_nce_term(const std::vector<double>& anchor, const std::vector<double>& positive,
                     const std::vector<std::vector<double>>& negatives, double tau,
                     LossVariant variant) {
  if (!(tau > 0.0)) throw Error(ErrorKind::domain_error, "tau: must be > 0");
  if (negatives.empty()) throw Error(ErrorKind::data, "objective needs at least one negative");
  if (anchor.size() != positive.size()) {
    throw Error(ErrorKind::validation, "shape: anchor and positive dimensions differ");
  }
  std::vector<double> denom;
  denom.reserve(negatives.size() + 1);
  for (const auto& neg : negatives) {
    if (neg.size() != anchor.size()) {
      throw Error(ErrorKind::validation, "shape: negative dimension differs from anchor");
    }
    denom.push_back(dot(anchor, neg) / tau);
  }
  const double pos_sim = dot(anchor, positive) / tau;
  if (variant == LossVariant::standard_info_nce) denom.push_back(pos_sim);
  return pos_sim - log_sum_exp(denom);
}

double WGradient::at(std::size_t i, int j) const {
  auto it = rows.find(static_cast<std::uint32_t>(i));
  if (it == rows.end()) return 0.0;
  return it->second[static_cast<std::size_t>(j)];
}

std::vector<double> WGradient::to_dense() const {
  std::vector<double> dense(feature_dim * static_cast<std::size_t>(embed_dim), 0.0);
  for (const auto& [idx, row] : rows) {
    std::copy(row.begin(), row.end(),
              dense.begin() + static_cast<std::size_t>(idx) * static_cast<std::size_t>(embed_dim));
  }
  return dense;
}

namespace {

// Shared embeddings within a batch: each distinct trajectory is projected
// once and collects objective-gradient mass from every triple that uses it.
struct EmbedWorkspace {
  const EmbedderParams& params;
  std::vector<const SparseVec*> order;
  std::map<const SparseVec*, std::size_t> index;
  std::vector<std::vector<double>> f;      // normalized embeddings
  std::vector<double> norm;                // pre-normalization norms
  std::vector<std::vector<double>> dj_df;  // d(objective)/d(embedding)

  explicit EmbedWorkspace(const EmbedderParams& p) : params(p) {}

  std::size_t get(const SparseVec* v) {
    auto it = index.find(v);
    if (it != index.end()) return it->second;
    const int d = params.embedding_dim;
    std::vector<double> y(static_cast<std::size_t>(d), 0.0);
    for (const auto& [idx, val] : v->entries) {
      const double* w = params.row(idx);
      for (int j = 0; j < d; ++j) y[static_cast<std::size_t>(j)] += val * w[j];
    }
    double sq = 0.0;
    for (double u : y) sq += u * u;
    const double n = std::sqrt(sq);
    if (!(n > 0.0)) throw Error(ErrorKind::data, "degenerate input: embedding has zero norm");
    for (double& u : y) u /= n;
    const std::size_t id = order.size();
    order.push_back(v);
    index.emplace(v, id);
    f.push_back(std::move(y));
    norm.push_back(n);
    dj_df.emplace_back(static_cast<std::size_t>(d), 0.0);
    return id;
  }
};

}  // namespace

LossGrad loss_and_gradient(const EmbedderParams& params, const std::vector<TripleRef>& batch,
                           LossVariant variant) {
  validate(params);
  const int d = params.embedding_dim;
  LossGrad out;
  out.grad.feature_dim = params.featurizer.hash_dim;
  out.grad.embed_dim = d;
  if (batch.empty()) return out;

  EmbedWorkspace ws(params);
  double objective = 0.0;

  for (const auto& triple : batch) {
    if (triple.negatives.empty()) {
      throw Error(ErrorKind::data, "corpus error: a batch anchor has zero negatives");
    }
    const std::size_t a = ws.get(triple.anchor);
    const std::size_t p = ws.get(triple.positive);
    std::vector<std::size_t> negs;
    negs.reserve(triple.negatives.size());
    for (const SparseVec* n : triple.negatives) negs.push_back(ws.get(n));

    const double pos_sim = dot(ws.f[a], ws.f[p]) / params.tau;
    std::vector<double> denom;
    denom.reserve(negs.size() + 1);
    for (std::size_t n : negs) denom.push_back(dot(ws.f[a], ws.f[n]) / params.tau);
    if (variant == LossVariant::standard_info_nce) denom.push_back(pos_sim);
    const double lse = log_sum_exp(denom);
    objective += pos_sim - lse;

    // Softmax weights of the denominator terms.
    std::vector<double> weight(denom.size());
    for (std::size_t k = 0; k < denom.size(); ++k) weight[k] = std::exp(denom[k] - lse);

    const double pos_coeff =
        (variant == LossVariant::standard_info_nce) ? (1.0 - weight.back()) / params.tau : 1.0 / params.tau;

    auto& da = ws.dj_df[a];
    for (int j = 0; j < d; ++j) {
      da[static_cast<std::size_t>(j)] += pos_coeff * ws.f[p][static_cast<std::size_t>(j)];
      ws.dj_df[p][static_cast<std::size_t>(j)] += pos_coeff * ws.f[a][static_cast<std::size_t>(j)];
    }
    for (std::size_t k = 0; k < negs.size(); ++k) {
      const double wk = weight[k] / params.tau;
      auto& dn = ws.dj_df[negs[k]];
      for (int j = 0; j < d; ++j) {
        da[static_cast<std::size_t>(j)] -= wk * ws.f[negs[k]][static_cast<std::size_t>(j)];
        dn[static_cast<std::size_t>(j)] -= wk * ws.f[a][static_cast<std::size_t>(j)];
      }
    }
  }

  out.loss = -objective;

  // Backprop through normalization and the sparse projection, in first-seen
  // order so accumulation is reproducible.
  std::vector<double> dy(static_cast<std::size_t>(d));
  for (std::size_t e = 0; e < ws.order.size(); ++e) {
    const auto& f = ws.f[e];
    const auto& dj = ws.dj_df[e];
    double fdot = 0.0;
    for (int j = 0; j < d; ++j) fdot += f[static_cast<std::size_t>(j)] * dj[static_cast<std::size_t>(j)];
    for (int j = 0; j < d; ++j) {
      // d(loss)/dy = -(dj - f (f . dj)) / norm
      dy[static_cast<std::size_t>(j)] =
          -(dj[static_cast<std::size_t>(j)] - f[static_cast<std::size_t>(j)] * fdot) / ws.norm[e];
    }
    for (const auto& [idx, val] : ws.order[e]->entries) {
      auto [it, inserted] = out.grad.rows.try_emplace(idx, static_cast<std::size_t>(d), 0.0);
      auto& row = it->second;
      for (int j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] += val * dy[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

const std::string& TrainingCorpus::trajectory(const std::string& model,
                                              const std::string& trig) const {
  auto mit = trajectories.find(model);
  if (mit != trajectories.end()) {
    auto tit = mit->second.find(trig);
    if (tit != mit->second.end()) return tit->second;
  }
  throw Error(ErrorKind::data, "corpus has no trajectory for model '" + model + "', trigger '" + trig + "'");
}

void validate(const TrainingCorpus& corpus) {
  if (corpus.trigger_ids.empty()) {
    throw Error(ErrorKind::validation, "corpus.triggers: must be non-empty");
  }
  if (corpus.groups.empty()) {
    throw Error(ErrorKind::validation, "corpus.groups: must be non-empty");
  }
  for (const auto& group : corpus.groups) {
    if (group.protected_id.empty()) {
      throw Error(ErrorKind::validation, "corpus.groups: protected id must be non-empty");
    }
    if (group.negatives.empty()) {
      throw Error(ErrorKind::validation,
                  "corpus.groups: group '" + group.protected_id + "' has no negatives");
    }
    if (group.split != "train" && group.split != "eval") {
      throw Error(ErrorKind::validation,
                  "corpus.groups: split must be 'train' or 'eval' in group '" + group.protected_id + "'");
    }
    std::set<std::string> pos(group.positives.begin(), group.positives.end());
    for (const auto& n : group.negatives) {
      if (pos.count(n)) {
        throw Error(ErrorKind::validation, "corpus.groups: '" + n + "' is both positive and negative");
      }
    }
    std::vector<std::string> members{group.protected_id};
    members.insert(members.end(), group.positives.begin(), group.positives.end());
    members.insert(members.end(), group.negatives.begin(), group.negatives.end());
    for (const auto& model : members) {
      for (const auto& trig : corpus.trigger_ids) corpus.trajectory(model, trig);
    }
  }
}

std::string serialize(const TrainingCorpus& corpus) {
  validate(corpus);
  json doc = make_envelope("trajectory_corpus");
  doc["provenance"] = corpus.provenance;
  doc["triggers"] = corpus.trigger_ids;
  json groups = json::array();
  for (const auto& g : corpus.groups) {
    json jg;
    jg["protected"] = g.protected_id;
    jg["positives"] = g.positives;
    jg["negatives"] = g.negatives;
    jg["split"] = g.split;
    groups.push_back(jg);
  }
  doc["groups"] = groups;
  json records = json::array();
  for (const auto& [model, by_trigger] : corpus.trajectories) {
    for (const auto& [trig, text] : by_trigger) {
      json rec;
      rec["model"] = model;
      rec["trigger"] = trig;
      rec["trajectory"] = text;
      records.push_back(rec);
    }
  }
  doc["trajectories"] = records;
  return dump_document(doc);
}

TrainingCorpus corpus_from_bytes(std::string_view bytes) {
  json doc = parse_document(bytes, "trajectory_corpus");
  TrainingCorpus corpus;
  if (doc.contains("provenance")) corpus.provenance = doc["provenance"].get<std::string>();
  for (const auto& t : require(doc, "triggers")) corpus.trigger_ids.push_back(t.get<std::string>());
  for (const auto& jg : require(doc, "groups")) {
    CorpusGroup g;
    g.protected_id = require_string(jg, "protected");
    for (const auto& p : require(jg, "positives")) g.positives.push_back(p.get<std::string>());
    for (const auto& n : require(jg, "negatives")) g.negatives.push_back(n.get<std::string>());
    g.split = jg.value("split", "train");
    corpus.groups.push_back(std::move(g));
  }
  for (const auto& rec : require(doc, "trajectories")) {
    corpus.trajectories[require_string(rec, "model")][require_string(rec, "trigger")] =
        require_string(rec, "trajectory");
  }
  validate(corpus);
  return corpus;
}

std::string corpus_hash(const TrainingCorpus& corpus) {
  return hex64(hash_bytes(serialize(corpus)));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw Error(ErrorKind::validation, "train.epochs: must be >= 0");
  if (cfg.batch_size < 1) throw Error(ErrorKind::validation, "train.batch_size: must be >= 1");
  if (cfg.warmup_fraction < 0.0 || cfg.warmup_fraction >= 1.0) {
    throw Error(ErrorKind::validation, "train.warmup_fraction: must be in [0, 1)");
  }
  if (!(cfg.peak_learning_rate > 0.0)) {
    throw Error(ErrorKind::validation, "train.peak_learning_rate: must be > 0");
  }
  if (!(cfg.tau > 0.0)) throw Error(ErrorKind::validation, "train.tau: must be > 0");
}

json train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["ngram_sizes"] = cfg.featurizer.ngram_sizes;
  j["hash_dim"] = cfg.featurizer.hash_dim;
  j["hash_seed"] = cfg.featurizer.hash_seed;
  j["embedding_dim"] = cfg.embedding_dim;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["peak_learning_rate"] = cfg.peak_learning_rate;
  j["warmup_fraction"] = cfg.warmup_fraction;
  j["tau"] = cfg.tau;
  j["loss_variant"] = to_string(cfg.loss_variant);
  j["seed"] = cfg.seed;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  if (j.contains("ngram_sizes")) {
    cfg.featurizer.ngram_sizes.clear();
    for (const auto& n : j["ngram_sizes"]) cfg.featurizer.ngram_sizes.push_back(n.get<int>());
  }
  if (j.contains("hash_dim")) cfg.featurizer.hash_dim = j["hash_dim"].get<std::size_t>();
  if (j.contains("hash_seed")) cfg.featurizer.hash_seed = j["hash_seed"].get<std::uint64_t>();
  if (j.contains("embedding_dim")) cfg.embedding_dim = j["embedding_dim"].get<int>();
  if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int>();
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
  if (j.contains("peak_learning_rate")) cfg.peak_learning_rate = j["peak_learning_rate"].get<double>();
  if (j.contains("warmup_fraction")) cfg.warmup_fraction = j["warmup_fraction"].get<double>();
  if (j.contains("tau")) cfg.tau = j["tau"].get<double>();
  if (j.contains("loss_variant")) cfg.loss_variant = loss_variant_from_string(j["loss_variant"].get<std::string>());
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  validate(cfg);
  return cfg;
}

namespace {

struct OwnedTriple {
  const SparseVec* anchor;
  const SparseVec* positive;
  std::vector<const SparseVec*> negatives;
};

double learning_rate(double peak, double warmup_fraction, std::size_t step, std::size_t total) {
  if (total == 0) return peak;
  const auto warmup = static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total)));
  if (step < warmup) {
    return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  const std::size_t tail = total - warmup;
  if (tail == 0) return 0.0;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(tail);
  return peak * 0.5 * (1.0 + std::cos(kPi * progress));
}

}  // namespace

TrainResult train_extractor(const TrainingCorpus& corpus, const TrainConfig& cfg) {
  validate(corpus);
  validate(cfg);

  TrainResult result;
  result.corpus_digest = corpus_hash(corpus);
  result.params =
      EmbedderParams::random_init(cfg.featurizer, cfg.embedding_dim, cfg.tau, cfg.seed);
  if (cfg.epochs == 0) return result;

  // Featurize every referenced trajectory once.
  std::map<std::pair<std::string, std::string>, SparseVec> features;
  auto feat = [&](const std::string& model, const std::string& trig) -> const SparseVec* {
    auto key = std::make_pair(model, trig);
    auto it = features.find(key);
    if (it == features.end()) {
      it = features.emplace(key, featurize_sparse(corpus.trajectory(model, trig), cfg.featurizer)).first;
    }
    return &it->second;
  };

  std::vector<OwnedTriple> triples;
  for (const auto& group : corpus.groups) {
    if (group.split != "train") continue;
    for (const auto& pos : group.positives) {
      for (const auto& trig : corpus.trigger_ids) {
        OwnedTriple triple;
        triple.anchor = feat(group.protected_id, trig);
        triple.positive = feat(pos, trig);
        for (const auto& neg : group.negatives) triple.negatives.push_back(feat(neg, trig));
        triples.push_back(std::move(triple));
      }
    }
  }
  if (triples.empty()) {
    throw Error(ErrorKind::data, "corpus error: no training triples (no train-split positives)");
  }

  const std::size_t batches_per_epoch =
      (triples.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
      static_cast<std::size_t>(cfg.batch_size);
  const std::size_t total_steps = static_cast<std::size_t>(cfg.epochs) * batches_per_epoch;

  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(triples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    DetRng rng(hash_u64(cfg.seed, "epoch-shuffle", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TripleRef> batch;
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const OwnedTriple& t = triples[order[k]];
        batch.push_back(TripleRef{t.anchor, t.positive, t.negatives});
      }
      LossGrad lg = loss_and_gradient(result.params, batch, cfg.loss_variant);
      if (!std::isfinite(lg.loss)) {
        throw Error(ErrorKind::divergence, "non-finite loss at epoch " + std::to_string(epoch) +
                                               ", step " + std::to_string(step));
      }
      epoch_loss += lg.loss;
      const double lr = learning_rate(cfg.peak_learning_rate, cfg.warmup_fraction, step, total_steps);
      for (const auto& [idx, row] : lg.grad.rows) {
        double* w = result.params.row(idx);
        for (int j = 0; j < cfg.embedding_dim; ++j) {
          w[j] -= lr * row[static_cast<std::size_t>(j)];
          if (!std::isfinite(w[j])) {
            throw Error(ErrorKind::divergence, "parameters became non-finite at epoch " +
                                                   std::to_string(epoch) + ", step " +
                                                   std::to_string(step));
          }
        }
      }
      ++step;
    }
    result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(triples.size()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Extractor files
// ---------------------------------------------------------------------------

std::string serialize_extractor(const EmbedderParams& params, const json& provenance) {
  validate(params);
  json doc = make_envelope("extractor");
  json feat;
  feat["ngram_sizes"] = params.featurizer.ngram_sizes;
  feat["hash_dim"] = params.featurizer.hash_dim;
  feat["hash_seed"] = params.featurizer.hash_seed;
  doc["featurizer"] = feat;
  doc["embedding_dim"] = params.embedding_dim;
  doc["tau"] = params.tau;
  doc["embedder_id"] = embedder_id(params);
  doc["W"] = params.W;
  if (!provenance.is_null()) doc["provenance"] = provenance;
  return dump_document(doc);
}

StoredExtractor extractor_from_bytes(std::string_view bytes) {
  json doc = parse_document(bytes, "extractor");
  StoredExtractor out;
  const json& feat = require(doc, "featurizer");
  out.params.featurizer.ngram_sizes.clear();
  for (const auto& n : require(feat, "ngram_sizes")) {
    out.params.featurizer.ngram_sizes.push_back(n.get<int>());
  }
  out.params.featurizer.hash_dim = require_uint(feat, "hash_dim");
  out.params.featurizer.hash_seed = require_uint(feat, "hash_seed");
  out.params.embedding_dim = static_cast<int>(require_int(doc, "embedding_dim"));
  out.params.tau = require_double(doc, "tau");
  const json& w = require(doc, "W");
  out.params.W.reserve(w.size());
  for (const auto& v : w) out.params.W.push_back(v.get<double>());
  if (doc.contains("provenance")) out.provenance = doc["provenance"];
  validate(out.params);
  if (doc.contains("embedder_id") && doc["embedder_id"].get<std::string>() != embedder_id(out.params)) {
    throw Error(ErrorKind::validation,
                "extractor file is corrupt: stored embedder_id does not match the parameters");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fingerprints
// ---------------------------------------------------------------------------

TriggerFingerprint fingerprint_from_trajectories(const std::vector<std::string>& trajectories,
                                                 const EmbedderParams& params,
                                                 const std::string& key_version,
                                                 const std::string& model_id) {
  validate(params);
  TriggerFingerprint fp;
  fp.embedder_id = embedder_id(params);
  fp.key_version = key_version;
  fp.model_id = model_id;
  fp.vectors.reserve(trajectories.size());
  for (const auto& t : trajectories) {
    fp.vectors.push_back(embed_sparse(featurize_sparse(t, params.featurizer), params));
  }
  lmfp::validate(fp);
  return fp;
}

TriggerFingerprint extract_trigger_fingerprint(const client::ModelClient& mc,
                                               const client::ModelHandle& model,
                                               const SecretKey& key, const EmbedderParams& params,
                                               bool include_entropy, int max_parallel) {
  validate(params);
  if (key.triggers.empty()) {
    throw Error(ErrorKind::validation, "key has no triggers");
  }
  client::QueryPlan plan;
  for (const auto& t : key.triggers) plan.prompts.push_back(t.text);
  plan.max_parallel = max_parallel;
  plan.retry_budget = model.retry_budget;
  plan.timeout = model.timeout;
  auto results = mc.batch_complete(model, plan);

  std::vector<std::string> trajectories;
  trajectories.reserve(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    const std::string& trigger_id = key.triggers[i].id;
    if (!results[i].ok()) {
      throw Error(results[i].error_kind, "trigger '" + trigger_id + "': " + results[i].error);
    }
    const ModelResponse& response = *results[i].response;
    if (include_entropy && !response.token_logprobs) {
      throw Error(ErrorKind::capability,
                  "trigger '" + trigger_id +
                      "': backend returned no token logprobs; rerun with entropy disabled");
    }
    try {
      trajectories.push_back(render_trajectory(response, include_entropy));
    } catch (const Error& e) {
      throw Error(e.kind(), "trigger '" + trigger_id + "': " + e.what());
    }
  }
  TriggerFingerprint fp = fingerprint_from_trajectories(trajectories, params, key.version, model.id);
  return fp;
}

double trigger_distance(const TriggerFingerprint& fp_pro, const TriggerFingerprint& fp_sus) {
  if (fp_pro.key_version != fp_sus.key_version) {
    throw Error(ErrorKind::incompatibility, "fingerprints come from different key versions ('" +
                                                fp_pro.key_version + "' vs '" + fp_sus.key_version + "')");
  }
  if (fp_pro.embedder_id != fp_sus.embedder_id) {
    throw Error(ErrorKind::incompatibility, "fingerprints come from different extractors");
  }
  if (fp_pro.vectors.size() != fp_sus.vectors.size()) {
    throw Error(ErrorKind::incompatibility, "fingerprints have different trigger counts");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < fp_pro.vectors.size(); ++i) {
    if (fp_pro.vectors[i].size() != fp_sus.vectors[i].size()) {
      throw Error(ErrorKind::incompatibility, "fingerprint rows have different dimensions");
    }
    total += dot(fp_pro.vectors[i], fp_sus.vectors[i]);
  }
  const double d = -total / static_cast<double>(fp_pro.vectors.size());
  return std::clamp(d, -1.0, 1.0);
}

}  // namespace lmfp::trigger
