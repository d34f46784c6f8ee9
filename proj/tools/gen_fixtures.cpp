// Regenerates the bundled sample data under data/. Deterministic: rerunning
// produces byte-identical files.
//
//   ./gen-fixtures [output-dir]

#include <filesystem>
#include <iostream>
#include <string>

#include "lmfp/knowledge_fp.hpp"
#include "lmfp/model_client.hpp"
#include "lmfp/serial.hpp"
#include "lmfp/sim.hpp"
#include "lmfp/trigger_fp.hpp"

using lmfp::json;

namespace {

json sim_handle(const std::string& id, std::uint64_t style_seed, std::uint64_t variant_seed,
                double epsilon, const std::string& family, const std::string& pool) {
  lmfp::client::ModelHandle h;
  h.id = id;
  h.backend = lmfp::client::Backend::simulated;
  json cfg;
  cfg["family_id"] = family;
  cfg["style_seed"] = style_seed;
  cfg["variant_seed"] = variant_seed;
  cfg["epsilon"] = epsilon;
  cfg["pool"] = pool;
  h.simulated = cfg;
  return lmfp::client::handle_to_json(h);
}

}  // namespace

int main(int argc, char** argv) {
  const std::string out_dir = argc > 1 ? argv[1] : "data";
  std::filesystem::create_directories(out_dir);
  std::filesystem::create_directories(out_dir + "/handles");

  auto pool = lmfp::sim::make_question_pool(7, 30, 20250101);
  lmfp::write_file(out_dir + "/sample_pool.json", lmfp::knowledge::serialize(pool));

  auto triggers = lmfp::sim::make_trigger_set(24, 20250102);
  lmfp::write_file(out_dir + "/sample_triggers.json", lmfp::serialize_trigger_set(triggers));

  lmfp::sim::CorpusGenConfig corpus_cfg;
  auto corpus = lmfp::sim::make_training_corpus(corpus_cfg, 11);
  lmfp::write_file(out_dir + "/sim_trigger_corpus.json", lmfp::trigger::serialize(corpus));

  lmfp::trigger::TrainConfig train_cfg;
  train_cfg.featurizer.hash_dim = std::size_t{1} << 12;
  train_cfg.embedding_dim = 64;
  train_cfg.seed = 7;
  json train_doc = lmfp::make_envelope("train_config");
  const json train_json = lmfp::trigger::train_config_to_json(train_cfg);
  for (const auto& [k, v] : train_json.items()) train_doc[k] = v;
  lmfp::write_file(out_dir + "/train_config.json", lmfp::dump_document(train_doc));

  lmfp::sim::SeparationExperimentConfig exp_cfg;
  json exp_doc = lmfp::make_envelope("experiment_config");
  const json exp_json = lmfp::sim::experiment_config_to_json(exp_cfg);
  for (const auto& [k, v] : exp_json.items()) exp_doc[k] = v;
  lmfp::write_file(out_dir + "/experiment_config.json", lmfp::dump_document(exp_doc));

  const std::string pool_path = out_dir + "/sample_pool.json";
  lmfp::write_file(out_dir + "/handles/sim_alpha_base.json",
                   lmfp::dump_document(sim_handle("sim-alpha-base", 1001, 0, 0.0, "sim-alpha", pool_path)));
  lmfp::write_file(out_dir + "/handles/sim_alpha_ft.json",
                   lmfp::dump_document(sim_handle("sim-alpha-ft", 1001, 5, 0.08, "sim-alpha", pool_path)));
  lmfp::write_file(out_dir + "/handles/sim_beta_base.json",
                   lmfp::dump_document(sim_handle("sim-beta-base", 2002, 0, 0.0, "sim-beta", pool_path)));

  lmfp::client::ModelHandle rewriter;
  rewriter.id = "sim-rewriter";
  rewriter.backend = lmfp::client::Backend::simulated;
  json rcfg;
  rcfg["rewriter_seed"] = 77;
  rcfg["rewriter_strength"] = 1.0;
  rewriter.simulated = rcfg;
  lmfp::write_file(out_dir + "/handles/sim_rewriter.json",
                   lmfp::dump_document(lmfp::client::handle_to_json(rewriter)));

  std::cout << "fixtures written to " << out_dir << "\n";
  return 0;
}
