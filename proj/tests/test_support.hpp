#pragma once

#include <string>
#include <vector>

#include "lmfp/detrng.hpp"
#include "lmfp/types.hpp"

namespace lmfp::test {

inline KnowledgeQuestion make_question(const std::string& id, const std::string& domain,
                                       char truth = 'B') {
  KnowledgeQuestion q;
  q.id = id;
  q.domain = domain;
  q.stem = "Stem for " + id + "?";
  q.choices = {{'A', "first option " + id},
               {'B', "second option " + id},
               {'C', "third option " + id},
               {'D', "fourth option " + id}};
  q.ground_truth = truth;
  return q;
}

inline std::vector<char> random_answers(DetRng& rng, std::size_t n, bool allow_blank = true) {
  std::vector<char> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto pick = rng.next_below(allow_blank ? 5 : 4);
    out.push_back(pick == 4 ? kNoAnswer : static_cast<char>('A' + pick));
  }
  return out;
}

inline KnowledgeFingerprint make_kfp(std::vector<char> answers, const std::string& model = "m",
                                     const std::string& key_version = "k1") {
  KnowledgeFingerprint fp;
  fp.num_questions = static_cast<int>(answers.size());
  fp.answers = std::move(answers);
  fp.key_version = key_version;
  fp.model_id = model;
  return fp;
}

inline std::vector<double> random_unit(DetRng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double sq = 0.0;
  for (auto& x : v) {
    x = 2.0 * rng.next_unit() - 1.0;
    sq += x * x;
  }
  const double n = std::sqrt(sq);
  for (auto& x : v) x /= n;
  return v;
}

inline TriggerFingerprint make_tfp(DetRng& rng, std::size_t rows, std::size_t dim,
                                   const std::string& model = "m",
                                   const std::string& key_version = "k1",
                                   const std::string& embedder = "e1") {
  TriggerFingerprint fp;
  for (std::size_t r = 0; r < rows; ++r) fp.vectors.push_back(random_unit(rng, dim));
  fp.model_id = model;
  fp.key_version = key_version;
  fp.embedder_id = embedder;
  return fp;
}

}  // namespace lmfp::test
