#include "ragmarl/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "ragmarl/error.hpp"
#include "ragmarl/rewards.hpp"

namespace ragmarl {

Bm25Index::Bm25Index(const std::vector<Document>& corpus, const Vocab& vocab)
    : vocab_(&vocab) {
  double total = 0.0;
  for (const auto& d : corpus) {
    std::unordered_map<std::string, int> tf;
    const auto terms = normalize_tokens(vocab, d.body);
    for (const auto& t : terms) ++tf[t];
    for (const auto& [t, n] : tf) ++df_[t];
    doc_len_.push_back(static_cast<double>(terms.size()));
    total += static_cast<double>(terms.size());
    doc_terms_.push_back(std::move(tf));
  }
  avgdl_ = corpus.empty() ? 0.0 : total / static_cast<double>(corpus.size());
}

std::vector<std::string> Bm25Index::normalized_terms(std::span<const int> tokens) const {
  std::vector<std::string> terms;
  std::set<std::string> seen;
  for (auto& t : normalize_tokens(*vocab_, tokens)) {
    if (seen.insert(t).second) terms.push_back(std::move(t));
  }
  return terms;
}

std::vector<double> Bm25Index::scores(std::span<const int> query) const {
  const auto terms = normalized_terms(query);
  const double n = static_cast<double>(doc_terms_.size());
  std::vector<double> out(doc_terms_.size(), 0.0);
  for (const auto& term : terms) {
    auto it = df_.find(term);
    if (it == df_.end()) continue;
    const double df = static_cast<double>(it->second);
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    for (std::size_t d = 0; d < doc_terms_.size(); ++d) {
      auto f = doc_terms_[d].find(term);
      if (f == doc_terms_[d].end()) continue;
      const double tf = static_cast<double>(f->second);
      const double norm = kK1 * (1.0 - kB + kB * doc_len_[d] / avgdl_);
      out[d] += idf * tf * (kK1 + 1.0) / (tf + norm);
    }
  }
  return out;
}

std::vector<int> Bm25Index::retrieve(std::span<const int> query, std::size_t k) const {
  if (k == 0) throw Error("retrieve: k must be positive");
  const std::size_t n = std::min(k, doc_terms_.size());
  std::vector<int> ids(doc_terms_.size());
  std::iota(ids.begin(), ids.end(), 0);
  if (normalized_terms(query).empty()) {
    ids.resize(n);
    return ids;
  }
  const auto s = scores(query);
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                    [&](int a, int b) {
                      if (s[a] != s[b]) return s[a] > s[b];
                      return a < b;
                    });
  ids.resize(n);
  return ids;
}

std::vector<std::size_t> allocate_budget(std::size_t num_subquestions, std::size_t k) {
  if (num_subquestions == 0) throw Error("allocate_budget: need at least one sub-question");
  if (k == 0) throw Error("allocate_budget: K must be positive");
  std::vector<std::size_t> out(num_subquestions, 0);
  if (num_subquestions > k) {
    for (std::size_t i = 0; i < k; ++i) out[i] = 1;
    return out;
  }
  const std::size_t base = k / num_subquestions;
  const std::size_t rem = k % num_subquestions;
  for (std::size_t i = 0; i < num_subquestions; ++i) out[i] = base + (i < rem ? 1 : 0);
  return out;
}

std::vector<int> assemble_candidates(const Bm25Index& index,
                                     const std::vector<std::vector<int>>& queries,
                                     std::size_t k) {
  if (queries.empty()) throw Error("assemble_candidates: no queries");
  const auto budget = allocate_budget(queries.size(), k);
  std::vector<int> out;
  std::vector<bool> taken(index.size(), false);
  std::vector<int> first_ranking;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (budget[i] == 0) continue;
    const auto ranked = index.retrieve(queries[i], i == 0 ? index.size() : budget[i]);
    if (i == 0) first_ranking = ranked;
    for (std::size_t r = 0; r < budget[i] && r < ranked.size(); ++r) {
      const int id = ranked[r];
      if (taken[static_cast<std::size_t>(id)]) continue;
      taken[static_cast<std::size_t>(id)] = true;
      out.push_back(id);
    }
  }
  for (int id : first_ranking) {
    if (out.size() >= std::min(k, index.size())) break;
    if (taken[static_cast<std::size_t>(id)]) continue;
    taken[static_cast<std::size_t>(id)] = true;
    out.push_back(id);
  }
  return out;
}

}  // namespace ragmarl
