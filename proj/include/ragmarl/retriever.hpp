#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ragmarl/world.hpp"

namespace ragmarl {

/// Fixed lexical retriever: Okapi BM25 over normalized body tokens.
///
///   score(q, d) = sum over distinct normalized query terms t of
///     idf(t) * tf(t, d) * (k1 + 1) / (tf(t, d) + k1 * (1 - b + b * |d| / avgdl))
///   idf(t) = ln(1 + (N - df(t) + 0.5) / (df(t) + 0.5))
///
/// Ranking is by descending score, ties broken by ascending document id.
class Bm25Index {
 public:
  static constexpr double kK1 = 1.2;
  static constexpr double kB = 0.75;

  Bm25Index(const std::vector<Document>& corpus, const Vocab& vocab);

  std::size_t size() const noexcept { return doc_terms_.size(); }

  /// Scores of every document for the query.
  std::vector<double> scores(std::span<const int> query) const;

  /// min(k, N) document ids. A query with no terms left after normalization
  /// returns ids 0..k-1.
  std::vector<int> retrieve(std::span<const int> query, std::size_t k) const;

 private:
  std::vector<std::string> normalized_terms(std::span<const int> tokens) const;

  const Vocab* vocab_;
  std::vector<std::unordered_map<std::string, int>> doc_terms_;
  std::vector<double> doc_len_;
  std::unordered_map<std::string, int> df_;
  double avgdl_ = 0.0;
};

/// Splits K retrieval slots over n sub-questions: counts differ by at most
/// one, earlier sub-questions take the remainder; with n > K the first K get
/// one slot each.
std::vector<std::size_t> allocate_budget(std::size_t num_subquestions, std::size_t k);

/// Candidate set D for the selector: per sub-question blocks of its budgeted
/// top documents in rank order, concatenated in sub-question order, with
/// documents already present skipped; then topped up from the first
/// sub-question's ranking until |D| = K (or the corpus runs out).
std::vector<int> assemble_candidates(const Bm25Index& index,
                                     const std::vector<std::vector<int>>& queries,
                                     std::size_t k);

}  // namespace ragmarl
