#pragma once

#include <span>
#include <string>
#include <vector>

#include "ragmarl/vocab.hpp"

namespace ragmarl {

/// Lowercases, strips punctuation characters, drops the articles a/an/the and
/// empty words.
std::vector<std::string> normalize_answer(const std::vector<std::string>& words);
std::vector<std::string> normalize_answer(const std::string& text);

/// Token-id form: special tokens act as whitespace.
std::vector<std::string> normalize_tokens(const Vocab& vocab, std::span<const int> ids);

struct AnswerMetrics {
  double acc = 0.0;  // normalized gold is a contiguous run inside the prediction
  double em = 0.0;
  double f1 = 0.0;   // token-multiset F1
};

/// Metrics on already-normalized token lists.
AnswerMetrics answer_metrics_normalized(const std::vector<std::string>& prediction,
                                        const std::vector<std::string>& gold);
AnswerMetrics answer_metrics(const std::string& prediction, const std::string& gold);
AnswerMetrics answer_metrics(const Vocab& vocab, std::span<const int> prediction,
                             std::span<const int> gold);

inline constexpr double kPenaltyQr = -0.5;
inline constexpr double kPenaltySelector = -1.0;
inline constexpr double kPenaltyGenerator = -0.5;
inline constexpr std::size_t kMaxUsefulSubquestions = 4;

/// -0.5 when more than four sub-questions were produced, else 0.
double penalty_qr(std::size_t sub_question_count);

/// -0.5 when the answer is longer than max_answer_tokens, else 0.
double penalty_g(std::size_t answer_length, std::size_t max_answer_tokens);

struct SelectorParse {
  std::vector<int> raw;          // decoded tokens, stop token included if any
  std::vector<std::size_t> ids;  // parsed document indices in output order
  bool well_formed = false;      // grammar satisfied and every id < K
  bool has_duplicates = false;
  double penalty = 0.0;          // 0 or -1
};

/// Grammar: "Document" digit ("," "Document" digit)* <eos>. Well-formed,
/// duplicate-free output earns 0; anything else -1. For malformed output the
/// ids are whatever prefix could be read.
SelectorParse parse_selector(std::span<const int> raw, std::size_t k);

/// Renders ids in the selector grammar (stop token appended).
std::vector<int> format_selector(std::span<const std::size_t> ids);

/// Documents the generator reads after the selector: the parsed ids with
/// duplicates dropped in order; all K candidates when the output was
/// malformed or selected nothing.
std::vector<std::size_t> selected_indices(const SelectorParse& parse, std::size_t k);

/// Query-rewriter output split on newlines; empty lines dropped; stops at
/// the first stop token.
std::vector<std::vector<int>> parse_subquestions(std::span<const int> raw);

/// Generator output without delimiters, stop and special tokens.
std::vector<int> extract_answer(std::span<const int> raw);

struct RewardBreakdown {
  double r_shared = 0.0;
  double penalty = 0.0;
  double kl_log_ratio = 0.0;
  double beta = 0.0;
  double r_total = 0.0;
};

/// r_total = r_shared + penalty - beta * kl_log_ratio.
RewardBreakdown assemble_terminal_reward(double r_shared, double penalty, double beta,
                                         double kl_log_ratio);

/// Per-token environment rewards: zero except the final step.
std::vector<double> terminal_reward_vector(std::size_t length, double r_total);

}  // namespace ragmarl
