#include "ragmarl/rewards.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "ragmarl/error.hpp"

namespace ragmarl {

std::vector<std::string> normalize_answer(const std::vector<std::string>& words) {
  std::vector<std::string> out;
  for (const auto& w : words) {
    std::string clean;
    for (char c : w) {
      const auto uc = static_cast<unsigned char>(c);
      if (std::ispunct(uc)) continue;
      clean += static_cast<char>(std::tolower(uc));
    }
    if (clean.empty() || clean == "a" || clean == "an" || clean == "the") continue;
    out.push_back(std::move(clean));
  }
  return out;
}

std::vector<std::string> normalize_answer(const std::string& text) {
  return normalize_answer(split_words(text));
}

std::vector<std::string> normalize_tokens(const Vocab& vocab, std::span<const int> ids) {
  std::vector<std::string> words;
  for (int id : ids) {
    if (Vocab::is_special(id)) continue;
    words.push_back(vocab.token(id));
  }
  return normalize_answer(words);
}

AnswerMetrics answer_metrics_normalized(const std::vector<std::string>& pred,
                                        const std::vector<std::string>& gold) {
  AnswerMetrics m;
  m.em = pred == gold ? 1.0 : 0.0;
  if (gold.empty()) {
    m.acc = 1.0;
  } else if (pred.size() >= gold.size()) {
    for (std::size_t i = 0; i + gold.size() <= pred.size(); ++i) {
      if (std::equal(gold.begin(), gold.end(), pred.begin() + static_cast<std::ptrdiff_t>(i))) {
        m.acc = 1.0;
        break;
      }
    }
  }
  if (pred.empty() && gold.empty()) {
    m.f1 = 1.0;
  } else if (pred.empty() || gold.empty()) {
    m.f1 = 0.0;
  } else {
    std::map<std::string, int> counts;
    for (const auto& g : gold) ++counts[g];
    int common = 0;
    for (const auto& p : pred) {
      auto it = counts.find(p);
      if (it != counts.end() && it->second > 0) {
        --it->second;
        ++common;
      }
    }
    if (common > 0) {
      const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
      const double recall = static_cast<double>(common) / static_cast<double>(gold.size());
      m.f1 = 2.0 * precision * recall / (precision + recall);
    }
  }
  return m;
}

AnswerMetrics answer_metrics(const std::string& prediction, const std::string& gold) {
  return answer_metrics_normalized(normalize_answer(prediction), normalize_answer(gold));
}

AnswerMetrics answer_metrics(const Vocab& vocab, std::span<const int> prediction,
                             std::span<const int> gold) {
  return answer_metrics_normalized(normalize_tokens(vocab, prediction),
                                   normalize_tokens(vocab, gold));
}

double penalty_qr(std::size_t sub_question_count) {
  return sub_question_count > kMaxUsefulSubquestions ? kPenaltyQr : 0.0;
}

double penalty_g(std::size_t answer_length, std::size_t max_answer_tokens) {
  return answer_length > max_answer_tokens ? kPenaltyGenerator : 0.0;
}

SelectorParse parse_selector(std::span<const int> raw, std::size_t k) {
  SelectorParse out;
  out.raw.assign(raw.begin(), raw.end());
  // expect: 0 = "Document", 1 = digit, 2 = "," or <eos>
  int state = 0;
  bool grammar_ok = true;
  bool terminated = false;
  for (int t : raw) {
    if (state == 0) {
      if (t != tok::kDocument) {
        grammar_ok = false;
        break;
      }
      state = 1;
    } else if (state == 1) {
      if (t < tok::kDigit0 || t > tok::kDigit0 + 9) {
        grammar_ok = false;
        break;
      }
      out.ids.push_back(static_cast<std::size_t>(t - tok::kDigit0));
      state = 2;
    } else {
      if (t == tok::kEos) {
        terminated = true;
        break;
      }
      if (t != tok::kComma) {
        grammar_ok = false;
        break;
      }
      state = 0;
    }
  }
  grammar_ok = grammar_ok && terminated;
  bool in_range = true;
  std::vector<bool> seen(10, false);
  for (auto id : out.ids) {
    if (id >= k) in_range = false;
    if (seen[id]) out.has_duplicates = true;
    seen[id] = true;
  }
  out.well_formed = grammar_ok && in_range;
  out.penalty = (out.well_formed && !out.has_duplicates) ? 0.0 : kPenaltySelector;
  return out;
}

std::vector<int> format_selector(std::span<const std::size_t> ids) {
  std::vector<int> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] > 9) throw Error("selector ids are single digits");
    if (i) out.push_back(tok::kComma);
    out.push_back(tok::kDocument);
    out.push_back(tok::kDigit0 + static_cast<int>(ids[i]));
  }
  out.push_back(tok::kEos);
  return out;
}

std::vector<std::size_t> selected_indices(const SelectorParse& parse, std::size_t k) {
  std::vector<std::size_t> out;
  if (parse.well_formed) {
    std::vector<bool> seen(k, false);
    for (auto id : parse.ids) {
      if (!seen[id]) out.push_back(id);
      seen[id] = true;
    }
  }
  if (out.empty()) {
    for (std::size_t i = 0; i < k; ++i) out.push_back(i);
  }
  return out;
}

std::vector<std::vector<int>> parse_subquestions(std::span<const int> raw) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  for (int t : raw) {
    if (t == tok::kEos) break;
    if (t == tok::kNewline) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      continue;
    }
    cur.push_back(t);
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<int> extract_answer(std::span<const int> raw) {
  std::vector<int> out;
  for (int t : raw) {
    if (t == tok::kEos) break;
    if (t == tok::kAnswerDelim || Vocab::is_special(t)) continue;
    out.push_back(t);
  }
  return out;
}

RewardBreakdown assemble_terminal_reward(double r_shared, double penalty, double beta,
                                         double kl_log_ratio) {
  RewardBreakdown r;
  r.r_shared = r_shared;
  r.penalty = penalty;
  r.beta = beta;
  r.kl_log_ratio = kl_log_ratio;
  r.r_total = r_shared + penalty - beta * kl_log_ratio;
  return r;
}

std::vector<double> terminal_reward_vector(std::size_t length, double r_total) {
  std::vector<double> out(length, 0.0);
  if (length > 0) out.back() = r_total;
  return out;
}

}  // namespace ragmarl
