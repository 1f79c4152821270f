#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ragmarl {

// Reserved token ids. They occupy the lowest ids in this fixed order.
namespace tok {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kNewline = 3;
inline constexpr int kDocument = 4;
inline constexpr int kComma = 5;
inline constexpr int kDigit0 = 6;  // "0".."9" are kDigit0 + n
inline constexpr int kAnswerDelim = 16;
inline constexpr int kReservedCount = 17;
}  // namespace tok

/// Closed word-level vocabulary: a bijection between tokens and contiguous ids.
class Vocab {
 public:
  /// Starts with the reserved tokens.
  Vocab();

  /// Adds a token if absent; returns its id.
  int add(const std::string& token);

  int id(std::string_view token) const;  // throws on unknown tokens
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::vector<int> encode(const std::vector<std::string>& words) const;
  std::vector<int> encode(std::string_view text) const;  // whitespace split
  std::vector<std::string> decode(const std::vector<int>& ids) const;
  std::string join(const std::vector<int>& ids) const;

  static bool is_special(int id) {
    return id == tok::kPad || id == tok::kBos || id == tok::kEos ||
           id == tok::kNewline;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Splits on ASCII whitespace.
std::vector<std::string> split_words(std::string_view text);

}  // namespace ragmarl
