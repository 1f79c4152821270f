#pragma once

#include <span>
#include <string>
#include <vector>

#include "ragmarl/world.hpp"

namespace ragmarl {

enum class Role { kQueryRewriter = 0, kSelector = 1, kGenerator = 2 };
inline constexpr std::size_t kRoleCount = 3;

std::string role_name(Role r);  // "QR", "S", "G"
Role parse_role(const std::string& name);

/// A document as shown to an agent, with the index used in its header.
struct ShownDocument {
  std::size_t index = 0;
  const Document* doc = nullptr;
};

// Observation layouts (token by token):
//   QR: <bos> decompose question : {q} subquestions :
//   S : <bos> select documents question : {q} {Document i body}* ids :
//   G : <bos> answer question : {q} {Document i body}* answer :
// Document headers are "Document" followed by the decimal digits of i.
/// The selector must be shown exactly `k` documents and the generator 1..k;
/// the query rewriter takes none. Throws when the rendered length exceeds
/// `context_limit`, reporting the measured length.
std::vector<int> render_observation(Role role, const Vocab& vocab,
                                    std::span<const int> question,
                                    std::span<const ShownDocument> docs,
                                    std::size_t k, std::size_t context_limit);

/// Tokens "Document" d1 d2 ... for a document index.
std::vector<int> document_header(std::size_t index);

}  // namespace ragmarl
