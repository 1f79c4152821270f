#include "ragmarl/render.hpp"

#include "ragmarl/error.hpp"

namespace ragmarl {

std::string role_name(Role r) {
  switch (r) {
    case Role::kQueryRewriter: return "QR";
    case Role::kSelector: return "S";
    case Role::kGenerator: return "G";
  }
  return "?";
}

Role parse_role(const std::string& name) {
  if (name == "QR") return Role::kQueryRewriter;
  if (name == "S") return Role::kSelector;
  if (name == "G") return Role::kGenerator;
  throw ConfigError("unknown agent: " + name);
}

std::vector<int> document_header(std::size_t index) {
  std::vector<int> out = {tok::kDocument};
  const std::string digits = std::to_string(index);
  for (char c : digits) out.push_back(tok::kDigit0 + (c - '0'));
  return out;
}

std::vector<int> render_observation(Role role, const Vocab& vocab,
                                    std::span<const int> question,
                                    std::span<const ShownDocument> docs, std::size_t k,
                                    std::size_t context_limit) {
  std::vector<int> out = {tok::kBos};
  auto words = [&](std::initializer_list<const char*> ws) {
    for (const char* w : ws) out.push_back(vocab.id(w));
  };
  auto append_docs = [&] {
    for (const auto& d : docs) {
      const auto header = document_header(d.index);
      out.insert(out.end(), header.begin(), header.end());
      out.insert(out.end(), d.doc->body.begin(), d.doc->body.end());
    }
  };
  switch (role) {
    case Role::kQueryRewriter:
      if (!docs.empty()) throw Error("query rewriter observation takes no documents");
      words({"decompose", "question", ":"});
      out.insert(out.end(), question.begin(), question.end());
      words({"subquestions", ":"});
      break;
    case Role::kSelector:
      if (docs.size() != k) {
        throw Error("selector observation needs exactly " + std::to_string(k) +
                    " documents, got " + std::to_string(docs.size()));
      }
      words({"select", "documents", "question", ":"});
      out.insert(out.end(), question.begin(), question.end());
      append_docs();
      words({"ids", ":"});
      break;
    case Role::kGenerator:
      if (docs.empty() || docs.size() > k) {
        throw Error("generator observation needs 1.." + std::to_string(k) + " documents");
      }
      words({"answer", "question", ":"});
      out.insert(out.end(), question.begin(), question.end());
      append_docs();
      words({"answer", ":"});
      break;
  }
  if (out.size() > context_limit) {
    throw Error("observation length " + std::to_string(out.size()) +
                " exceeds context limit " + std::to_string(context_limit));
  }
  return out;
}

}  // namespace ragmarl
