#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ragmarl/vocab.hpp"

namespace ragmarl {

struct Document {
  int id = 0;
  std::vector<int> title;
  std::vector<int> body;
};

enum class Split { kTrain, kDev, kTest };
std::string split_name(Split s);
Split parse_split(const std::string& name);

struct QaInstance {
  int index = 0;  // position within its split
  Split split = Split::kTrain;
  std::vector<int> question;
  std::vector<int> answer;
  std::vector<std::vector<int>> sub_questions;  // gold decomposition, 1 or 2
  std::vector<int> support;                     // supporting document ids
  int hops = 1;
};

/// Knobs of the synthetic entity-fact world. Relations are chosen from the
/// built-in templates: birthplace, employer, sport.
struct WorldConfig {
  std::size_t entity_count = 200;
  std::vector<std::string> relations = {"birthplace", "employer", "sport"};
  // Total documents. 0 means one fact document per (entity, relation) plus
  // one description document per value entity; larger values repeat
  // description documents with alternate phrasings.
  std::size_t corpus_size = 0;
  std::size_t vocab_cap = 2048;
  double hop_mix = 0.5;  // probability that a question is 2-hop
  std::size_t train_size = 400;
  std::size_t dev_size = 100;
  std::size_t test_size = 100;
  std::size_t max_doc_tokens = 24;
  std::uint64_t seed = 1;

  void validate() const;
  /// Flat key=value form, stable order.
  std::map<std::string, std::string> to_map() const;
  /// Applies one key; throws ConfigError naming unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
};

struct World {
  WorldConfig config;
  Vocab vocab;
  std::vector<std::string> stopwords;
  std::vector<Document> corpus;  // corpus[i].id == i
  std::vector<QaInstance> train, dev, test;

  const std::vector<QaInstance>& split(Split s) const;
  const Document& doc(int id) const { return corpus.at(static_cast<std::size_t>(id)); }
  bool is_stopword(int token) const;

 private:
  friend World build_world(const WorldConfig& config);
  friend World load_world(const std::filesystem::path& path);
  friend World parse_world(const std::string& text);
  void index_stopwords();
  std::set<int> stopword_ids_;
};

World build_world(const WorldConfig& config);

// World file: UTF-8 text, one tab-separated record per line:
//   ragmarl-world  <version>
//   config         <key>  <value>
//   vocab          <id>   <token>
//   stopword       <token>
//   doc            <id>   <title tokens>  <body tokens>
//   qa             <split> <index> <hops> <support ids, comma-separated>
//                  <question> <answer> <sub-questions joined by " | ">
// Token lists are space-separated. Records appear in exactly this order.
std::string serialize_world(const World& world);
World parse_world(const std::string& text);
void save_world(const World& world, const std::filesystem::path& path);
World load_world(const std::filesystem::path& path);

}  // namespace ragmarl
