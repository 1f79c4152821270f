#include "ragmarl/world.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "ragmarl/error.hpp"
#include "ragmarl/rng.hpp"

namespace ragmarl {
namespace {

constexpr int kWorldVersion = 1;

struct RelationTemplate {
  std::string name;
  std::string noun;                     // used in questions
  std::vector<std::string> fact;        // "{S}" subject, "{V}" value
  std::vector<std::string> values;
  std::vector<std::vector<std::string>> descriptions;  // "{V}"
};

const std::vector<RelationTemplate>& relation_templates() {
  static const std::vector<RelationTemplate> kTemplates = {
      {"birthplace",
       "birthplace",
       {"{S}", "was", "born", "in", "{V}", "."},
       {"paris", "rome", "berlin", "madrid", "lisbon", "vienna", "prague", "oslo",
        "dublin", "athens", "warsaw", "cairo"},
       {{"{V}", "is", "a", "city", "."}, {"{V}", "is", "a", "large", "city", "."}}},
      {"employer",
       "employer",
       {"{S}", "is", "employed", "by", "{V}", "."},
       {"acme", "globex", "initech", "umbrella", "hooli", "vandelay", "wonka",
        "stark", "wayne", "tyrell", "cyberdyne", "soylent"},
       {{"{V}", "is", "a", "company", "."}, {"{V}", "is", "a", "large", "company", "."}}},
      {"sport",
       "sport",
       {"{S}", "plays", "{V}", "."},
       {"tennis", "golf", "chess", "rugby", "hockey", "cricket", "polo", "judo",
        "karate", "fencing"},
       {{"{V}", "is", "a", "sport", "."}, {"{V}", "is", "a", "popular", "sport", "."}}},
  };
  return kTemplates;
}

const RelationTemplate& find_template(const std::string& name) {
  for (const auto& t : relation_templates()) {
    if (t.name == name) return t;
  }
  throw ConfigError("unknown relation template: " + name);
}

// Grammar words, in vocabulary order.
const std::vector<std::string>& grammar_words() {
  static const std::vector<std::string> kWords = {
      "decompose", "question", "subquestions", "select", "documents", "ids",
      "answer",    ":",        "?",            ".",      "what",      "is",
      "the",       "of",       "and",          "was",    "born",      "in",
      "employed",  "by",       "plays",        "a",      "city",      "company",
      "sport",     "large",    "popular",      "birthplace", "employer"};
  return kWords;
}

const std::vector<std::string>& stopword_list() {
  static const std::vector<std::string> kStop = {
      "what", "is", "the", "of", "and", "was", "in", "by", "a", "an",
      "?",    ".",  ",",   ":"};
  return kStop;
}

std::vector<std::string> generate_names(std::size_t count, const Vocab& taken,
                                        RngStream& rng) {
  static const std::string kCons = "bdfgklmnprstvz";
  static const std::string kVow = "aeiou";
  std::vector<std::string> syllables;
  for (char c : kCons) {
    for (char v : kVow) syllables.push_back(std::string{c, v});
  }
  std::set<std::string> seen;
  std::vector<std::string> names;
  std::size_t syl = 2;
  std::size_t attempts = 0;
  while (names.size() < count) {
    std::string name;
    for (std::size_t i = 0; i < syl; ++i) name += syllables[rng.below(syllables.size())];
    if (!taken.contains(name) && seen.insert(name).second) names.push_back(name);
    if (++attempts > 20 * count + 1000) {
      ++syl;
      attempts = 0;
    }
  }
  return names;
}

std::vector<int> instantiate(const Vocab& vocab, const std::vector<std::string>& pattern,
                             const std::string& subject, const std::string& value) {
  std::vector<int> out;
  for (const auto& w : pattern) {
    if (w == "{S}") {
      out.push_back(vocab.id(subject));
    } else if (w == "{V}") {
      out.push_back(vocab.id(value));
    } else {
      out.push_back(vocab.id(w));
    }
  }
  return out;
}

std::vector<int> question_phrase(const Vocab& v, const std::string& noun,
                                 const std::string& subject) {
  return {v.id("the"), v.id(noun), v.id("of"), v.id(subject)};
}

template <typename T>
void shuffle(std::vector<T>& items, RngStream& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[rng.below(i)]);
  }
}

std::string join_ids(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(ids[i]);
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size() || v < 0) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("invalid value for " + key + ": '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid value for " + key + ": '" + value + "'");
  }
}

}  // namespace

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split: " + name);
}

void WorldConfig::validate() const {
  if (entity_count == 0) throw ConfigError("entity_count must be positive");
  if (relations.empty()) throw ConfigError("relations must not be empty");
  std::set<std::string> uniq;
  for (const auto& r : relations) {
    find_template(r);
    if (!uniq.insert(r).second) throw ConfigError("duplicate relation: " + r);
  }
  if (vocab_cap == 0) throw ConfigError("vocab_cap must be positive");
  if (!(hop_mix >= 0.0 && hop_mix <= 1.0)) throw ConfigError("hop_mix must be in [0,1]");
  if (train_size == 0 || dev_size == 0 || test_size == 0) {
    throw ConfigError("split sizes must be positive");
  }
  if (max_doc_tokens == 0) throw ConfigError("max_doc_tokens must be positive");
  if (hop_mix > 0.0 && entity_count < 2) {
    throw ConfigError("2-hop questions need at least two entities");
  }
}

std::map<std::string, std::string> WorldConfig::to_map() const {
  std::string rel;
  for (std::size_t i = 0; i < relations.size(); ++i) {
    if (i) rel += ',';
    rel += relations[i];
  }
  std::ostringstream hop;
  hop.precision(17);
  hop << hop_mix;
  return {{"entity_count", std::to_string(entity_count)},
          {"relations", rel},
          {"corpus_size", std::to_string(corpus_size)},
          {"vocab_cap", std::to_string(vocab_cap)},
          {"hop_mix", hop.str()},
          {"train_size", std::to_string(train_size)},
          {"dev_size", std::to_string(dev_size)},
          {"test_size", std::to_string(test_size)},
          {"max_doc_tokens", std::to_string(max_doc_tokens)},
          {"seed", std::to_string(seed)}};
}

void WorldConfig::set(const std::string& key, const std::string& value) {
  if (key == "entity_count") {
    entity_count = parse_size(key, value);
  } else if (key == "relations") {
    relations.clear();
    std::string cur;
    for (char c : value + ",") {
      if (c == ',') {
        if (!cur.empty()) relations.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
  } else if (key == "corpus_size") {
    corpus_size = parse_size(key, value);
  } else if (key == "vocab_cap") {
    vocab_cap = parse_size(key, value);
  } else if (key == "hop_mix") {
    hop_mix = parse_double(key, value);
  } else if (key == "train_size") {
    train_size = parse_size(key, value);
  } else if (key == "dev_size") {
    dev_size = parse_size(key, value);
  } else if (key == "test_size") {
    test_size = parse_size(key, value);
  } else if (key == "max_doc_tokens") {
    max_doc_tokens = parse_size(key, value);
  } else if (key == "seed") {
    seed = parse_size(key, value);
  } else {
    throw ConfigError("unknown world config key: " + key);
  }
}

const std::vector<QaInstance>& World::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kDev: return dev;
    case Split::kTest: return test;
  }
  return train;
}

bool World::is_stopword(int token) const { return stopword_ids_.count(token) != 0; }

void World::index_stopwords() {
  stopword_ids_.clear();
  for (const auto& w : stopwords) {
    if (vocab.contains(w)) stopword_ids_.insert(vocab.id(w));
  }
}

World build_world(const WorldConfig& config) {
  config.validate();
  World world;
  world.config = config;
  RngStream rng(config.seed);

  std::vector<const RelationTemplate*> rels;
  for (const auto& r : config.relations) rels.push_back(&find_template(r));

  Vocab& vocab = world.vocab;
  for (const auto& w : grammar_words()) vocab.add(w);
  for (const auto* r : rels) {
    for (const auto& v : r->values) vocab.add(v);
  }
  const auto names = generate_names(config.entity_count, vocab, rng);
  for (const auto& n : names) vocab.add(n);
  if (vocab.size() > config.vocab_cap) {
    std::string overflow;
    for (std::size_t i = config.vocab_cap; i < vocab.size(); ++i) {
      if (!overflow.empty()) overflow += ' ';
      overflow += vocab.tokens()[i];
    }
    throw ConfigError("vocabulary of " + std::to_string(vocab.size()) +
                      " tokens exceeds vocab_cap " + std::to_string(config.vocab_cap) +
                      "; overflow tokens: " + overflow);
  }
  world.stopwords = stopword_list();
  world.index_stopwords();

  // Facts and documents.
  struct Fact {
    std::size_t person;
    std::size_t relation;
    std::string value;
  };
  std::vector<Fact> facts;
  for (std::size_t p = 0; p < names.size(); ++p) {
    for (std::size_t r = 0; r < rels.size(); ++r) {
      facts.push_back({p, r, rels[r]->values[rng.below(rels[r]->values.size())]});
    }
  }

  std::vector<Document> docs;
  std::vector<std::size_t> fact_doc_slot(facts.size());
  for (std::size_t f = 0; f < facts.size(); ++f) {
    const auto& fact = facts[f];
    Document d;
    d.title = {vocab.id(names[fact.person])};
    d.body = instantiate(vocab, rels[fact.relation]->fact, names[fact.person], fact.value);
    fact_doc_slot[f] = docs.size();
    docs.push_back(std::move(d));
  }
  std::vector<std::pair<const RelationTemplate*, std::string>> value_entities;
  for (const auto* r : rels) {
    for (const auto& v : r->values) value_entities.push_back({r, v});
  }
  std::size_t target = config.corpus_size;
  if (target == 0) target = facts.size() + value_entities.size();
  if (target < facts.size()) {
    throw ConfigError("corpus_size " + std::to_string(target) +
                      " is smaller than the number of fact documents " +
                      std::to_string(facts.size()));
  }
  for (std::size_t i = 0; docs.size() < target; ++i) {
    const auto& [rel, value] = value_entities[i % value_entities.size()];
    const auto& pattern =
        rel->descriptions[(i / value_entities.size()) % rel->descriptions.size()];
    Document d;
    d.title = {vocab.id(value)};
    d.body = instantiate(vocab, pattern, "", value);
    docs.push_back(std::move(d));
  }
  for (const auto& d : docs) {
    if (d.body.size() > config.max_doc_tokens) {
      throw ConfigError("document body exceeds max_doc_tokens");
    }
  }

  std::vector<std::size_t> order(docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  std::vector<int> slot_to_id(docs.size());
  world.corpus.resize(docs.size());
  for (std::size_t id = 0; id < order.size(); ++id) {
    slot_to_id[order[id]] = static_cast<int>(id);
    world.corpus[id] = docs[order[id]];
    world.corpus[id].id = static_cast<int>(id);
  }

  // Questions.
  const std::size_t total = config.train_size + config.dev_size + config.test_size;
  std::vector<std::size_t> one_hop(facts.size());
  for (std::size_t i = 0; i < one_hop.size(); ++i) one_hop[i] = i;
  shuffle(one_hop, rng);
  std::size_t next_one_hop = 0;
  std::set<std::pair<std::size_t, std::size_t>> used_pairs;

  auto make_subq = [&](std::size_t f) {
    std::vector<int> q = {vocab.id("what"), vocab.id("is")};
    auto phrase = question_phrase(vocab, rels[facts[f].relation]->noun,
                                  names[facts[f].person]);
    q.insert(q.end(), phrase.begin(), phrase.end());
    q.push_back(vocab.id("?"));
    return q;
  };

  std::vector<QaInstance> all;
  for (std::size_t i = 0; i < total; ++i) {
    QaInstance qa;
    const bool two_hop = rng.uniform() < config.hop_mix;
    if (!two_hop) {
      if (next_one_hop >= one_hop.size()) {
        throw ConfigError("not enough distinct 1-hop questions for the split sizes");
      }
      const std::size_t f = one_hop[next_one_hop++];
      qa.hops = 1;
      qa.question = make_subq(f);
      qa.sub_questions = {qa.question};
      qa.answer = {vocab.id(facts[f].value)};
      qa.support = {slot_to_id[fact_doc_slot[f]]};
    } else {
      std::size_t f1 = 0;
      std::size_t f2 = 0;
      for (std::size_t attempt = 0;; ++attempt) {
        if (attempt > 100000) {
          throw ConfigError("not enough distinct 2-hop questions for the split sizes");
        }
        f1 = rng.below(facts.size());
        f2 = rng.below(facts.size());
        if (facts[f1].person == facts[f2].person) continue;
        if (used_pairs.insert({f1, f2}).second) break;
      }
      qa.hops = 2;
      qa.question = {vocab.id("what"), vocab.id("is")};
      auto p1 = question_phrase(vocab, rels[facts[f1].relation]->noun, names[facts[f1].person]);
      auto p2 = question_phrase(vocab, rels[facts[f2].relation]->noun, names[facts[f2].person]);
      qa.question.insert(qa.question.end(), p1.begin(), p1.end());
      qa.question.push_back(vocab.id("and"));
      qa.question.insert(qa.question.end(), p2.begin(), p2.end());
      qa.question.push_back(vocab.id("?"));
      qa.sub_questions = {make_subq(f1), make_subq(f2)};
      qa.answer = {vocab.id(facts[f1].value), vocab.id(facts[f2].value)};
      qa.support = {slot_to_id[fact_doc_slot[f1]], slot_to_id[fact_doc_slot[f2]]};
    }
    all.push_back(std::move(qa));
  }

  for (std::size_t i = 0; i < all.size(); ++i) {
    QaInstance qa = std::move(all[i]);
    if (i < config.train_size) {
      qa.split = Split::kTrain;
      qa.index = static_cast<int>(world.train.size());
      world.train.push_back(std::move(qa));
    } else if (i < config.train_size + config.dev_size) {
      qa.split = Split::kDev;
      qa.index = static_cast<int>(world.dev.size());
      world.dev.push_back(std::move(qa));
    } else {
      qa.split = Split::kTest;
      qa.index = static_cast<int>(world.test.size());
      world.test.push_back(std::move(qa));
    }
  }
  return world;
}

std::string serialize_world(const World& world) {
  std::ostringstream out;
  out << "ragmarl-world\t" << kWorldVersion << '\n';
  for (const auto& [k, v] : world.config.to_map()) out << "config\t" << k << '\t' << v << '\n';
  for (std::size_t i = 0; i < world.vocab.size(); ++i) {
    out << "vocab\t" << i << '\t' << world.vocab.tokens()[i] << '\n';
  }
  for (const auto& s : world.stopwords) out << "stopword\t" << s << '\n';
  for (const auto& d : world.corpus) {
    out << "doc\t" << d.id << '\t' << world.vocab.join(d.title) << '\t'
        << world.vocab.join(d.body) << '\n';
  }
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
    for (const auto& qa : world.split(s)) {
      out << "qa\t" << split_name(s) << '\t' << qa.index << '\t' << qa.hops << '\t'
          << join_ids(qa.support) << '\t' << world.vocab.join(qa.question) << '\t'
          << world.vocab.join(qa.answer) << '\t';
      for (std::size_t i = 0; i < qa.sub_questions.size(); ++i) {
        if (i) out << " | ";
        out << world.vocab.join(qa.sub_questions[i]);
      }
      out << '\n';
    }
  }
  return out.str();
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace

World parse_world(const std::string& text) {
  World world;
  world.vocab = Vocab();
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t offset = 0;
  bool header = false;
  bool vocab_started = false;
  auto fail = [&](const std::string& what) -> void {
    throw FormatError("world file line " + std::to_string(line_no) + ": " + what, offset);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    auto f = split_tabs(line);
    const auto& kind = f[0];
    try {
      if (!header) {
        if (kind != "ragmarl-world" || f.size() != 2) fail("missing header");
        if (std::stoi(f[1]) != kWorldVersion) fail("unsupported world version " + f[1]);
        header = true;
      } else if (kind == "config") {
        if (f.size() != 3) fail("malformed config record");
        world.config.set(f[1], f[2]);
      } else if (kind == "vocab") {
        if (f.size() != 3) fail("malformed vocab record");
        const auto id = static_cast<std::size_t>(std::stoul(f[1]));
        if (!vocab_started) vocab_started = true;
        if (id < world.vocab.size()) {
          if (world.vocab.tokens()[id] != f[2]) fail("reserved token mismatch");
        } else if (id == world.vocab.size()) {
          world.vocab.add(f[2]);
          if (world.vocab.size() != id + 1) fail("duplicate token " + f[2]);
        } else {
          fail("non-contiguous vocab id");
        }
      } else if (kind == "stopword") {
        if (f.size() != 2) fail("malformed stopword record");
        world.stopwords.push_back(f[1]);
      } else if (kind == "doc") {
        if (f.size() != 4) fail("malformed doc record");
        Document d;
        d.id = std::stoi(f[1]);
        if (d.id != static_cast<int>(world.corpus.size())) fail("document ids must be contiguous");
        d.title = world.vocab.encode(f[2]);
        d.body = world.vocab.encode(f[3]);
        world.corpus.push_back(std::move(d));
      } else if (kind == "qa") {
        if (f.size() != 8) fail("malformed qa record");
        QaInstance qa;
        qa.split = parse_split(f[1]);
        qa.index = std::stoi(f[2]);
        qa.hops = std::stoi(f[3]);
        std::string cur;
        for (char c : f[4] + ",") {
          if (c == ',') {
            if (!cur.empty()) qa.support.push_back(std::stoi(cur));
            cur.clear();
          } else {
            cur += c;
          }
        }
        qa.question = world.vocab.encode(f[5]);
        qa.answer = world.vocab.encode(f[6]);
        std::string part;
        std::istringstream sq(f[7]);
        while (std::getline(sq, part, '|')) qa.sub_questions.push_back(world.vocab.encode(part));
        if (static_cast<int>(qa.sub_questions.size()) != qa.hops) {
          fail("hop count does not match sub-questions");
        }
        for (int s : qa.support) {
          if (s < 0 || static_cast<std::size_t>(s) >= world.corpus.size()) {
            fail("unknown supporting document id");
          }
        }
        auto& dest = qa.split == Split::kTrain ? world.train
                     : qa.split == Split::kDev ? world.dev
                                               : world.test;
        if (qa.index != static_cast<int>(dest.size())) fail("qa indices must be contiguous");
        dest.push_back(std::move(qa));
      } else {
        fail("unknown record kind '" + kind + "'");
      }
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw FormatError("world file line " + std::to_string(line_no) + ": " + e.what(),
                        line_offset);
    }
  }
  if (!header) throw FormatError("empty world file", 0);
  world.index_stopwords();
  return world;
}

void save_world(const World& world, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write world file " + path.string());
  out << serialize_world(world);
  if (!out) throw Error("write failed: " + path.string());
}

World load_world(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open world file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_world(buf.str());
}

}  // namespace ragmarl
