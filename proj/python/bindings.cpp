#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ragmarl/mappo.hpp"
#include "ragmarl/retriever.hpp"
#include "ragmarl/rewards.hpp"
#include "ragmarl/world.hpp"

namespace py = pybind11;
using namespace ragmarl;

namespace {

WorldConfig world_config_from(const py::kwargs& kwargs) {
  WorldConfig c;
  for (const auto& [k, v] : kwargs) {
    c.set(py::str(k), py::str(v));
  }
  return c;
}

py::dict instance_dict(const World& w, const QaInstance& qa) {
  py::dict d;
  d["index"] = qa.index;
  d["split"] = split_name(qa.split);
  d["hops"] = qa.hops;
  d["question"] = w.vocab.join(qa.question);
  d["answer"] = w.vocab.join(qa.answer);
  std::vector<std::string> subs;
  for (const auto& s : qa.sub_questions) subs.push_back(w.vocab.join(s));
  d["sub_questions"] = subs;
  d["support"] = qa.support;
  return d;
}

// The index holds a pointer to the world's vocabulary; keep_alive pins the world.
struct WorldIndex {
  explicit WorldIndex(const World& w) : world(&w), index(w.corpus, w.vocab) {}
  const World* world;
  Bm25Index index;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Reward, metric, advantage and environment primitives of the ragmarl core.";

  // Translators run newest first, so the derived ConfigError is registered last.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<AnswerMetrics>(m, "AnswerMetrics")
      .def_readonly("acc", &AnswerMetrics::acc)
      .def_readonly("em", &AnswerMetrics::em)
      .def_readonly("f1", &AnswerMetrics::f1)
      .def("__repr__", [](const AnswerMetrics& a) {
        return "AnswerMetrics(acc=" + std::to_string(a.acc) + ", em=" + std::to_string(a.em) +
               ", f1=" + std::to_string(a.f1) + ")";
      });
  m.def("normalize_answer", py::overload_cast<const std::string&>(&normalize_answer), py::arg("text"));
  m.def("answer_metrics", py::overload_cast<const std::string&, const std::string&>(&answer_metrics),
        py::arg("prediction"), py::arg("gold"));

  py::class_<RewardBreakdown>(m, "RewardBreakdown")
      .def_readonly("r_shared", &RewardBreakdown::r_shared)
      .def_readonly("penalty", &RewardBreakdown::penalty)
      .def_readonly("kl_log_ratio", &RewardBreakdown::kl_log_ratio)
      .def_readonly("beta", &RewardBreakdown::beta)
      .def_readonly("r_total", &RewardBreakdown::r_total);
  m.def("penalty_qr", &penalty_qr, py::arg("sub_question_count"));
  m.def("penalty_g", &penalty_g, py::arg("answer_length"), py::arg("max_answer_tokens") = 32);
  m.def("assemble_terminal_reward", &assemble_terminal_reward, py::arg("r_shared"),
        py::arg("penalty"), py::arg("beta"), py::arg("kl_log_ratio"));

  m.def(
      "compute_gae",
      [](const std::vector<double>& rewards, const std::vector<double>& values, double gamma,
         double lambda) {
        GaeConfig c{gamma, lambda};
        c.validate();
        return compute_gae(rewards, values, c);
      },
      py::arg("rewards"), py::arg("values"), py::arg("gamma") = 1.0, py::arg("lam") = 0.95);
  // The core takes spans; pybind11 converts lists to vectors.
  using Vec = std::vector<double>;
  m.def(
      "discounted_returns", [](const Vec& r, double gamma) { return discounted_returns(r, gamma); },
      py::arg("rewards"), py::arg("gamma") = 1.0);
  m.def(
      "actor_objective",
      [](const Vec& lp, const Vec& old, const Vec& adv, double eps) {
        return actor_objective(lp, old, adv, eps);
      },
      py::arg("logprobs"), py::arg("old_logprobs"), py::arg("advantages"),
      py::arg("clip_epsilon") = 0.2);
  m.def(
      "critic_loss",
      [](const Vec& v, const Vec& old, const Vec& targets, double eps) {
        return critic_loss(v, old, targets, eps);
      },
      py::arg("values"), py::arg("old_values"), py::arg("targets"), py::arg("clip_epsilon") = 0.2);
  m.def("total_loss", &total_loss, py::arg("actor_objective"), py::arg("critic_loss"),
        py::arg("alpha") = 0.1);
  m.def("beta_schedule", &beta_schedule, py::arg("batch"), py::arg("total_batches"),
        py::arg("beta_max") = 0.2, py::arg("beta_min") = 0.06);

  py::class_<World>(m, "World")
      .def_property_readonly("vocab_size", [](const World& w) { return w.vocab.size(); })
      .def_property_readonly("corpus_size", [](const World& w) { return w.corpus.size(); })
      .def("document",
           [](const World& w, int id) {
             const Document& d = w.doc(id);
             return py::make_tuple(w.vocab.join(d.title), w.vocab.join(d.body));
           })
      .def("instances",
           [](const World& w, const std::string& split) {
             py::list out;
             for (const auto& qa : w.split(parse_split(split))) out.append(instance_dict(w, qa));
             return out;
           },
           py::arg("split"))
      .def("serialize", &serialize_world)
      .def("save", [](const World& w, const std::filesystem::path& p) { save_world(w, p); });
  m.def("build_world", [](const py::kwargs& kwargs) { return build_world(world_config_from(kwargs)); },
        "Builds a synthetic world; keyword arguments are world config keys.");
  m.def("parse_world", &parse_world, py::arg("text"));
  m.def("load_world", &load_world, py::arg("path"));

  py::class_<WorldIndex>(m, "Bm25Index")
      .def(py::init<const World&>(), py::arg("world"), py::keep_alive<1, 2>())
      .def(
          "retrieve",
          [](const WorldIndex& idx, const std::string& query, std::size_t k) {
            return idx.index.retrieve(idx.world->vocab.encode(query), k);
          },
          py::arg("query"), py::arg("k") = 10,
          "Top-k document ids; every query word must be in the world vocabulary.");
}
