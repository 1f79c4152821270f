#include "ragmarl/evaluation.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ragmarl/error.hpp"

namespace ragmarl {
namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t pos; (pos = line.find('\t', start)) != std::string::npos; start = pos + 1) {
    out.push_back(line.substr(start, pos - start));
  }
  out.push_back(line.substr(start));
  return out;
}

std::string join_missing(const std::vector<std::string>& missing) {
  std::string s = "missing run artifacts:";
  for (const auto& m : missing) s += " " + m;
  return s;
}

ReportRun load_run(const std::filesystem::path& dir, const std::string& name) {
  ReportRun run;
  run.name = name;
  run.metrics = parse_metrics_file(dir / "metrics.tsv");
  std::ifstream log(dir / "train_log.tsv");
  std::string line;
  std::getline(log, line);
  const auto header = split_tabs(line);
  std::size_t samples_col = header.size();
  std::size_t reward_col = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "samples") samples_col = i;
    if (header[i] == "r_shared") reward_col = i;
  }
  if (samples_col == header.size() || reward_col == header.size()) {
    throw FormatError((dir / "train_log.tsv").string() + ": header lacks samples/r_shared", 0);
  }
  while (std::getline(log, line)) {
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    run.reward_curve.emplace_back(std::stoull(f.at(samples_col)), std::stod(f.at(reward_col)));
  }
  return run;
}

}  // namespace

EvalResult evaluate(const World& world, const Bm25Index& index,
                    std::span<const QaInstance> instances,
                    const std::array<const Network*, kRoleCount>& agents,
                    const PipelineOptions& options, std::size_t workers) {
  EvalResult result;
  result.instances.resize(instances.size());
  parallel_for(instances.size(), workers, [&](std::size_t i) {
    PolicyDriver driver(agents, 1.0, true);
    RngStream rng(0);
    const Episode ep = run_episode(world, index, instances[i], options, driver, rng);
    InstanceResult& r = result.instances[i];
    r.instance = &instances[i];
    r.sub_questions = ep.sub_questions;
    r.candidates = ep.candidates;
    r.selected = ep.selected;
    r.answer = ep.answer;
    for (const auto& s : ep.steps) r.penalty[s.role] = s.penalty;
    r.metrics = ep.metrics;
    r.failed = ep.failed;
  });
  for (const auto& r : result.instances) {
    result.mean.acc += r.metrics.acc;
    result.mean.em += r.metrics.em;
    result.mean.f1 += r.metrics.f1;
  }
  if (!instances.empty()) {
    const double n = static_cast<double>(instances.size());
    result.mean.acc /= n;
    result.mean.em /= n;
    result.mean.f1 /= n;
  }
  return result;
}

std::string format_metrics_table(const std::string& split, ModuleConfig modules,
                                 const EvalResult& result) {
  return "split\tmodules\tcount\tacc\tem\tf1\n" + split + '\t' + module_config_name(modules) +
         '\t' + std::to_string(result.instances.size()) + '\t' + fmt(result.mean.acc) + '\t' +
         fmt(result.mean.em) + '\t' + fmt(result.mean.f1) + '\n';
}

std::string format_instance_dump(const World& world, const EvalResult& result) {
  std::string out =
      "index\thops\tacc\tem\tf1\tfailed\tquestion\tgold\tprediction\tsubquestions\tselected\n";
  for (const auto& r : result.instances) {
    std::string subqs;
    for (std::size_t i = 0; i < r.sub_questions.size(); ++i) {
      if (i) subqs += " | ";
      subqs += world.vocab.join(r.sub_questions[i]);
    }
    std::string selected;
    for (std::size_t i = 0; i < r.selected.size(); ++i) {
      if (i) selected += ',';
      selected += std::to_string(r.selected[i]);
    }
    out += std::to_string(r.instance->index) + '\t' + std::to_string(r.instance->hops) + '\t' +
           fmt(r.metrics.acc) + '\t' + fmt(r.metrics.em) + '\t' + fmt(r.metrics.f1) + '\t' +
           (r.failed ? "1" : "0") + '\t' + world.vocab.join(r.instance->question) + '\t' +
           world.vocab.join(r.instance->answer) + '\t' + world.vocab.join(r.answer) + '\t' +
           subqs + '\t' + selected + '\n';
  }
  return out;
}

std::string metrics_header() { return "stage\tmodules\tsplit\tcount\tacc\tem\tf1"; }

std::string format_metrics_row(const MetricsRow& row) {
  return row.stage + '\t' + row.modules + '\t' + row.split + '\t' + std::to_string(row.count) +
         '\t' + fmt(row.metrics.acc) + '\t' + fmt(row.metrics.em) + '\t' + fmt(row.metrics.f1);
}

std::vector<MetricsRow> parse_metrics_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifacts({path.string()});
  std::vector<MetricsRow> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 7) {
      throw FormatError(path.string() + " line " + std::to_string(lineno) +
                            ": expected 7 fields",
                        lineno);
    }
    MetricsRow row;
    row.stage = f[0];
    row.modules = f[1];
    row.split = f[2];
    row.count = std::stoull(f[3]);
    row.metrics.acc = std::stod(f[4]);
    row.metrics.em = std::stod(f[5]);
    row.metrics.f1 = std::stod(f[6]);
    out.push_back(row);
  }
  return out;
}

MissingArtifacts::MissingArtifacts(std::vector<std::string> missing)
    : Error(join_missing(missing)), missing_(std::move(missing)) {}

std::vector<ReportRun> collect_runs(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const std::vector<std::string> required = {"metrics.tsv", "train_log.tsv"};
  auto missing_in = [&](const fs::path& dir) {
    std::vector<std::string> missing;
    for (const auto& r : required) {
      if (!fs::is_regular_file(dir / r)) missing.push_back((dir / r).string());
    }
    return missing;
  };
  if (!fs::is_directory(root)) throw MissingArtifacts({root.string()});
  auto missing = missing_in(root);
  if (missing.empty()) return {load_run(root, root.filename().string())};

  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) subdirs.push_back(e.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  std::vector<ReportRun> runs;
  std::vector<std::string> sub_missing;
  for (const auto& d : subdirs) {
    auto m = missing_in(d);
    if (m.size() == required.size()) continue;  // not a run directory
    if (!m.empty()) {
      sub_missing.insert(sub_missing.end(), m.begin(), m.end());
      continue;
    }
    runs.push_back(load_run(d, d.filename().string()));
  }
  if (!sub_missing.empty()) throw MissingArtifacts(sub_missing);
  if (runs.empty()) throw MissingArtifacts(missing);
  return runs;
}

std::string format_report(const std::vector<ReportRun>& runs) {
  std::string out = "run\tmodules\tsplit\tstage\tcount\tacc\tem\tf1\n";
  for (const auto& run : runs) {
    for (const auto& sft : run.metrics) {
      if (sft.stage != "sft") continue;
      out += run.name + '\t' + sft.modules + '\t' + sft.split + "\tsft\t" +
             std::to_string(sft.count) + '\t' + fmt(sft.metrics.acc) + '\t' +
             fmt(sft.metrics.em) + '\t' + fmt(sft.metrics.f1) + '\n';
      for (const auto& rl : run.metrics) {
        if (rl.stage != "mappo" || rl.modules != sft.modules || rl.split != sft.split) continue;
        out += run.name + '\t' + rl.modules + '\t' + rl.split + "\tmappo\t" +
               std::to_string(rl.count) + '\t' + fmt(rl.metrics.acc) + '\t' +
               fmt(rl.metrics.em) + '\t' + fmt(rl.metrics.f1) + '\n';
        out += run.name + '\t' + rl.modules + '\t' + rl.split + "\tdelta\t" +
               std::to_string(rl.count) + '\t' + fmt(rl.metrics.acc - sft.metrics.acc) + '\t' +
               fmt(rl.metrics.em - sft.metrics.em) + '\t' + fmt(rl.metrics.f1 - sft.metrics.f1) +
               '\n';
      }
    }
  }
  return out;
}

std::string format_reward_curves(const std::vector<ReportRun>& runs) {
  std::string out = "run\tsamples\tr_shared\n";
  for (const auto& run : runs) {
    for (const auto& [samples, r] : run.reward_curve) {
      out += run.name + '\t' + std::to_string(samples) + '\t' + fmt(r) + '\n';
    }
  }
  return out;
}

std::string format_summary_json(const std::vector<ReportRun>& runs) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& run : runs) {
    nlohmann::ordered_json r;
    r["run"] = run.name;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& sft : run.metrics) {
      if (sft.stage != "sft") continue;
      for (const auto& rl : run.metrics) {
        if (rl.stage != "mappo" || rl.modules != sft.modules || rl.split != sft.split) continue;
        nlohmann::ordered_json row;
        row["modules"] = rl.modules;
        row["split"] = rl.split;
        for (const auto& [name, m] : {std::pair{"sft", sft.metrics}, std::pair{"mappo", rl.metrics}}) {
          row[name] = {{"acc", m.acc}, {"em", m.em}, {"f1", m.f1}};
        }
        row["delta"] = {{"acc", rl.metrics.acc - sft.metrics.acc},
                        {"em", rl.metrics.em - sft.metrics.em},
                        {"f1", rl.metrics.f1 - sft.metrics.f1}};
        rows.push_back(row);
      }
    }
    r["comparisons"] = rows;
    nlohmann::ordered_json curve = nlohmann::ordered_json::array();
    for (const auto& [samples, reward] : run.reward_curve) curve.push_back({samples, reward});
    r["reward_curve"] = curve;
    j.push_back(r);
  }
  return j.dump(2) + "\n";
}

}  // namespace ragmarl
