// Command-line front end: gen-world, sft, train, eval, report.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "ragmarl/config.hpp"
#include "ragmarl/error.hpp"
#include "ragmarl/evaluation.hpp"

namespace fs = std::filesystem;
using namespace ragmarl;

namespace {

struct Flags {
  std::string config;
  std::string world;
  std::string checkpoint;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::string split = "dev";
  std::vector<std::string> sets;
  bool resume = false;
  std::size_t stop_after = 0;
  std::string dataset;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

RunConfig make_config(const Flags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!f.world.empty()) cfg.world_path = f.world;
  if (!f.checkpoint.empty()) cfg.checkpoint_path = f.checkpoint;
  if (f.seed) cfg.seed = *f.seed;
  cfg.finalize();
  return cfg;
}

World require_world(const RunConfig& cfg) {
  if (cfg.world_path.empty()) throw ConfigError("no world file given (--world or world=)");
  if (!fs::is_regular_file(cfg.world_path)) {
    throw Error("world file not found: " + cfg.world_path.string());
  }
  return load_world(cfg.world_path);
}

fs::path require_out(const Flags& f) {
  if (f.out.empty()) throw ConfigError("--out is required");
  return f.out;
}

int cmd_gen_world(const Flags& f) {
  RunConfig cfg = make_config(f);
  if (f.seed) cfg.world.seed = *f.seed;
  const fs::path out = require_out(f);
  const World world = build_world(cfg.world);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_world(world, out);
  std::size_t two_hop = 0;
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
    for (const auto& qa : world.split(s)) two_hop += qa.hops == 2 ? 1 : 0;
  }
  std::cout << "vocab\t" << world.vocab.size() << "\ncorpus\t" << world.corpus.size()
            << "\ntrain\t" << world.train.size() << "\ndev\t" << world.dev.size() << "\ntest\t"
            << world.test.size() << "\ntwo_hop\t" << two_hop << '\n';
  return 0;
}

int cmd_sft(const Flags& f) {
  const RunConfig cfg = make_config(f);
  const fs::path out = require_out(f);
  const World world = require_world(cfg);
  const Bm25Index index(world.corpus, world.vocab);
  std::vector<SftExample> examples;
  if (!f.dataset.empty()) {
    examples = parse_sft_dataset(world.vocab, read_file(f.dataset));
  } else {
    examples = build_sft_dataset(world, index, world.train, cfg.mappo.pipeline,
                                 cfg.sft_full_context_generator);
  }
  fs::create_directories(out);
  write_file(out / "config.txt", cfg.to_text());
  write_file(out / "sft_dataset.tsv", format_sft_dataset(world.vocab, examples));

  Network actor = make_initial_actor(cfg, world.vocab.size());
  RngStream rng = sft_stream(cfg);
  std::ofstream loss(out / "sft_loss.tsv", std::ios::trunc);
  loss << "epoch\tmean_token_loss\tlr\n";
  const auto result = sft_train(actor, examples, cfg.sft, rng, [&](const SftEpoch& e) {
    char line[128];
    std::snprintf(line, sizeof(line), "%zu\t%.6f\t%.6e\n", e.epoch, e.mean_token_loss, e.lr);
    loss << line << std::flush;
    std::cout << "epoch " << e.epoch << " loss " << e.mean_token_loss << '\n' << std::flush;
  });
  save_network(actor, out / "sft.ckpt");
  if (result.diverged) {
    std::cerr << "sft diverged; saved the last finite parameters\n";
    return 2;
  }
  const auto gate = warm_start_gate(actor, examples, cfg.mappo.pipeline);
  char buf[256];
  std::snprintf(buf, sizeof(buf), "selector_exact\t%.6f\nanswer_exact\t%.6f\n",
                gate.selector_exact, gate.answer_exact);
  write_file(out / "sft_gate.tsv", buf);
  std::cout << buf;
  return 0;
}

std::vector<MetricsRow> evaluate_stage(const World& world, const Bm25Index& index,
                                       const std::array<const Network*, kRoleCount>& agents,
                                       const RunConfig& cfg, const std::string& stage,
                                       std::size_t workers) {
  std::vector<MetricsRow> rows;
  for (Split s : {Split::kDev, Split::kTest}) {
    const auto& inst = world.split(s);
    const auto res = evaluate(world, index, inst, agents, cfg.mappo.pipeline, workers);
    rows.push_back({stage, module_config_name(cfg.mappo.pipeline.modules), split_name(s),
                    inst.size(), res.mean});
  }
  return rows;
}

int cmd_train(const Flags& f) {
  const RunConfig cfg = make_config(f);
  const fs::path out = require_out(f);
  const World world = require_world(cfg);
  if (cfg.checkpoint_path.empty()) {
    throw ConfigError("no warm-start checkpoint given (--checkpoint or checkpoint=)");
  }
  const Network sft = load_network(cfg.checkpoint_path);
  fs::create_directories(out);
  write_file(out / "config.txt", cfg.to_text());
  TrainOptions opts;
  opts.out_dir = out;
  opts.resume = f.resume;
  opts.stop_after = f.stop_after;
  opts.workers = f.workers;
  opts.progress = &std::cout;
  const auto result = train_mappo(world, sft, cfg.mappo, opts);
  if (!result.finished) {
    std::cout << "stopped before batch " << result.next_batch << "; resume with --resume\n";
    return 0;
  }
  const Bm25Index index(world.corpus, world.vocab);
  const std::array<const Network*, kRoleCount> sft_agents = {&sft, &sft, &sft};
  const auto trained = load_agents(out / "mappo.ckpt");
  auto rows = evaluate_stage(world, index, sft_agents, cfg, "sft", f.workers);
  auto rl = evaluate_stage(world, index, trained.agents(), cfg, "mappo", f.workers);
  rows.insert(rows.end(), rl.begin(), rl.end());
  std::string text = metrics_header() + "\n";
  for (const auto& r : rows) text += format_metrics_row(r) + "\n";
  write_file(out / "metrics.tsv", text);
  std::cout << text;
  return 0;
}

int cmd_eval(const Flags& f) {
  const RunConfig cfg = make_config(f);
  const fs::path out = require_out(f);
  const World world = require_world(cfg);
  if (cfg.checkpoint_path.empty()) throw ConfigError("--checkpoint is required");
  const auto agents = load_agents(cfg.checkpoint_path);
  const Split split = parse_split(f.split);
  const Bm25Index index(world.corpus, world.vocab);
  const auto result =
      evaluate(world, index, world.split(split), agents.agents(), cfg.mappo.pipeline, f.workers);
  fs::create_directories(out);
  const std::string table = format_metrics_table(f.split, cfg.mappo.pipeline.modules, result);
  write_file(out / ("eval_" + f.split + ".tsv"), table);
  write_file(out / ("eval_" + f.split + "_instances.tsv"), format_instance_dump(world, result));
  std::cout << table;
  return 0;
}

int cmd_report(const std::string& dir) {
  const auto runs = collect_runs(dir);
  const fs::path root(dir);
  write_file(root / "report.tsv", format_report(runs));
  write_file(root / "reward_curve.tsv", format_reward_curves(runs));
  write_file(root / "summary.json", format_summary_json(runs));
  std::cout << format_report(runs);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent joint optimization of a retrieval-augmented QA pipeline"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "key=value config file");
    sub->add_option("--set", f.sets, "override one config key (key=value), repeatable");
    sub->add_option("--seed", f.seed, "master seed");
  };

  auto* gen = app.add_subcommand("gen-world", "generate a world file");
  common(gen);
  gen->add_option("--out", f.out, "world file to write")->required();

  auto* sft = app.add_subcommand("sft", "supervised warm start");
  common(sft);
  sft->add_option("--world", f.world, "world file");
  sft->add_option("--out", f.out, "run directory")->required();
  sft->add_option("--dataset", f.dataset, "train on this dataset dump instead of building one");

  auto* train = app.add_subcommand("train", "joint MAPPO optimization");
  common(train);
  train->add_option("--world", f.world, "world file");
  train->add_option("--checkpoint", f.checkpoint, "warm-start checkpoint");
  train->add_option("--out", f.out, "run directory")->required();
  train->add_option("--workers", f.workers, "rollout threads")->check(CLI::PositiveNumber);
  train->add_flag("--resume", f.resume, "continue from <out>/checkpoint_latest.ckpt");
  train->add_option("--stop-after", f.stop_after, "stop after this many batches");

  auto* eval = app.add_subcommand("eval", "greedy evaluation on one split");
  common(eval);
  eval->add_option("--world", f.world, "world file");
  eval->add_option("--checkpoint", f.checkpoint, "actor or training checkpoint")->required();
  eval->add_option("--split", f.split, "train, dev or test")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  eval->add_option("--out", f.out, "output directory")->required();
  eval->add_option("--workers", f.workers, "evaluation threads")->check(CLI::PositiveNumber);

  std::string report_dir;
  auto* report = app.add_subcommand("report", "SFT vs MAPPO comparison for run directories");
  report->add_option("run_dir", report_dir, "run directory or directory of runs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_world(f);
    if (*sft) return cmd_sft(f);
    if (*train) return cmd_train(f);
    if (*eval) return cmd_eval(f);
    if (*report) return cmd_report(report_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
