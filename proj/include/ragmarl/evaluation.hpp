#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ragmarl/mappo.hpp"

namespace ragmarl {

struct InstanceResult {
  const QaInstance* instance = nullptr;
  std::vector<std::vector<int>> sub_questions;
  std::vector<int> candidates;
  std::vector<std::size_t> selected;
  std::vector<int> answer;
  std::map<Role, double> penalty;
  AnswerMetrics metrics;
  bool failed = false;
};

struct EvalResult {
  AnswerMetrics mean;
  std::vector<InstanceResult> instances;
};

/// Greedy decoding for every agent; results in instance order.
EvalResult evaluate(const World& world, const Bm25Index& index,
                    std::span<const QaInstance> instances,
                    const std::array<const Network*, kRoleCount>& agents,
                    const PipelineOptions& options, std::size_t workers);

// Metrics table: header "split modules count acc em f1", one row.
std::string format_metrics_table(const std::string& split, ModuleConfig modules,
                                 const EvalResult& result);

// Per-instance dump: tab-separated
//   index hops acc em f1 failed question gold prediction subquestions selected
// with sub-questions joined by " | " and selected candidate indices by ",".
std::string format_instance_dump(const World& world, const EvalResult& result);

// Run metrics (metrics.tsv): one row per evaluated stage,
//   stage modules split count acc em f1
// where stage is "sft" or "mappo".
struct MetricsRow {
  std::string stage;
  std::string modules;
  std::string split;
  std::size_t count = 0;
  AnswerMetrics metrics;
};
std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);
std::vector<MetricsRow> parse_metrics_file(const std::filesystem::path& path);

/// Throws MissingArtifacts listing every absent file.
class MissingArtifacts : public Error {
 public:
  explicit MissingArtifacts(std::vector<std::string> missing);
  const std::vector<std::string>& missing() const noexcept { return missing_; }

 private:
  std::vector<std::string> missing_;
};

struct ReportRun {
  std::string name;  // run directory name relative to the report root
  std::vector<MetricsRow> metrics;
  std::vector<std::pair<std::size_t, double>> reward_curve;  // (samples, mean R_shared)
};

/// A run directory holds metrics.tsv and train_log.tsv; the report root is
/// either one run directory or a directory whose immediate subdirectories
/// are runs.
std::vector<ReportRun> collect_runs(const std::filesystem::path& root);

// report.tsv: run modules split stage count acc em f1, with a "delta" row
// (mappo minus sft) after each sft/mappo pair.
std::string format_report(const std::vector<ReportRun>& runs);
std::string format_reward_curves(const std::vector<ReportRun>& runs);
std::string format_summary_json(const std::vector<ReportRun>& runs);

}  // namespace ragmarl
