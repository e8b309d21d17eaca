#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fdpg/policy.hpp"
#include "fdpg/targets.hpp"
#include "fdpg/trainer.hpp"

namespace fdpg {

enum class FeatureKind { ContainsToken, CountFraction, MajorityOfPair, PrefixMatch };

// ContainsToken(t): 1 if t occurs. CountFraction(t): (count(t) + 0.5) / (L + 1).
// MajorityOfPair(t1, t2): 1 if t1 occurs more often than t2.
// PrefixMatch: 1 if the continuation starts with the context (conditional tasks only).
struct BuiltinFeature {
  std::string name;
  FeatureKind kind = FeatureKind::ContainsToken;
  Token t1 = 0;
  Token t2 = 0;

  bool binary() const { return kind != FeatureKind::CountFraction; }
  // Throws ConfigError for PrefixMatch, which needs a context.
  FeatureFn to_feature(const Space& space) const;
};

struct PolicySpec {
  PolicyKind family = PolicyKind::Tabular;
  int order = 2;
};

enum class TargetSpecKind { GdcBinary, Rlkl, GdcDist, ChoiceRlkl, Conditional };

struct TargetSpec {
  TargetSpecKind kind = TargetSpecKind::GdcBinary;
  // Constraint feature (GdcBinary, Conditional) or reward feature (Rlkl, ChoiceRlkl).
  std::string feature;
  double beta = 1.0;
  std::vector<std::pair<std::string, double>> moments;
  double fit_tol = 1e-7;
  std::vector<Sequence> contexts;
};

using Setting = std::pair<std::string, std::string>;

struct ExperimentSpec {
  std::string name;
  Space space{2, 1};
  PolicySpec base;
  PolicySpec policy;
  std::vector<BuiltinFeature> features;
  TargetSpec target;
  std::string alignment;
  std::vector<DivergenceKind> divergences;
  std::vector<std::uint64_t> seeds;
  std::vector<Setting> train;
  std::map<DivergenceKind, std::vector<Setting>> train_by_divergence;

  const BuiltinFeature& feature(const std::string& name) const;
  // [train] settings, then the divergence's own section, with divergence and seed applied.
  TrainConfig config_for(DivergenceKind kind, std::uint64_t seed) const;
  // True if the target has zero-mass sequences by construction.
  bool hard_constraint() const;
};

// Applies one key = value training setting; throws ConfigError on unknown keys or bad values.
void apply_train_setting(TrainConfig& config, const std::string& key, const std::string& value);

// Parses the sectioned key = value grammar documented in the README. Errors are
// ConfigError with "source:line: field: message".
ExperimentSpec parse_experiment(std::istream& in, const std::string& source = "<config>");
ExperimentSpec load_experiment(const std::filesystem::path& path);

struct BuiltinConfig {
  std::string name;
  std::string text;
};
const std::vector<BuiltinConfig>& builtin_configs();
std::vector<ExperimentSpec> builtin_experiments();
ExperimentSpec builtin_experiment(const std::string& name);

// Materialized base, initial policy and target(s) for a spec.
struct Experiment {
  ExperimentSpec spec;
  std::shared_ptr<const SequencePolicy> base;
  std::unique_ptr<SequencePolicy> initial;
  std::optional<TargetModel> target;
  std::optional<ConditionalTask> task;
  std::vector<TargetModel> targets;
  std::optional<FeatureFn> alignment;
  std::vector<double> lambda;

  bool conditional() const { return task.has_value(); }
};

Experiment build_experiment(const ExperimentSpec& spec);

struct RunOverrides {
  std::optional<std::size_t> steps;
  std::optional<bool> exact_z;
  int threads = 1;
};

struct RunHeader {
  std::string experiment;
  DivergenceKind divergence = DivergenceKind::JensenShannon;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::size_t eval_interval = 0;
};

// One JSON object per line: a header, one "metrics" row per evaluation, and an
// "abort" row when the run stopped early. Infinite values are the string "inf";
// absent values are null.
void write_metrics_jsonl(std::ostream& out, const RunHeader& header, const RunRecord& record);
void write_summary_csv(std::ostream& out, const RunHeader& header, const RunRecord& record);

struct CellResult {
  RunHeader header;
  RunRecord record;
  std::unique_ptr<SequencePolicy> policy;
};

// Trains one (experiment, divergence, seed) cell. Throws InfinitePseudoRewardError
// before training when the divergence cannot handle the target's support.
CellResult run_cell(const Experiment& experiment, DivergenceKind kind, std::uint64_t seed,
                    const RunOverrides& overrides = {});

// Writes metrics.jsonl, summary.csv and policy.ckpt under root/name/divergence/seed.
std::filesystem::path write_cell(const std::filesystem::path& root, const CellResult& cell);

}  // namespace fdpg
