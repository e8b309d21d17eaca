#include "fdpg/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "fdpg/acceptance.hpp"
#include "fdpg/errors.hpp"
#include "fdpg/harness.hpp"
#include "fdpg/oracle.hpp"

namespace fdpg {

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kAbort = 2;
constexpr int kAcceptanceFailed = 3;

struct Source {
  std::string config;
  std::string builtin;

  void attach(CLI::App* app) {
    auto* c = app->add_option("--config", config, "experiment config file");
    auto* b = app->add_option("--builtin", builtin, "builtin experiment name");
    c->excludes(b);
  }

  ExperimentSpec load() const {
    if (!config.empty()) return load_experiment(config);
    if (!builtin.empty()) return builtin_experiment(builtin);
    throw ConfigError("one of --config or --builtin is required");
  }
};

struct RunFlags {
  std::string out = "out";
  std::optional<bool> exact_z;
  std::optional<std::size_t> steps;
  int threads = 1;

  void attach(CLI::App* app) {
    app->add_option("--out", out, "output root directory");
    app->add_option("--exact-z", exact_z, "use the exact partition function (true/false)");
    app->add_option("--steps", steps, "override the number of training steps")->check(CLI::PositiveNumber);
    app->add_option("--threads", threads, "sampling threads")->check(CLI::PositiveNumber);
  }

  RunOverrides overrides() const { return {steps, exact_z, threads}; }
};

// Runs one cell and writes its outputs; returns the cell's exit status.
int run_and_write(const Experiment& e, DivergenceKind kind, std::uint64_t seed, const RunFlags& flags,
                  std::ostream& out, std::ostream& err) {
  CellResult cell;
  try {
    cell = run_cell(e, kind, seed, flags.overrides());
  } catch (const InfinitePseudoRewardError& ex) {
    err << "error: " << e.spec.name << " / " << display_name(kind) << " / seed " << seed << ": "
        << ex.what() << '\n';
    return kAbort;
  }
  const auto dir = write_cell(flags.out, cell);
  if (cell.record.abort) {
    err << "error: run aborted at step " << cell.record.abort->step << ": "
        << cell.record.abort->message << '\n';
    out << dir.string() << '\n';
    return kAbort;
  }
  out << dir.string() << '\n';
  return kOk;
}

nlohmann::ordered_json row_json(const MetricsRow& r) {
  auto ext = [](const ExtendedReal& v) -> nlohmann::json {
    if (v.is_infinite()) return "inf";
    return v.value();
  };
  nlohmann::ordered_json j;
  j["forward_kl"] = ext(r.forward_kl);
  j["reverse_kl"] = ext(r.reverse_kl);
  j["total_variation"] = ext(r.total_variation);
  j["jensen_shannon"] = ext(r.jensen_shannon);
  j["divergences_exact"] = r.divergences_exact;
  j["kl_from_base"] = ext(r.kl_from_base);
  j["alignment"] = r.alignment ? nlohmann::json(*r.alignment) : nlohmann::json(nullptr);
  j["entropy"] = r.entropy;
  return j;
}

}  // namespace

int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"f-divergence policy gradient experiments"};
  app.require_subcommand(1);

  Source source;
  RunFlags flags;
  std::string divergence;
  std::uint64_t seed = 0;
  bool seed_set = false;

  auto* run = app.add_subcommand("run", "train one (experiment, divergence, seed) cell");
  source.attach(run);
  flags.attach(run);
  run->add_option("--divergence", divergence, "divergence kind (kl, rkl, tv, js, ...)");
  run->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& v) {
    seed = v;
    seed_set = true;
  }, "seed");

  auto* sweep = app.add_subcommand("sweep", "train every divergence x seed cell of an experiment");
  Source sweep_source;
  RunFlags sweep_flags;
  sweep_source.attach(sweep);
  sweep_flags.attach(sweep);

  auto* oracle_cmd = app.add_subcommand("oracle", "run the acceptance suite");
  std::string oracle_out = "out";
  std::vector<int> only;
  oracle_cmd->add_option("--out", oracle_out, "directory for acceptance.csv");
  oracle_cmd->add_option("--only", only, "criteria to run")->check(CLI::Range(1, 11));

  auto* eval = app.add_subcommand("eval", "evaluate a policy checkpoint against an experiment target");
  Source eval_source;
  std::string checkpoint;
  eval_source.attach(eval);
  eval->add_option("--checkpoint", checkpoint, "policy.ckpt path")->required();

  auto* fit = app.add_subcommand("fit-lambda", "fit exponential-family coefficients of a gdc_dist target");
  Source fit_source;
  fit_source.attach(fit);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    if (run->parsed()) {
      const ExperimentSpec spec = source.load();
      const DivergenceKind kind =
          divergence.empty() ? spec.divergences.front() : parse_divergence_kind(divergence);
      const Experiment e = build_experiment(spec);
      return run_and_write(e, kind, seed_set ? seed : spec.seeds.front(), flags, out, err);
    }
    if (sweep->parsed()) {
      const Experiment e = build_experiment(sweep_source.load());
      int status = kOk;
      for (const auto kind : e.spec.divergences) {
        for (const auto s : e.spec.seeds) {
          status = std::max(status, run_and_write(e, kind, s, sweep_flags, out, err));
        }
      }
      return status;
    }
    if (oracle_cmd->parsed()) {
      AcceptanceOptions options;
      options.only = only;
      const auto results = run_acceptance(options);
      print_acceptance(out, results);
      std::filesystem::create_directories(oracle_out);
      std::ofstream csv(std::filesystem::path(oracle_out) / "acceptance.csv", std::ios::binary);
      write_acceptance_csv(csv, results);
      return all_passed(results) ? kOk : kAcceptanceFailed;
    }
    if (eval->parsed()) {
      const Experiment e = build_experiment(eval_source.load());
      std::ifstream in(checkpoint);
      if (!in) throw ConfigError(checkpoint + ": cannot open checkpoint");
      const auto policy = read_checkpoint(in);
      EvalOptions eo;
      MetricsRow row;
      if (e.conditional()) {
        row = evaluate_conditional_metrics(*policy, e.targets, *e.task, *e.base, eo);
      } else {
        if (e.alignment) eo.alignment = &*e.alignment;
        row = evaluate_metrics(*policy, *e.target, *e.base, eo);
      }
      out << row_json(row).dump() << '\n';
      return kOk;
    }
    if (fit->parsed()) {
      const ExperimentSpec spec = fit_source.load();
      if (spec.target.kind != TargetSpecKind::GdcDist) {
        throw ConfigError(spec.name + ": fit-lambda needs a gdc_dist target");
      }
      const Experiment e = build_experiment(spec);
      const auto p = normalized_target(*e.target, *e.target->exact_log_z());
      out << "feature,desired,lambda,achieved\n" << std::setprecision(17);
      for (std::size_t i = 0; i < spec.target.moments.size(); ++i) {
        const auto& [name, desired] = spec.target.moments[i];
        const double achieved =
            oracle::exact_feature_moment(p, spec.feature(name).to_feature(spec.space), spec.space);
        out << name << ',' << desired << ',' << e.lambda[i] << ',' << achieved << '\n';
      }
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const InfinitePseudoRewardError& e) {
    err << "error: " << e.what() << '\n';
    return kAbort;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
  return kOk;
}

}  // namespace fdpg
