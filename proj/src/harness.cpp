#include "fdpg/harness.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include "json.hpp"

#include "fdpg/errors.hpp"

namespace fdpg {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string s) {
  boost::algorithm::trim(s);
  return s;
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> parts;
  boost::algorithm::split(parts, s, [sep](char c) { return c == sep; });
  for (auto& p : parts) p = trim(p);
  parts.erase(std::remove(parts.begin(), parts.end(), std::string()), parts.end());
  return parts;
}

template <class T>
std::optional<T> parse_number(const std::string& s) {
  T value{};
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

// Field-level diagnostics: locate `key` inside `[section]` in the raw text.
class SourceMap {
 public:
  SourceMap(std::string source, const std::string& text) : source_(std::move(source)) {
    std::istringstream in(text);
    std::string line, section;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      const std::string t = trim(line);
      if (t.empty() || t[0] == ';' || t[0] == '#') continue;
      if (t.front() == '[' && t.back() == ']') {
        section = trim(t.substr(1, t.size() - 2));
        lines_[{section, ""}] = no;
      } else if (const auto eq = t.find('='); eq != std::string::npos) {
        lines_[{section, trim(t.substr(0, eq))}] = no;
      }
    }
  }

  [[noreturn]] void fail(const std::string& section, const std::string& key,
                         const std::string& message) const {
    std::ostringstream os;
    os << source_;
    const auto it = lines_.find({section, key});
    if (it != lines_.end()) os << ':' << it->second;
    os << ": " << section;
    if (!key.empty()) os << '.' << key;
    os << ": " << message;
    throw ConfigError(os.str());
  }

 private:
  std::string source_;
  std::map<std::pair<std::string, std::string>, std::size_t> lines_;
};

class Section {
 public:
  Section(const SourceMap& map, std::string name, const pt::ptree& tree)
      : map_(map), name_(std::move(name)), tree_(tree) {}

  bool has(const std::string& key) const { return tree_.find(key) != tree_.not_found(); }

  std::string str(const std::string& key) const {
    const auto it = tree_.find(key);
    if (it == tree_.not_found()) map_.fail(name_, "", "missing required key '" + key + "'");
    return trim(it->second.data());
  }
  std::string str(const std::string& key, const std::string& fallback) const {
    return has(key) ? str(key) : fallback;
  }

  template <class T>
  T number(const std::string& key) const {
    const auto v = parse_number<T>(str(key));
    if (!v) fail(key, "expected a number, got '" + str(key) + "'");
    return *v;
  }
  template <class T>
  T number(const std::string& key, T fallback) const {
    return has(key) ? number<T>(key) : fallback;
  }

  Token token(const std::string& key, const Space& space) const {
    const auto t = number<unsigned long>(key);
    if (t >= static_cast<unsigned long>(space.vocab())) fail(key, "token " + std::to_string(t) + " outside vocabulary");
    return static_cast<Token>(t);
  }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    map_.fail(name_, key, message);
  }

  void check_keys(std::initializer_list<const char*> allowed) const {
    for (const auto& [key, value] : tree_) {
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
        fail(key, "unknown key");
      }
    }
  }

  const pt::ptree& tree() const { return tree_; }

 private:
  const SourceMap& map_;
  std::string name_;
  const pt::ptree& tree_;
};

PolicySpec parse_policy(const Section& s) {
  s.check_keys({"family", "order"});
  PolicySpec spec;
  const std::string family = s.str("family");
  if (family == "tabular") {
    spec.family = PolicyKind::Tabular;
    spec.order = 1;
  } else if (family == "ngram") {
    spec.family = PolicyKind::NGram;
    spec.order = s.number<int>("order", 2);
    if (spec.order < 1) s.fail("order", "must be >= 1");
  } else {
    s.fail("family", "expected tabular or ngram, got '" + family + "'");
  }
  return spec;
}

BuiltinFeature parse_feature(const Section& s, const std::string& name, const Space& space) {
  s.check_keys({"kind", "token", "first", "second"});
  BuiltinFeature f;
  f.name = name;
  const std::string kind = s.str("kind");
  if (kind == "contains_token") {
    f.kind = FeatureKind::ContainsToken;
    f.t1 = s.token("token", space);
  } else if (kind == "count_fraction") {
    f.kind = FeatureKind::CountFraction;
    f.t1 = s.token("token", space);
  } else if (kind == "majority_of_pair") {
    f.kind = FeatureKind::MajorityOfPair;
    f.t1 = s.token("first", space);
    f.t2 = s.token("second", space);
    if (f.t1 == f.t2) s.fail("second", "must differ from first");
  } else if (kind == "prefix_match") {
    f.kind = FeatureKind::PrefixMatch;
  } else {
    s.fail("kind", "unknown feature kind '" + kind + "'");
  }
  return f;
}

TargetSpecKind parse_target_kind(const Section& s) {
  const std::string kind = s.str("kind");
  if (kind == "gdc_binary") return TargetSpecKind::GdcBinary;
  if (kind == "rlkl") return TargetSpecKind::Rlkl;
  if (kind == "gdc_dist") return TargetSpecKind::GdcDist;
  if (kind == "choice_rlkl") return TargetSpecKind::ChoiceRlkl;
  if (kind == "conditional") return TargetSpecKind::Conditional;
  s.fail("kind", "unknown target kind '" + kind + "'");
}

void require_feature(const Section& s, const ExperimentSpec& spec, const std::string& key,
                     const std::string& name) {
  const bool found = std::any_of(spec.features.begin(), spec.features.end(),
                                 [&](const BuiltinFeature& f) { return f.name == name; });
  if (!found) s.fail(key, "undeclared feature '" + name + "'");
}

TargetSpec parse_target(const Section& s, const ExperimentSpec& spec) {
  s.check_keys({"kind", "feature", "beta", "moments", "fit_tol", "contexts"});
  TargetSpec t;
  t.kind = parse_target_kind(s);
  auto feature_of = [&]() {
    const std::string name = s.str("feature");
    require_feature(s, spec, "feature", name);
    return name;
  };
  switch (t.kind) {
    case TargetSpecKind::GdcBinary:
      t.feature = feature_of();
      if (!spec.feature(t.feature).binary()) s.fail("feature", "constraint must be binary");
      if (spec.feature(t.feature).kind == FeatureKind::PrefixMatch) {
        s.fail("feature", "prefix_match needs a conditional target");
      }
      break;
    case TargetSpecKind::Rlkl:
    case TargetSpecKind::ChoiceRlkl:
      t.feature = feature_of();
      if (spec.feature(t.feature).kind == FeatureKind::PrefixMatch) {
        s.fail("feature", "prefix_match needs a conditional target");
      }
      t.beta = s.number<double>("beta");
      if (!(t.beta > 0.0)) s.fail("beta", "must be positive");
      break;
    case TargetSpecKind::GdcDist:
      for (const auto& item : split_list(s.str("moments"))) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) s.fail("moments", "expected name:value, got '" + item + "'");
        const std::string name = trim(item.substr(0, colon));
        const auto value = parse_number<double>(trim(item.substr(colon + 1)));
        if (!value) s.fail("moments", "bad desired moment in '" + item + "'");
        require_feature(s, spec, "moments", name);
        t.moments.emplace_back(name, *value);
      }
      if (t.moments.empty()) s.fail("moments", "at least one moment required");
      t.fit_tol = s.number<double>("fit_tol", 1e-7);
      if (!(t.fit_tol > 0.0)) s.fail("fit_tol", "must be positive");
      break;
    case TargetSpecKind::Conditional:
      t.feature = feature_of();
      if (spec.feature(t.feature).kind != FeatureKind::PrefixMatch) {
        s.fail("feature", "conditional constraint must be prefix_match");
      }
      for (const auto& ctx : split_list(s.str("contexts"))) {
        Sequence c;
        for (const auto& tok : split_list(ctx, ' ')) {
          const auto v = parse_number<unsigned long>(tok);
          if (!v || *v >= static_cast<unsigned long>(spec.space.vocab())) s.fail("contexts", "bad context token '" + tok + "'");
          c.push_back(static_cast<Token>(*v));
        }
        t.contexts.push_back(std::move(c));
      }
      if (t.contexts.empty()) s.fail("contexts", "at least one context required");
      break;
  }
  return t;
}

double parse_double_setting(const std::string& key, const std::string& value) {
  const auto v = parse_number<double>(value);
  if (!v) throw ConfigError(key + ": expected a number, got '" + value + "'");
  return *v;
}

std::size_t parse_size_setting(const std::string& key, const std::string& value) {
  const auto v = parse_number<std::size_t>(value);
  if (!v) throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  return *v;
}

}  // namespace

FeatureFn BuiltinFeature::to_feature(const Space& space) const {
  const Token a = t1, b = t2;
  switch (kind) {
    case FeatureKind::ContainsToken:
      return {name,
              [a](std::span<const Token> x) {
                return std::find(x.begin(), x.end(), a) != x.end() ? 1.0 : 0.0;
              },
              true};
    case FeatureKind::CountFraction: {
      const double denom = static_cast<double>(space.length()) + 1.0;
      return {name,
              [a, denom](std::span<const Token> x) {
                return (static_cast<double>(std::count(x.begin(), x.end(), a)) + 0.5) / denom;
              },
              false};
    }
    case FeatureKind::MajorityOfPair:
      return {name,
              [a, b](std::span<const Token> x) {
                return std::count(x.begin(), x.end(), a) > std::count(x.begin(), x.end(), b) ? 1.0
                                                                                            : 0.0;
              },
              true};
    case FeatureKind::PrefixMatch:
      break;
  }
  throw ConfigError("feature '" + name + "' (prefix_match) requires a context");
}

const BuiltinFeature& ExperimentSpec::feature(const std::string& feature_name) const {
  for (const auto& f : features) {
    if (f.name == feature_name) return f;
  }
  throw LookupError("undeclared feature '" + feature_name + "'");
}

bool ExperimentSpec::hard_constraint() const {
  return target.kind == TargetSpecKind::GdcBinary || target.kind == TargetSpecKind::Conditional;
}

void apply_train_setting(TrainConfig& c, const std::string& key, const std::string& value) {
  auto choose = [&](std::initializer_list<const char*> options) {
    for (const char* o : options) {
      if (value == o) return;
    }
    throw ConfigError(key + ": unexpected value '" + value + "'");
  };
  if (key == "learning_rate") {
    c.learning_rate = parse_double_setting(key, value);
  } else if (key == "optimizer") {
    choose({"adam", "sgd"});
    c.optimizer = value == "adam" ? OptimizerKind::Adam : OptimizerKind::Sgd;
  } else if (key == "adam_beta1") {
    c.adam.beta1 = parse_double_setting(key, value);
  } else if (key == "adam_beta2") {
    c.adam.beta2 = parse_double_setting(key, value);
  } else if (key == "adam_eps") {
    c.adam.eps = parse_double_setting(key, value);
  } else if (key == "batch_size") {
    c.batch_size = parse_size_setting(key, value);
  } else if (key == "steps") {
    c.steps = parse_size_setting(key, value);
  } else if (key == "eval_interval") {
    c.eval_interval = parse_size_setting(key, value);
  } else if (key == "baseline") {
    choose({"none", "one", "ema", "constant"});
    if (value == "none") c.baseline = BaselineMode::None;
    if (value == "one") c.baseline = BaselineMode::AnalyticOne;
    if (value == "ema") c.baseline = BaselineMode::Ema;
    if (value == "constant") c.baseline = BaselineMode::Constant;
  } else if (key == "ema_alpha") {
    c.ema_alpha = parse_double_setting(key, value);
  } else if (key == "baseline_constant") {
    c.baseline_constant = parse_double_setting(key, value);
  } else if (key == "z_mode") {
    choose({"exact", "estimated"});
    c.z_mode = value == "exact" ? ZMode::Exact : ZMode::Estimated;
  } else if (key == "z_order") {
    choose({"post", "pre"});
    c.z_order = value == "post" ? ZUpdateOrder::PostBatch : ZUpdateOrder::PreBatch;
  } else if (key == "warmup_steps") {
    c.warmup_steps = parse_size_setting(key, value);
  } else if (key == "final_lr_fraction") {
    c.final_lr_fraction = parse_double_setting(key, value);
  } else if (key == "eval_budget") {
    c.eval_budget = parse_size_setting(key, value);
  } else if (key == "eval_mode") {
    choose({"exact", "sampled"});
    c.eval_mode = value == "exact" ? EvalMode::Exact : EvalMode::Sampled;
  } else if (key == "contexts_per_step") {
    c.contexts_per_step = parse_size_setting(key, value);
  } else {
    throw ConfigError(key + ": unknown training setting");
  }
}

TrainConfig ExperimentSpec::config_for(DivergenceKind kind, std::uint64_t seed) const {
  TrainConfig c;
  for (const auto& [k, v] : train) apply_train_setting(c, k, v);
  if (const auto it = train_by_divergence.find(kind); it != train_by_divergence.end()) {
    for (const auto& [k, v] : it->second) apply_train_setting(c, k, v);
  }
  c.divergence = kind;
  c.seed = seed;
  return c;
}

ExperimentSpec parse_experiment(std::istream& in, const std::string& source) {
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const SourceMap map(source, text);
  pt::ptree root;
  try {
    std::istringstream stream(text);
    pt::read_ini(stream, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  auto section = [&](const std::string& name) {
    const auto it = root.find(name);
    if (it == root.not_found()) map.fail(name, "", "missing section [" + name + "]");
    return Section(map, name, it->second);
  };

  ExperimentSpec spec;
  const Section exp = section("experiment");
  exp.check_keys({"name", "vocab", "length", "divergences", "seeds", "alignment"});
  spec.name = exp.str("name");
  if (spec.name.empty() || spec.name.find('/') != std::string::npos) exp.fail("name", "invalid name");
  const auto vocab = exp.number<std::size_t>("vocab");
  const auto length = exp.number<std::size_t>("length");
  if (vocab < 2) exp.fail("vocab", "must be >= 2");
  if (length < 1) exp.fail("length", "must be >= 1");
  spec.space = Space(vocab, length);

  for (const auto& [name, tree] : root) {
    if (name.rfind("feature:", 0) != 0) continue;
    const std::string fname = trim(name.substr(8));
    if (fname.empty()) map.fail(name, "", "feature section needs a name");
    spec.features.push_back(parse_feature(Section(map, name, tree), fname, spec.space));
  }

  spec.base = parse_policy(section("base"));
  spec.policy = root.find("policy") != root.not_found() ? parse_policy(section("policy")) : spec.base;
  spec.target = parse_target(section("target"), spec);
  if (spec.target.kind == TargetSpecKind::Conditional && spec.policy.family == PolicyKind::Tabular) {
    map.fail("policy", "family", "conditional targets need an ngram policy");
  }
  if (spec.target.kind == TargetSpecKind::Conditional && spec.base.family == PolicyKind::Tabular) {
    map.fail("base", "family", "conditional targets need an ngram base");
  }

  if (exp.has("alignment")) {
    spec.alignment = exp.str("alignment");
    require_feature(exp, spec, "alignment", spec.alignment);
    if (spec.feature(spec.alignment).kind == FeatureKind::PrefixMatch) {
      exp.fail("alignment", "prefix_match cannot be an alignment feature");
    }
  }

  for (const auto& d : split_list(exp.str("divergences"))) {
    DivergenceKind kind;
    try {
      kind = parse_divergence_kind(d);
    } catch (const ValidationError& e) {
      exp.fail("divergences", e.what());
    }
    if (spec.hard_constraint() && make_generator(kind).f_prime_at_inf().is_infinite()) {
      exp.fail("divergences", std::string(display_name(kind)) +
                                  " is incompatible with a hard-constraint target (support violation)");
    }
    spec.divergences.push_back(kind);
  }
  if (spec.divergences.empty()) exp.fail("divergences", "at least one divergence required");
  for (const auto& s : split_list(exp.str("seeds", "0"))) {
    const auto v = parse_number<std::uint64_t>(s);
    if (!v) exp.fail("seeds", "bad seed '" + s + "'");
    spec.seeds.push_back(*v);
  }

  auto read_train = [&](const std::string& name, const pt::ptree& tree) {
    std::vector<Setting> settings;
    TrainConfig probe;
    for (const auto& [key, value] : tree) {
      const std::string v = trim(value.data());
      try {
        apply_train_setting(probe, key, v);
      } catch (const ConfigError& e) {
        map.fail(name, key, e.what());
      }
      settings.emplace_back(key, v);
    }
    return settings;
  };
  for (const auto& [name, tree] : root) {
    if (name == "train") {
      spec.train = read_train(name, tree);
    } else if (name.rfind("train:", 0) == 0) {
      DivergenceKind kind;
      try {
        kind = parse_divergence_kind(trim(name.substr(6)));
      } catch (const ValidationError& e) {
        map.fail(name, "", e.what());
      }
      spec.train_by_divergence[kind] = read_train(name, tree);
    } else if (name != "experiment" && name != "base" && name != "policy" && name != "target" &&
               name.rfind("feature:", 0) != 0) {
      map.fail(name, "", "unknown section");
    }
  }
  for (const auto kind : spec.divergences) {
    try {
      spec.config_for(kind, 0).validate();
    } catch (const ValidationError& e) {
      map.fail("train", "", e.what());
    }
  }
  return spec;
}

ExperimentSpec load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config");
  return parse_experiment(in, path.string());
}

const std::vector<BuiltinConfig>& builtin_configs() {
  static const std::vector<BuiltinConfig> configs = {
      {"lexical-gdc", R"([experiment]
name = lexical-gdc
vocab = 8
length = 6
divergences = kl, tv, js
seeds = 0, 1, 2
alignment = b

[feature:b]
kind = contains_token
token = 3

[base]
family = tabular

[target]
kind = gdc_binary
feature = b

[train]
optimizer = adam
adam_eps = 1e-5
learning_rate = 0.1
final_lr_fraction = 0.1
batch_size = 256
steps = 2000
eval_interval = 100

[train:tv]
learning_rate = 0.07
)"},
      {"lexical-rlkl", R"([experiment]
name = lexical-rlkl
vocab = 8
length = 6
divergences = kl, rkl, tv, js
seeds = 0, 1, 2
alignment = b

[feature:b]
kind = contains_token
token = 3

[base]
family = ngram
order = 2

[target]
kind = rlkl
feature = b
beta = 0.1

[train]
optimizer = adam
adam_eps = 1e-5
learning_rate = 0.05
final_lr_fraction = 0.1
batch_size = 256
steps = 2000
eval_interval = 100
)"},
      {"dist-balance", R"([experiment]
name = dist-balance
vocab = 8
length = 6
divergences = js, kl, tv
seeds = 0, 1, 2
alignment = more_ones

[feature:more_ones]
kind = majority_of_pair
first = 1
second = 2

[feature:has_three]
kind = contains_token
token = 3

[base]
family = tabular

[target]
kind = gdc_dist
moments = more_ones:0.5, has_three:1.0
fit_tol = 1e-7

[train]
optimizer = adam
adam_eps = 1e-5
learning_rate = 0.1
final_lr_fraction = 0.1
batch_size = 256
steps = 2000
eval_interval = 100
)"},
      {"scalar-choice", R"([experiment]
name = scalar-choice
vocab = 8
length = 6
divergences = kl, rkl, js
seeds = 0, 1, 2

[feature:phi]
kind = count_fraction
token = 3

[base]
family = ngram
order = 2

[target]
kind = choice_rlkl
feature = phi
beta = 0.1

[train]
optimizer = adam
adam_eps = 1e-5
learning_rate = 0.05
final_lr_fraction = 0.1
batch_size = 256
steps = 2000
eval_interval = 100
)"},
      {"conditional-echo", R"([experiment]
name = conditional-echo
vocab = 8
length = 6
divergences = kl, tv, js
seeds = 0, 1, 2

[feature:echo]
kind = prefix_match

[base]
family = ngram
order = 3

[target]
kind = conditional
feature = echo
contexts = 0, 1, 2, 3

[train]
optimizer = adam
adam_eps = 1e-5
learning_rate = 0.05
final_lr_fraction = 0.1
batch_size = 256
steps = 2000
eval_interval = 100
contexts_per_step = 4
)"},
  };
  return configs;
}

std::vector<ExperimentSpec> builtin_experiments() {
  std::vector<ExperimentSpec> out;
  for (const auto& c : builtin_configs()) {
    std::istringstream in(c.text);
    out.push_back(parse_experiment(in, "builtin:" + c.name));
  }
  return out;
}

ExperimentSpec builtin_experiment(const std::string& name) {
  for (const auto& c : builtin_configs()) {
    if (c.name == name) {
      std::istringstream in(c.text);
      return parse_experiment(in, "builtin:" + c.name);
    }
  }
  throw ConfigError("unknown builtin experiment '" + name + "'");
}

namespace {

std::shared_ptr<SequencePolicy> make_uniform(const Space& space, const PolicySpec& spec) {
  if (spec.family == PolicyKind::Tabular) return std::make_shared<TabularPolicy>(space);
  return std::make_shared<NGramPolicy>(space, spec.order);
}

}  // namespace

Experiment build_experiment(const ExperimentSpec& spec) {
  Experiment e;
  e.spec = spec;
  e.base = make_uniform(spec.space, spec.base);
  std::shared_ptr<SequencePolicy> initial = make_uniform(spec.space, spec.policy);
  if (spec.policy.family == spec.base.family && spec.policy.order == spec.base.order) {
    initial->set_params(e.base->params());
  } else {
    warm_start(*initial, e.base);
  }
  e.initial = initial->clone();
  if (!spec.alignment.empty()) e.alignment = spec.feature(spec.alignment).to_feature(spec.space);

  const TargetSpec& t = spec.target;
  switch (t.kind) {
    case TargetSpecKind::GdcBinary:
      e.target = gdc_binary_target(e.base, spec.feature(t.feature).to_feature(spec.space));
      break;
    case TargetSpecKind::Rlkl:
      e.target = rlkl_target(e.base, spec.feature(t.feature).to_feature(spec.space), t.beta);
      break;
    case TargetSpecKind::ChoiceRlkl:
      e.target = rlkl_target(
          e.base, reward_from_choice_model(spec.feature(t.feature).to_feature(spec.space)), t.beta);
      break;
    case TargetSpecKind::GdcDist: {
      std::vector<MomentSpec> moments;
      for (const auto& [name, desired] : t.moments) {
        moments.push_back({spec.feature(name).to_feature(spec.space), desired});
      }
      e.lambda = fit_lambda(*e.base, moments, t.fit_tol);
      std::vector<std::pair<FeatureFn, double>> lambdas;
      for (std::size_t i = 0; i < moments.size(); ++i) {
        lambdas.emplace_back(moments[i].feature, e.lambda[i]);
      }
      e.target = gdc_dist_target(e.base, lambdas);
      break;
    }
    case TargetSpecKind::Conditional: {
      ConditionalTask task;
      task.contexts = t.contexts;
      task.context_dist = FiniteDistribution::uniform(t.contexts.size());
      task.constraint = [](std::span<const Token> x, std::span<const Token> c) {
        return x.size() >= c.size() && std::equal(c.begin(), c.end(), x.begin());
      };
      for (const auto& c : task.contexts) {
        e.targets.push_back(conditional_target(e.base, task, c));
        if (e.targets.back().has_table()) exact_log_partition(e.targets.back());
      }
      e.task = std::move(task);
      break;
    }
  }
  if (e.target && e.target->has_table()) exact_log_partition(*e.target);
  return e;
}

CellResult run_cell(const Experiment& experiment, DivergenceKind kind, std::uint64_t seed,
                    const RunOverrides& overrides) {
  TrainConfig config = experiment.spec.config_for(kind, seed);
  if (overrides.steps) config.steps = *overrides.steps;
  if (overrides.exact_z) config.z_mode = *overrides.exact_z ? ZMode::Exact : ZMode::Estimated;
  config.threads = overrides.threads;

  CellResult cell;
  cell.header = {experiment.spec.name, kind, seed, config.steps, config.eval_interval};
  const Generator g = make_generator(kind);
  TrainResult result;
  if (experiment.conditional()) {
    result = train_conditional(config, *experiment.initial, *experiment.task, experiment.targets, g);
  } else {
    TrainOptions options;
    if (experiment.alignment) options.alignment = &*experiment.alignment;
    result = train(config, *experiment.initial, *experiment.target, g, options);
  }
  cell.record = std::move(result.record);
  cell.policy = std::move(result.policy);
  return cell;
}

namespace {

nlohmann::json ext(const ExtendedReal& v) {
  if (v.is_infinite()) return "inf";
  return v.value();
}

nlohmann::json opt(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

}  // namespace

void write_metrics_jsonl(std::ostream& out, const RunHeader& h, const RunRecord& record) {
  nlohmann::ordered_json header;
  header["type"] = "header";
  header["experiment"] = h.experiment;
  header["divergence"] = std::string(short_name(h.divergence));
  header["seed"] = h.seed;
  header["steps"] = h.steps;
  header["eval_interval"] = h.eval_interval;
  header["z_source"] = record.z_source;
  out << header.dump() << '\n';
  for (const auto& r : record.rows) {
    nlohmann::ordered_json row;
    row["type"] = "metrics";
    row["step"] = r.step;
    row["forward_kl"] = ext(r.forward_kl);
    row["reverse_kl"] = ext(r.reverse_kl);
    row["total_variation"] = ext(r.total_variation);
    row["jensen_shannon"] = ext(r.jensen_shannon);
    row["divergences_exact"] = r.divergences_exact;
    row["kl_from_base"] = ext(r.kl_from_base);
    row["alignment"] = opt(r.alignment);
    row["entropy"] = r.entropy;
    row["reward_mean"] = opt(r.reward_mean);
    row["reward_std"] = opt(r.reward_std);
    row["z_hat"] = opt(r.z_hat);
    row["z_exact"] = opt(r.z_exact);
    out << row.dump() << '\n';
  }
  if (record.abort) {
    nlohmann::ordered_json row;
    row["type"] = "abort";
    row["step"] = record.abort->step;
    row["message"] = record.abort->message;
    out << row.dump() << '\n';
  }
}

void write_summary_csv(std::ostream& out, const RunHeader& h, const RunRecord& record) {
  out << "experiment,divergence,seed,steps,final_step,forward_kl,reverse_kl,total_variation,"
         "jensen_shannon,kl_from_base,alignment,entropy,initial_forward_kl,initial_alignment,"
         "aborted,abort_step\n";
  auto cell = [](const std::optional<double>& v) { return v ? nlohmann::json(*v).dump() : ""; };
  auto extcell = [](const ExtendedReal& v) { return ext(v).is_string() ? "inf" : ext(v).dump(); };
  out << h.experiment << ',' << short_name(h.divergence) << ',' << h.seed << ',' << h.steps << ',';
  if (record.rows.empty()) {
    out << ",,,,,,,,,,";
  } else {
    const MetricsRow& last = record.rows.back();
    const MetricsRow& first = record.rows.front();
    out << last.step << ',' << extcell(last.forward_kl) << ',' << extcell(last.reverse_kl) << ','
        << extcell(last.total_variation) << ',' << extcell(last.jensen_shannon) << ','
        << extcell(last.kl_from_base) << ',' << cell(last.alignment) << ','
        << nlohmann::json(last.entropy).dump() << ',' << extcell(first.forward_kl) << ','
        << cell(first.alignment);
  }
  out << ',' << (record.abort ? "true" : "false") << ','
      << (record.abort ? std::to_string(record.abort->step) : "") << '\n';
}

std::filesystem::path write_cell(const std::filesystem::path& root, const CellResult& cell) {
  const auto dir = root / cell.header.experiment / std::string(short_name(cell.header.divergence)) /
                   std::to_string(cell.header.seed);
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "metrics.jsonl", std::ios::binary);
    write_metrics_jsonl(out, cell.header, cell.record);
  }
  {
    std::ofstream out(dir / "summary.csv", std::ios::binary);
    write_summary_csv(out, cell.header, cell.record);
  }
  if (cell.policy) {
    std::ofstream out(dir / "policy.ckpt", std::ios::binary);
    write_checkpoint(out, *cell.policy);
  }
  return dir;
}

}  // namespace fdpg
