#include "fdpg/policy.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "fdpg/errors.hpp"
#include "fdpg/numeric.hpp"

namespace fdpg {

namespace {

std::uint64_t saturating_pow(std::uint64_t base, int exponent) {
  std::uint64_t r = 1;
  for (int i = 0; i < exponent; ++i) {
    if (r > std::numeric_limits<std::uint64_t>::max() / base) {
      return std::numeric_limits<std::uint64_t>::max();
    }
    r *= base;
  }
  return r;
}

// Index of the first cdf entry strictly greater than u, clamped to the last index.
std::size_t draw_from_cdf(std::span<const double> cdf, double u) {
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  const auto idx = static_cast<std::size_t>(it - cdf.begin());
  return std::min(idx, cdf.size() - 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// Space

Space::Space(int vocab, int length) : vocab_(vocab), length_(length) {
  if (vocab < 1) throw ValidationError("vocabulary size must be >= 1");
  if (length < 1) throw ValidationError("sequence length must be >= 1");
  size_ = saturating_pow(static_cast<std::uint64_t>(vocab), length);
}

void Space::require_enumerable(std::uint64_t cap) const {
  if (!enumerable(cap)) {
    throw CapacityError("sequence space " + std::to_string(vocab_) + "^" +
                        std::to_string(length_) + " exceeds the enumeration cap of " +
                        std::to_string(cap));
  }
}

std::size_t Space::index_of(std::span<const Token> x) const {
  std::size_t idx = 0;
  for (Token t : x) idx = idx * static_cast<std::size_t>(vocab_) + t;
  return idx;
}

void Space::decode(std::size_t index, std::span<Token> out) const {
  for (int pos = length_ - 1; pos >= 0; --pos) {
    out[static_cast<std::size_t>(pos)] = static_cast<Token>(index % static_cast<std::size_t>(vocab_));
    index /= static_cast<std::size_t>(vocab_);
  }
}

Sequence Space::decode(std::size_t index) const {
  Sequence x(static_cast<std::size_t>(length_));
  decode(index, x);
  return x;
}

void Space::validate(std::span<const Token> x) const {
  if (x.size() != static_cast<std::size_t>(length_)) {
    throw ValidationError("sequence has length " + std::to_string(x.size()) + ", expected " +
                          std::to_string(length_));
  }
  for (Token t : x) {
    if (t >= static_cast<Token>(vocab_)) {
      throw ValidationError("token " + std::to_string(t) + " out of range for vocabulary of " +
                            std::to_string(vocab_));
    }
  }
}

SpaceEnumerator::SpaceEnumerator(const Space& space, std::uint64_t cap) : space_(space) {
  space_.require_enumerable(cap);
}

SpaceEnumerator::Iterator::Iterator(const Space& space, std::size_t index)
    : space_(space), index_(index), current_(static_cast<std::size_t>(space.length()), 0) {
  if (index_ < space_.size()) space_.decode(index_, current_);
}

SpaceEnumerator::Iterator& SpaceEnumerator::Iterator::operator++() {
  ++index_;
  // Odometer increment, least significant digit last.
  for (auto pos = current_.size(); pos-- > 0;) {
    if (++current_[pos] < static_cast<Token>(space_.vocab())) break;
    current_[pos] = 0;
  }
  return *this;
}

SpaceEnumerator enumerate_space(const Space& space, std::uint64_t cap) {
  return SpaceEnumerator(space, cap);
}

std::vector<double> SparseGradient::densify(std::size_t num_params) const {
  std::vector<double> dense(num_params, 0.0);
  for (const auto& [i, v] : entries) dense.at(i) += v;
  return dense;
}

void SequencePolicy::validate_params_size(std::span<const double> values) const {
  if (values.size() != num_params()) {
    throw ValidationError("expected " + std::to_string(num_params()) + " parameters, got " +
                          std::to_string(values.size()));
  }
}

// ---------------------------------------------------------------------------
// TabularPolicy

TabularPolicy::TabularPolicy(Space space)
    : TabularPolicy(space, std::vector<double>(static_cast<std::size_t>(space.size()), 0.0)) {}

TabularPolicy::TabularPolicy(Space space, std::vector<double> logits)
    : SequencePolicy(space), logits_(std::move(logits)) {
  space.require_enumerable();
  if (logits_.size() != space.size()) {
    throw ValidationError("tabular policy needs one logit per sequence");
  }
  refresh();
}

std::unique_ptr<SequencePolicy> TabularPolicy::clone() const {
  return std::make_unique<TabularPolicy>(*this);
}

void TabularPolicy::set_params(std::span<const double> values) {
  validate_params_size(values);
  std::copy(values.begin(), values.end(), logits_.begin());
  refresh();
}

void TabularPolicy::refresh() {
  log_z_ = log_sum_exp(logits_);
  probs_.resize(logits_.size());
  cdf_.resize(logits_.size());
  double running = 0.0;
  for (std::size_t i = 0; i < logits_.size(); ++i) {
    probs_[i] = std::exp(logits_[i] - log_z_);
    running += probs_[i];
    cdf_[i] = running;
  }
  for (double& c : cdf_) c /= running;
  cdf_.back() = 1.0;
}

void TabularPolicy::require_no_prefix(std::span<const Token> prefix) const {
  if (!prefix.empty()) throw ValidationError("tabular policies cannot be conditioned on a prefix");
}

double TabularPolicy::log_prob(std::span<const Token> x, std::span<const Token> prefix) const {
  require_no_prefix(prefix);
  space().validate(x);
  return logits_[space().index_of(x)] - log_z_;
}

SparseGradient TabularPolicy::grad_log_prob(std::span<const Token> x,
                                            std::span<const Token> prefix) const {
  require_no_prefix(prefix);
  space().validate(x);
  const std::size_t idx = space().index_of(x);
  SparseGradient g;
  g.entries.reserve(probs_.size());
  for (std::size_t j = 0; j < probs_.size(); ++j) {
    g.entries.emplace_back(j, (j == idx ? 1.0 : 0.0) - probs_[j]);
  }
  return g;
}

Sequence TabularPolicy::sample_one(CounterStream& stream, std::span<const Token> prefix) const {
  require_no_prefix(prefix);
  return space().decode(draw_from_cdf(cdf_, stream.uniform()));
}

std::vector<double> TabularPolicy::log_prob_table(std::span<const Token> prefix) const {
  require_no_prefix(prefix);
  std::vector<double> out(logits_.size());
  for (std::size_t i = 0; i < logits_.size(); ++i) out[i] = logits_[i] - log_z_;
  return out;
}

void TabularPolicy::add_scores(std::span<const Sequence> xs, std::span<const double> coeffs,
                               std::span<const Token> prefix, std::span<double> out) const {
  require_no_prefix(prefix);
  CompensatedSum total;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[space().index_of(xs[i])] += coeffs[i];
    total.add(coeffs[i]);
  }
  const double c = total.value();
  for (std::size_t j = 0; j < out.size(); ++j) out[j] -= probs_[j] * c;
}

void TabularPolicy::add_scores_all(std::span<const double> coeffs, std::span<const Token> prefix,
                                   std::span<double> out) const {
  require_no_prefix(prefix);
  const double c = compensated_sum(coeffs);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += coeffs[j] - probs_[j] * c;
}

// ---------------------------------------------------------------------------
// NGramPolicy

NGramPolicy::NGramPolicy(Space space, int order)
    : NGramPolicy(space, order, {}) {}

NGramPolicy::NGramPolicy(Space space, int order, std::vector<double> logits)
    : SequencePolicy(space), order_(order) {
  if (order < 1) throw ValidationError("n-gram order must be >= 1");
  num_rows_ = static_cast<std::size_t>(
      saturating_pow(static_cast<std::uint64_t>(space.vocab()) + 1, order - 1));
  const std::size_t n = num_rows_ * static_cast<std::size_t>(space.vocab());
  if (logits.empty()) logits.assign(n, 0.0);
  if (logits.size() != n) throw ValidationError("n-gram policy has the wrong number of logits");
  logits_ = std::move(logits);
  refresh();
}

std::unique_ptr<SequencePolicy> NGramPolicy::clone() const {
  return std::make_unique<NGramPolicy>(*this);
}

void NGramPolicy::set_params(std::span<const double> values) {
  validate_params_size(values);
  std::copy(values.begin(), values.end(), logits_.begin());
  refresh();
}

void NGramPolicy::refresh() {
  const auto v = static_cast<std::size_t>(space().vocab());
  log_softmax_.resize(logits_.size());
  cdf_.resize(logits_.size());
  for (std::size_t r = 0; r < num_rows_; ++r) {
    std::span<const double> row(logits_.data() + r * v, v);
    const double lse = log_sum_exp(row);
    double running = 0.0;
    for (std::size_t u = 0; u < v; ++u) {
      log_softmax_[r * v + u] = row[u] - lse;
      running += std::exp(row[u] - lse);
      cdf_[r * v + u] = running;
    }
    for (std::size_t u = 0; u < v; ++u) cdf_[r * v + u] /= running;
    cdf_[r * v + v - 1] = 1.0;
  }
}

std::span<const double> NGramPolicy::row_log_softmax(std::size_t row) const {
  const auto v = static_cast<std::size_t>(space().vocab());
  return {log_softmax_.data() + row * v, v};
}

std::vector<std::size_t> NGramPolicy::rows_for(std::span<const Token> x,
                                               std::span<const Token> prefix) const {
  const auto h = static_cast<std::size_t>(order_ - 1);
  const std::size_t base = static_cast<std::size_t>(space().vocab()) + 1;
  for (Token t : prefix) {
    if (t >= static_cast<Token>(space().vocab())) throw ValidationError("prefix token out of range");
  }
  // history buffer = [BOS]*h ++ prefix ++ x
  std::vector<Token> buf(h, bos());
  buf.insert(buf.end(), prefix.begin(), prefix.end());
  buf.insert(buf.end(), x.begin(), x.end());
  std::vector<std::size_t> rows(x.size());
  const std::size_t offset = prefix.size();
  for (std::size_t t = 0; t < x.size(); ++t) {
    std::size_t row = 0;
    for (std::size_t k = 0; k < h; ++k) row = row * base + buf[offset + t + k];
    rows[t] = row;
  }
  return rows;
}

double NGramPolicy::log_prob(std::span<const Token> x, std::span<const Token> prefix) const {
  space().validate(x);
  const auto v = static_cast<std::size_t>(space().vocab());
  const auto rows = rows_for(x, prefix);
  double lp = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) lp += log_softmax_[rows[t] * v + x[t]];
  return lp;
}

SparseGradient NGramPolicy::grad_log_prob(std::span<const Token> x,
                                          std::span<const Token> prefix) const {
  space().validate(x);
  const auto v = static_cast<std::size_t>(space().vocab());
  const auto rows = rows_for(x, prefix);
  std::vector<std::pair<std::size_t, double>> raw;
  raw.reserve(rows.size() * v);
  for (std::size_t t = 0; t < x.size(); ++t) {
    for (std::size_t u = 0; u < v; ++u) {
      const double p = std::exp(log_softmax_[rows[t] * v + u]);
      raw.emplace_back(rows[t] * v + u, (u == x[t] ? 1.0 : 0.0) - p);
    }
  }
  std::stable_sort(raw.begin(), raw.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  SparseGradient g;
  for (const auto& e : raw) {
    if (!g.entries.empty() && g.entries.back().first == e.first) {
      g.entries.back().second += e.second;
    } else {
      g.entries.push_back(e);
    }
  }
  return g;
}

Sequence NGramPolicy::sample_one(CounterStream& stream, std::span<const Token> prefix) const {
  const auto v = static_cast<std::size_t>(space().vocab());
  const auto h = static_cast<std::size_t>(order_ - 1);
  const std::size_t base = v + 1;
  std::vector<Token> buf(h, bos());
  buf.insert(buf.end(), prefix.begin(), prefix.end());
  const std::size_t offset = prefix.size();
  Sequence x(static_cast<std::size_t>(space().length()));
  for (std::size_t t = 0; t < x.size(); ++t) {
    std::size_t row = 0;
    for (std::size_t k = 0; k < h; ++k) row = row * base + buf[offset + t + k];
    const auto tok = static_cast<Token>(
        draw_from_cdf(std::span<const double>(cdf_.data() + row * v, v), stream.uniform()));
    x[t] = tok;
    buf.push_back(tok);
  }
  return x;
}

std::vector<double> NGramPolicy::log_prob_table(std::span<const Token> prefix) const {
  std::vector<double> out(static_cast<std::size_t>(space().size()));
  for (auto it = enumerate_space(space()).begin(); it.index() < out.size(); ++it) {
    out[it.index()] = log_prob(*it, prefix);
  }
  return out;
}

void NGramPolicy::add_row_score(std::size_t row, Token chosen, double coeff,
                                std::span<double> out) const {
  const auto v = static_cast<std::size_t>(space().vocab());
  for (std::size_t u = 0; u < v; ++u) {
    const double p = std::exp(log_softmax_[row * v + u]);
    out[row * v + u] += coeff * ((u == chosen ? 1.0 : 0.0) - p);
  }
}

void NGramPolicy::add_scores(std::span<const Sequence> xs, std::span<const double> coeffs,
                             std::span<const Token> prefix, std::span<double> out) const {
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (coeffs[i] == 0.0) continue;
    const auto rows = rows_for(xs[i], prefix);
    for (std::size_t t = 0; t < rows.size(); ++t) add_row_score(rows[t], xs[i][t], coeffs[i], out);
  }
}

void NGramPolicy::add_scores_all(std::span<const double> coeffs, std::span<const Token> prefix,
                                 std::span<double> out) const {
  // Accumulate per-(row, token) coefficient mass first, then expand each row once.
  const auto v = static_cast<std::size_t>(space().vocab());
  std::vector<double> chosen(logits_.size(), 0.0);
  std::vector<double> row_total(num_rows_, 0.0);
  for (auto it = enumerate_space(space()).begin(); it.index() < coeffs.size(); ++it) {
    const double c = coeffs[it.index()];
    if (c == 0.0) continue;
    const auto rows = rows_for(*it, prefix);
    for (std::size_t t = 0; t < rows.size(); ++t) {
      chosen[rows[t] * v + (*it)[t]] += c;
      row_total[rows[t]] += c;
    }
  }
  for (std::size_t r = 0; r < num_rows_; ++r) {
    if (row_total[r] == 0.0) continue;
    for (std::size_t u = 0; u < v; ++u) {
      const double p = std::exp(log_softmax_[r * v + u]);
      out[r * v + u] += chosen[r * v + u] - p * row_total[r];
    }
  }
}

// ---------------------------------------------------------------------------
// Free functions

std::vector<Sequence> sample(const SequencePolicy& policy, const SampleStreams& streams,
                             std::size_t count, std::span<const Token> prefix, int threads,
                             std::uint64_t first_index) {
  std::vector<Sequence> out(count);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      CounterStream stream(streams.seed, streams.domain, streams.step, first_index + i);
      out[i] = policy.sample_one(stream, prefix);
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::max(1, threads));
  if (n_threads == 1 || count < 2 * n_threads) {
    work(0, count);
    return out;
  }
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (count + n_threads - 1) / n_threads;
    for (std::size_t b = 0; b < count; b += chunk) {
      pool.emplace_back(work, b, std::min(count, b + chunk));
    }
  }
  return out;
}

FiniteDistribution exact_distribution(const SequencePolicy& policy, std::span<const Token> prefix,
                                      std::uint64_t cap) {
  policy.space().require_enumerable(cap);
  auto table = policy.log_prob_table(prefix);
  for (double& v : table) v = std::exp(v);
  return FiniteDistribution(std::move(table));
}

double normalized_entropy(std::span<const Sequence> samples, const SequencePolicy& policy,
                          std::span<const Token> prefix) {
  if (samples.empty()) throw ValidationError("normalized_entropy needs at least one sample");
  CompensatedSum s;
  for (const auto& x : samples) s.add(-policy.log_prob(x, prefix));
  return s.value() / (static_cast<double>(samples.size()) * policy.space().length());
}

double exact_normalized_entropy(const SequencePolicy& policy, std::span<const Token> prefix,
                                std::uint64_t cap) {
  policy.space().require_enumerable(cap);
  const auto table = policy.log_prob_table(prefix);
  CompensatedSum s;
  for (double lp : table) s.add(-std::exp(lp) * lp);
  return s.value() / policy.space().length();
}

double distinct_n(std::span<const Sequence> samples, int n) {
  if (samples.empty()) throw ValidationError("distinct_n needs at least one sample");
  if (n < 1) throw ValidationError("distinct_n: n must be >= 1");
  CompensatedSum total;
  for (const auto& x : samples) {
    if (static_cast<std::size_t>(n) > x.size()) {
      throw ValidationError("distinct_n: n = " + std::to_string(n) + " exceeds sequence length " +
                            std::to_string(x.size()));
    }
    std::set<std::vector<Token>> grams;
    const std::size_t windows = x.size() - static_cast<std::size_t>(n) + 1;
    for (std::size_t i = 0; i < windows; ++i) {
      grams.emplace(x.begin() + static_cast<std::ptrdiff_t>(i),
                    x.begin() + static_cast<std::ptrdiff_t>(i) + n);
    }
    total.add(static_cast<double>(grams.size()) / static_cast<double>(windows));
  }
  return total.value() / static_cast<double>(samples.size());
}

void write_checkpoint(std::ostream& out, const SequencePolicy& policy) {
  const int order =
      policy.kind() == PolicyKind::NGram ? static_cast<const NGramPolicy&>(policy).order() : 1;
  out << "fdpg-policy 1\n"
      << "kind " << (policy.kind() == PolicyKind::Tabular ? "tabular" : "ngram") << '\n'
      << "vocab " << policy.space().vocab() << '\n'
      << "length " << policy.space().length() << '\n'
      << "order " << order << '\n'
      << "params " << policy.num_params() << '\n';
  out << std::setprecision(17);
  for (double v : policy.params()) out << v << '\n';
}

std::unique_ptr<SequencePolicy> read_checkpoint(std::istream& in) {
  auto expect = [&](const char* key) {
    std::string k;
    if (!(in >> k) || k != key) {
      throw ValidationError(std::string("checkpoint: expected field '") + key + "'");
    }
  };
  expect("fdpg-policy");
  int version = 0;
  in >> version;
  if (version != 1) throw ValidationError("checkpoint: unsupported version");
  std::string kind;
  int vocab = 0, length = 0, order = 0;
  std::size_t count = 0;
  expect("kind");
  in >> kind;
  expect("vocab");
  in >> vocab;
  expect("length");
  in >> length;
  expect("order");
  in >> order;
  expect("params");
  in >> count;
  std::vector<double> params(count);
  for (double& v : params) {
    std::string token;
    if (!(in >> token)) throw ValidationError("checkpoint: truncated parameter list");
    v = std::stod(token);
  }
  const Space space(vocab, length);
  if (kind == "tabular") return std::make_unique<TabularPolicy>(space, std::move(params));
  if (kind == "ngram") return std::make_unique<NGramPolicy>(space, order, std::move(params));
  throw ValidationError("checkpoint: unknown policy kind '" + kind + "'");
}

}  // namespace fdpg
