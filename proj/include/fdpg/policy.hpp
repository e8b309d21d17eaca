#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "fdpg/divergence.hpp"
#include "fdpg/rng.hpp"

namespace fdpg {

using Token = std::uint32_t;
// Fixed-length token sequence; the length always equals the space's L.
using Sequence = std::vector<Token>;

inline constexpr std::uint64_t kDefaultEnumerationCap = std::uint64_t{1} << 20;

// The finite set of all length-L sequences over a vocabulary of size V,
// indexed lexicographically (token 0 of the sequence is the most significant digit).
class Space {
 public:
  Space(int vocab, int length);

  int vocab() const { return vocab_; }
  int length() const { return length_; }
  // V^L, saturating at UINT64_MAX.
  std::uint64_t size() const { return size_; }
  bool enumerable(std::uint64_t cap = kDefaultEnumerationCap) const { return size_ <= cap; }
  // Throws CapacityError when V^L exceeds cap.
  void require_enumerable(std::uint64_t cap = kDefaultEnumerationCap) const;

  std::size_t index_of(std::span<const Token> x) const;
  void decode(std::size_t index, std::span<Token> out) const;
  Sequence decode(std::size_t index) const;
  // Throws ValidationError on wrong length or out-of-range tokens.
  void validate(std::span<const Token> x) const;

  friend bool operator==(const Space&, const Space&) = default;

 private:
  int vocab_;
  int length_;
  std::uint64_t size_;
};

// Every sequence of the space exactly once, in index order.
class SpaceEnumerator {
 public:
  explicit SpaceEnumerator(const Space& space, std::uint64_t cap = kDefaultEnumerationCap);

  class Iterator {
   public:
    using value_type = Sequence;
    using difference_type = std::ptrdiff_t;
    Iterator(const Space& space, std::size_t index);
    const Sequence& operator*() const { return current_; }
    Iterator& operator++();
    bool operator==(const Iterator& o) const { return index_ == o.index_; }
    std::size_t index() const { return index_; }

   private:
    Space space_;
    std::size_t index_;
    Sequence current_;
  };

  Iterator begin() const { return Iterator(space_, 0); }
  Iterator end() const { return Iterator(space_, static_cast<std::size_t>(space_.size())); }

 private:
  Space space_;
};

SpaceEnumerator enumerate_space(const Space& space, std::uint64_t cap = kDefaultEnumerationCap);

// Sorted (parameter index, value) pairs without duplicates.
struct SparseGradient {
  std::vector<std::pair<std::size_t, double>> entries;

  std::vector<double> densify(std::size_t num_params) const;
};

enum class PolicyKind { Tabular, NGram };

// A full-support softmax distribution over the sequences of a Space.
//
// Conditioning: every query takes an optional context prefix. N-gram policies
// read it as the tokens preceding the sequence; tabular policies accept only
// the empty prefix.
class SequencePolicy {
 public:
  explicit SequencePolicy(Space space) : space_(space) {}
  virtual ~SequencePolicy() = default;

  const Space& space() const { return space_; }
  virtual PolicyKind kind() const = 0;
  virtual std::unique_ptr<SequencePolicy> clone() const = 0;

  virtual std::span<const double> params() const = 0;
  std::size_t num_params() const { return params().size(); }
  // Replaces all parameters; refreshes cached normalizers.
  virtual void set_params(std::span<const double> values) = 0;

  virtual double log_prob(std::span<const Token> x, std::span<const Token> prefix = {}) const = 0;
  virtual SparseGradient grad_log_prob(std::span<const Token> x,
                                       std::span<const Token> prefix = {}) const = 0;
  virtual Sequence sample_one(CounterStream& stream, std::span<const Token> prefix = {}) const = 0;

  // log pi(x) for every x, in index order.
  virtual std::vector<double> log_prob_table(std::span<const Token> prefix = {}) const = 0;

  // out += sum_i coeffs[i] * grad log pi(xs[i]).
  virtual void add_scores(std::span<const Sequence> xs, std::span<const double> coeffs,
                          std::span<const Token> prefix, std::span<double> out) const = 0;
  // out += sum_x coeffs[index(x)] * grad log pi(x) over the whole space.
  virtual void add_scores_all(std::span<const double> coeffs, std::span<const Token> prefix,
                              std::span<double> out) const = 0;

 protected:
  void validate_params_size(std::span<const double> values) const;

 private:
  Space space_;
};

// One logit per sequence: pi = softmax(logits). Contains every distribution
// with full support.
class TabularPolicy final : public SequencePolicy {
 public:
  explicit TabularPolicy(Space space);
  TabularPolicy(Space space, std::vector<double> logits);

  PolicyKind kind() const override { return PolicyKind::Tabular; }
  std::unique_ptr<SequencePolicy> clone() const override;
  std::span<const double> params() const override { return logits_; }
  void set_params(std::span<const double> values) override;

  double log_prob(std::span<const Token> x, std::span<const Token> prefix = {}) const override;
  SparseGradient grad_log_prob(std::span<const Token> x,
                               std::span<const Token> prefix = {}) const override;
  Sequence sample_one(CounterStream& stream, std::span<const Token> prefix = {}) const override;
  std::vector<double> log_prob_table(std::span<const Token> prefix = {}) const override;
  void add_scores(std::span<const Sequence> xs, std::span<const double> coeffs,
                  std::span<const Token> prefix, std::span<double> out) const override;
  void add_scores_all(std::span<const double> coeffs, std::span<const Token> prefix,
                      std::span<double> out) const override;

  std::span<const double> probabilities() const { return probs_; }

 private:
  void refresh();
  void require_no_prefix(std::span<const Token> prefix) const;

  std::vector<double> logits_;
  double log_z_ = 0.0;
  std::vector<double> probs_;
  std::vector<double> cdf_;
};

// Autoregressive model of order n: token t is drawn from softmax(row(h_t)),
// where h_t holds the n-1 preceding tokens of [BOS..BOS, prefix, x_0..x_{t-1}].
// Histories range over V+1 symbols (BOS = V), so there are (V+1)^(n-1) rows
// of V logits.
class NGramPolicy final : public SequencePolicy {
 public:
  NGramPolicy(Space space, int order);
  NGramPolicy(Space space, int order, std::vector<double> logits);

  PolicyKind kind() const override { return PolicyKind::NGram; }
  std::unique_ptr<SequencePolicy> clone() const override;
  std::span<const double> params() const override { return logits_; }
  void set_params(std::span<const double> values) override;

  double log_prob(std::span<const Token> x, std::span<const Token> prefix = {}) const override;
  SparseGradient grad_log_prob(std::span<const Token> x,
                               std::span<const Token> prefix = {}) const override;
  Sequence sample_one(CounterStream& stream, std::span<const Token> prefix = {}) const override;
  std::vector<double> log_prob_table(std::span<const Token> prefix = {}) const override;
  void add_scores(std::span<const Sequence> xs, std::span<const double> coeffs,
                  std::span<const Token> prefix, std::span<double> out) const override;
  void add_scores_all(std::span<const double> coeffs, std::span<const Token> prefix,
                      std::span<double> out) const override;

  int order() const { return order_; }
  std::size_t num_rows() const { return num_rows_; }
  Token bos() const { return static_cast<Token>(space().vocab()); }
  // Row used at each position of x.
  std::vector<std::size_t> rows_for(std::span<const Token> x, std::span<const Token> prefix) const;
  std::span<const double> row_log_softmax(std::size_t row) const;

 private:
  void refresh();
  void add_row_score(std::size_t row, Token chosen, double coeff, std::span<double> out) const;

  int order_;
  std::size_t num_rows_;
  std::vector<double> logits_;
  std::vector<double> log_softmax_;
  std::vector<double> cdf_;
};

struct SampleStreams {
  std::uint64_t seed = 0;
  StreamDomain domain = StreamDomain::Training;
  std::uint64_t step = 0;
};

// count i.i.d. draws; sample i consumes stream (seed, domain, step, first_index + i),
// so the result does not depend on the number of worker threads.
std::vector<Sequence> sample(const SequencePolicy& policy, const SampleStreams& streams,
                             std::size_t count, std::span<const Token> prefix = {},
                             int threads = 1, std::uint64_t first_index = 0);

FiniteDistribution exact_distribution(const SequencePolicy& policy,
                                      std::span<const Token> prefix = {},
                                      std::uint64_t cap = kDefaultEnumerationCap);

// -(1 / (N L)) sum_i log pi(x_i).
double normalized_entropy(std::span<const Sequence> samples, const SequencePolicy& policy,
                          std::span<const Token> prefix = {});
// sum_x pi(x) (-log pi(x)) / L.
double exact_normalized_entropy(const SequencePolicy& policy, std::span<const Token> prefix = {},
                                std::uint64_t cap = kDefaultEnumerationCap);

// Mean over samples of (#unique n-grams) / (L - n + 1).
double distinct_n(std::span<const Sequence> samples, int n);

// Checkpoint text format:
//   fdpg-policy 1
//   kind tabular|ngram
//   vocab V
//   length L
//   order n            (1 for tabular)
//   params N
//   N lines, one logit each, 17 significant digits
void write_checkpoint(std::ostream& out, const SequencePolicy& policy);
std::unique_ptr<SequencePolicy> read_checkpoint(std::istream& in);

}  // namespace fdpg
