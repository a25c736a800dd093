#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "insitu/field.hpp"

namespace insitu {

/// Elementwise transformation. `argument` is already broadcast to the input dim
/// (unused by functors without arguments).
using FunctorEvaluator = std::function<FieldVector(const FieldVector& input, const FieldVector& argument)>;

struct FunctorDescriptor {
  std::string name;
  /// 0 for functors without a constant argument, otherwise the largest
  /// accepted argument count (1..4).
  int max_args = 0;
  /// Output dim for each input dim 1..4.
  std::function<int(int)> domain_map;
};

/// Functor available to chains, with one evaluator per input dim.
struct FunctorEntry {
  FunctorDescriptor descriptor;
  std::array<FunctorEvaluator, kMaxFeatureDim> evaluators;

  const FunctorEvaluator& for_dim(int dim) const { return evaluators[static_cast<std::size_t>(dim - 1)]; }
};

/// Bounds on chain composition. The combination count is only reported.
struct ChainLimits {
  int max_length = 5;
  int functor_count = 0;

  /// 4 * f^c, saturating at UINT64_MAX.
  std::uint64_t combination_count() const;
};

class FunctorRegistry {
 public:
  /// Registry holding add, mul, length, sum and pow.
  static FunctorRegistry with_builtins(int max_chain_length = 5);

  void register_functor(FunctorDescriptor descriptor, std::array<FunctorEvaluator, kMaxFeatureDim> evaluators);

  std::shared_ptr<const FunctorEntry> find(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }
  const ChainLimits& limits() const { return limits_; }
  void set_max_length(int c);

 private:
  std::vector<std::shared_ptr<const FunctorEntry>> entries_;
  ChainLimits limits_;
};

void register_functor(FunctorRegistry& registry, FunctorDescriptor descriptor,
                      std::array<FunctorEvaluator, kMaxFeatureDim> evaluators);

struct ChainStep {
  std::shared_ptr<const FunctorEntry> functor;
  FieldVector argument;  ///< broadcast to input_dim
  int input_dim = 1;
  int output_dim = 1;

  FieldVector apply(const FieldVector& v) const { return functor->for_dim(input_dim)(v, argument); }
};

/// Parsed, dim-checked pipeline. Immutable after parse.
struct FunctorChain {
  std::vector<ChainStep> steps;
  int input_dim = 1;
  int output_dim = 1;

  static FunctorChain identity(int dim) { return FunctorChain{{}, dim, dim}; }
  bool is_identity() const { return steps.empty(); }
};

/// Grammar: `name [ "(" number {"," number} ")" ] { "|" ... }`, whitespace
/// ignored, empty text is the identity chain. A single constant is broadcast
/// to the current dim.
FunctorChain parse_chain(std::string_view text, const FunctorRegistry& registry, const ChainLimits& limits,
                         int input_dim);

FieldVector eval_chain(const FunctorChain& chain, const FieldVector& value);

/// First component; what classification uses when a chain ends on a vector.
inline float reduce_to_scalar(const FieldVector& value) { return value.c[0]; }

}  // namespace insitu
