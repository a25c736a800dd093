#include <doctest.h>

#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "insitu/errors.hpp"
#include "insitu/functor.hpp"
#include "insitu/raycast.hpp"
#include "test_support.hpp"

using namespace insitu;

namespace {

FieldVector vec(std::initializer_list<float> xs) {
  FieldVector v;
  v.dim = static_cast<int>(xs.size());
  int i = 0;
  for (float x : xs) v[i++] = x;
  return v;
}

FunctorChain parse(std::string_view text, int dim, const FunctorRegistry& reg = FunctorRegistry::with_builtins()) {
  return parse_chain(text, reg, reg.limits(), dim);
}

// Reference semantics written independently of the registry: one step of a
// chain, by name, in float arithmetic and component order.
FieldVector oracle_step(const std::string& name, const std::vector<float>& args, const FieldVector& in) {
  FieldVector out;
  out.dim = in.dim;
  const auto arg = [&](int i) { return args.size() == 1 ? args[0] : args[static_cast<std::size_t>(i)]; };
  if (name == "add") {
    for (int i = 0; i < in.dim; ++i) out[i] = in[i] + arg(i);
  } else if (name == "mul") {
    for (int i = 0; i < in.dim; ++i) out[i] = in[i] * arg(i);
  } else if (name == "pow") {
    for (int i = 0; i < in.dim; ++i) out[i] = std::pow(in[i], arg(i));
  } else if (name == "length") {
    float s = 0.0f;
    for (int i = 0; i < in.dim; ++i) s += in[i] * in[i];
    out = FieldVector::scalar(std::sqrt(s));
  } else if (name == "sum") {
    float s = 0.0f;
    for (int i = 0; i < in.dim; ++i) s += in[i];
    out = FieldVector::scalar(s);
  }
  return out;
}

bool same_bits(const FieldVector& a, const FieldVector& b) {
  if (a.dim != b.dim) return false;
  for (int i = 0; i < a.dim; ++i) {
    if (std::isnan(a[i]) && std::isnan(b[i])) continue;
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("worked chains") {
  const FunctorChain c1 = parse("mul(2,3,4) | add(1) | length", 3);
  CHECK(c1.steps.size() == 3);
  CHECK(c1.output_dim == 1);
  // (1,1,1) -> (2,3,4) -> (3,4,5) -> sqrt(9 + 16 + 25)
  const FieldVector mid = eval_chain(parse("mul(2,3,4)|add(1)", 3), vec({1, 1, 1}));
  CHECK(mid == vec({3, 4, 5}));
  CHECK(eval_chain(c1, vec({1, 1, 1})) == FieldVector::scalar(std::sqrt(50.0f)));
  // the 3-4-5 norm appears once the third component is dropped
  CHECK(eval_chain(parse("mul(2,3,0) | add(1,1,0) | length", 3), vec({1, 1, 1})) == FieldVector::scalar(5.0f));

  const FunctorChain c2 = parse("mul(0,1,0) | sum", 3);
  CHECK(c2.steps.size() == 2);
  CHECK(c2.output_dim == 1);
  CHECK(eval_chain(c2, vec({7, 9, 2})) == FieldVector::scalar(9.0f));
}

TEST_CASE("empty text is the identity chain") {
  for (int dim = 1; dim <= 4; ++dim) {
    const FunctorChain c = parse("   ", dim);
    CHECK(c.is_identity());
    CHECK(c.output_dim == dim);
  }
  CHECK(eval_chain(parse("", 3), vec({7, 9, 2})) == vec({7, 9, 2}));
}

TEST_CASE("scalar constants broadcast, whitespace is insignificant") {
  const FunctorChain a = parse("add(1)", 3);
  CHECK(a.steps[0].argument == vec({1, 1, 1}));
  const FunctorChain b = parse("  add ( 1 )|length ", 3);
  CHECK(eval_chain(b, vec({0, 0, 0})) == FieldVector::scalar(std::sqrt(3.0f)));
  CHECK(parse("mul(-1.5e0)", 1).steps[0].argument == FieldVector::scalar(-1.5f));
  CHECK(parse("length()", 2).output_dim == 1);
}

TEST_CASE("parse errors") {
  CHECK_THROWS_AS(parse("foo", 1), ParseError);
  CHECK_THROWS_AS(parse("mul(1,2)", 3), ParseError);
  CHECK_THROWS_AS(parse("mul(1,2,3)", 1), ParseError);
  CHECK_THROWS_AS(parse("add", 2), ParseError);
  CHECK_THROWS_AS(parse("length(2)", 2), ParseError);
  CHECK_THROWS_AS(parse("add(1) |", 2), ParseError);
  CHECK_THROWS_AS(parse("add(1) add(2)", 2), ParseError);
  CHECK_THROWS_AS(parse("add(x)", 2), ParseError);
  CHECK_THROWS_AS(parse("add(1", 2), ParseError);
  // after length the value is a scalar, so a 3-vector argument no longer fits
  CHECK_THROWS_AS(parse("length | add(1,2,3)", 3), ParseError);
  CHECK_THROWS_AS(parse("add(1)", 0), ContractError);
}

TEST_CASE("chain length limit") {
  FunctorRegistry reg = FunctorRegistry::with_builtins(3);
  CHECK(parse_chain("add(1)|add(1)|add(1)", reg, reg.limits(), 1).steps.size() == 3);
  CHECK_THROWS_AS(parse_chain("add(1)|add(1)|add(1)|add(1)", reg, reg.limits(), 1), ParseError);
  CHECK(FunctorRegistry::with_builtins().limits().max_length == 5);
}

TEST_CASE("combination count is 4 * f^c") {
  FunctorRegistry reg = FunctorRegistry::with_builtins(3);
  CHECK(reg.limits().functor_count == 5);
  CHECK(reg.limits().combination_count() == 4u * 125u);
  ChainLimits four_three{3, 4};
  CHECK(four_three.combination_count() == 256u);
  ChainLimits huge{200, 50};
  CHECK(huge.combination_count() == std::numeric_limits<std::uint64_t>::max());
}

TEST_CASE("reduce_to_scalar takes the first component") {
  CHECK(reduce_to_scalar(vec({3, 4})) == 3.0f);
  CHECK(reduce_to_scalar(FieldVector::scalar(5)) == 5.0f);
  CHECK(reduce_to_scalar(vec({0, 9, 9, 9})) == 0.0f);
}

TEST_CASE("register_functor") {
  FunctorRegistry reg = FunctorRegistry::with_builtins();
  std::array<FunctorEvaluator, kMaxFeatureDim> sqrt_eval;
  for (auto& e : sqrt_eval) {
    e = [](const FieldVector& v, const FieldVector&) {
      FieldVector r = v;
      for (int i = 0; i < v.dim; ++i) r[i] = std::sqrt(v[i]);
      return r;
    };
  }
  register_functor(reg, {"sqrt", 0, [](int d) { return d; }}, sqrt_eval);
  CHECK(reg.limits().functor_count == 6);
  CHECK(eval_chain(parse_chain("mul(4) | sqrt", reg, reg.limits(), 2), vec({1, 4})) == vec({2, 4}));

  CHECK_THROWS_AS(register_functor(reg, {"add", 4, [](int d) { return d; }}, sqrt_eval), RegistryError);
  auto missing = sqrt_eval;
  missing[2] = nullptr;
  CHECK_THROWS_AS(register_functor(reg, {"half", 0, [](int d) { return d; }}, missing), RegistryError);
  CHECK_THROWS_AS(register_functor(reg, {"bad", 0, [](int) { return 5; }}, sqrt_eval), RegistryError);
  CHECK(reg.limits().functor_count == 6);
}

TEST_CASE("pow of a negative base with a fractional exponent classifies as transparent") {
  const FieldVector v = eval_chain(parse("pow(0.5)", 1), FieldVector::scalar(-4.0f));
  CHECK(std::isnan(v[0]));
  TransferFunction tf;
  tf.lut.fill(Rgba{1, 1, 1, 1});
  CHECK(classify(tf, v[0]) == Rgba{});
}

TEST_CASE("randomized chains match the step-by-step oracle exactly") {
  const FunctorRegistry reg = FunctorRegistry::with_builtins();
  std::mt19937 rng(20240601);
  std::uniform_int_distribution<int> pick_dim(1, 4);
  std::uniform_int_distribution<int> pick_len(0, reg.limits().max_length);
  std::uniform_int_distribution<int> pick_fn(0, 4);
  std::uniform_real_distribution<float> value(-3.0f, 3.0f);
  std::uniform_int_distribution<int> coin(0, 1);
  const char* names[] = {"add", "mul", "length", "sum", "pow"};

  for (int trial = 0; trial < 1000; ++trial) {
    const int input_dim = pick_dim(rng);
    int dim = input_dim;
    std::ostringstream text;
    std::vector<std::pair<std::string, std::vector<float>>> steps;
    const int len = pick_len(rng);
    for (int s = 0; s < len; ++s) {
      const std::string name = names[pick_fn(rng)];
      std::vector<float> args;
      if (name == "add" || name == "mul" || name == "pow") {
        const int n = coin(rng) ? 1 : dim;
        for (int i = 0; i < n; ++i) {
          // integral exponents keep pow real-valued for negative bases
          args.push_back(name == "pow" ? static_cast<float>(static_cast<int>(value(rng))) : value(rng));
        }
      }
      text << (s ? " | " : "") << name;
      if (!args.empty()) {
        text << '(';
        for (std::size_t i = 0; i < args.size(); ++i) text << (i ? "," : "") << std::setprecision(9) << args[i];
        text << ')';
      }
      if (name == "length" || name == "sum") dim = 1;
      steps.emplace_back(name, args);
    }
    const FunctorChain chain = parse_chain(text.str(), reg, reg.limits(), input_dim);
    REQUIRE(chain.output_dim == dim);

    FieldVector in;
    in.dim = input_dim;
    for (int i = 0; i < input_dim; ++i) in[i] = value(rng);

    FieldVector expected = in;
    for (const auto& [name, args] : steps) expected = oracle_step(name, args, expected);
    const FieldVector got = eval_chain(chain, in);
    INFO(text.str());
    REQUIRE(got.dim == chain.output_dim);
    REQUIRE(same_bits(got, expected));

    // folding single-step chains gives the same answer
    FieldVector folded = in;
    for (const ChainStep& step : chain.steps) folded = step.apply(folded);
    REQUIRE(same_bits(folded, got));

    // identity chain is a fixpoint
    REQUIRE(eval_chain(FunctorChain::identity(input_dim), in) == in);
  }
}
