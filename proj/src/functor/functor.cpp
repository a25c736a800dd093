#include "insitu/functor.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <utility>

#include "insitu/errors.hpp"

namespace insitu {

std::uint64_t ChainLimits::combination_count() const {
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t n = 4;
  for (int i = 0; i < max_length; ++i) {
    if (functor_count != 0 && n > kMax / static_cast<std::uint64_t>(functor_count)) return kMax;
    n *= static_cast<std::uint64_t>(functor_count);
  }
  return n;
}

namespace {

// One instantiation per input dim; the registry stores all four.
template <int D>
FieldVector add_n(const FieldVector& v, const FieldVector& a) {
  FieldVector r{D, {}};
  for (int i = 0; i < D; ++i) r[i] = v[i] + a[i];
  return r;
}

template <int D>
FieldVector mul_n(const FieldVector& v, const FieldVector& a) {
  FieldVector r{D, {}};
  for (int i = 0; i < D; ++i) r[i] = v[i] * a[i];
  return r;
}

template <int D>
FieldVector pow_n(const FieldVector& v, const FieldVector& a) {
  FieldVector r{D, {}};
  for (int i = 0; i < D; ++i) r[i] = std::pow(v[i], a[i]);
  return r;
}

template <int D>
FieldVector length_n(const FieldVector& v, const FieldVector&) {
  float s = 0.0f;
  for (int i = 0; i < D; ++i) s += v[i] * v[i];
  return FieldVector::scalar(std::sqrt(s));
}

template <int D>
FieldVector sum_n(const FieldVector& v, const FieldVector&) {
  float s = 0.0f;
  for (int i = 0; i < D; ++i) s += v[i];
  return FieldVector::scalar(s);
}

#define INSITU_ALL_DIMS(fn) \
  std::array<FunctorEvaluator, kMaxFeatureDim> { fn<1>, fn<2>, fn<3>, fn<4> }

int same_dim(int d) { return d; }
int to_scalar(int) { return 1; }

bool is_name_start(char ch) { return std::isalpha(static_cast<unsigned char>(ch)) || ch == '_'; }
bool is_name_char(char ch) { return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_'; }

class ChainLexer {
 public:
  explicit ChainLexer(std::string_view text) : text_(text) {}

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool done() {
    skip_space();
    return pos_ >= text_.size();
  }
  bool accept(char ch) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == ch) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char ch) {
    if (!accept(ch)) fail(std::string("expected '") + ch + "'");
  }
  std::string name() {
    skip_space();
    if (pos_ >= text_.size() || !is_name_start(text_[pos_])) fail("expected functor name");
    const std::size_t start = pos_;
    while (pos_ < text_.size() && is_name_char(text_[pos_])) ++pos_;
    return std::string(text_.substr(start, pos_ - start));
  }
  float number() {
    skip_space();
    std::size_t start = pos_;
    if (pos_ < text_.size() && text_[pos_] == '+') ++start, ++pos_;
    float value = 0.0f;
    const auto [end, ec] = std::from_chars(text_.data() + start, text_.data() + text_.size(), value);
    if (ec != std::errc{} || end == text_.data() + start) fail("expected decimal constant");
    pos_ = static_cast<std::size_t>(end - text_.data());
    return value;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("functor chain '" + std::string(text_) + "': " + what + " at offset " + std::to_string(pos_));
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

FunctorRegistry FunctorRegistry::with_builtins(int max_chain_length) {
  FunctorRegistry r;
  r.set_max_length(max_chain_length);
  r.register_functor({"add", 4, same_dim}, INSITU_ALL_DIMS(add_n));
  r.register_functor({"mul", 4, same_dim}, INSITU_ALL_DIMS(mul_n));
  r.register_functor({"length", 0, to_scalar}, INSITU_ALL_DIMS(length_n));
  r.register_functor({"sum", 0, to_scalar}, INSITU_ALL_DIMS(sum_n));
  r.register_functor({"pow", 4, same_dim}, INSITU_ALL_DIMS(pow_n));
  return r;
}

#undef INSITU_ALL_DIMS

void FunctorRegistry::register_functor(FunctorDescriptor descriptor,
                                       std::array<FunctorEvaluator, kMaxFeatureDim> evaluators) {
  if (descriptor.name.empty() || !is_name_start(descriptor.name.front())) {
    throw RegistryError("invalid functor name '" + descriptor.name + "'");
  }
  if (find(descriptor.name)) throw RegistryError("functor '" + descriptor.name + "' already registered");
  if (descriptor.max_args < 0 || descriptor.max_args > kMaxFeatureDim) {
    throw RegistryError("functor '" + descriptor.name + "': argument count must be 0..4");
  }
  if (!descriptor.domain_map) throw RegistryError("functor '" + descriptor.name + "' has no domain map");
  for (int d = 1; d <= kMaxFeatureDim; ++d) {
    if (!evaluators[static_cast<std::size_t>(d - 1)]) {
      throw RegistryError("functor '" + descriptor.name + "' lacks an evaluator for dim " + std::to_string(d));
    }
    const int out = descriptor.domain_map(d);
    if (out < 1 || out > kMaxFeatureDim) {
      throw RegistryError("functor '" + descriptor.name + "' maps dim " + std::to_string(d) + " outside 1..4");
    }
  }
  entries_.push_back(std::make_shared<const FunctorEntry>(FunctorEntry{std::move(descriptor), std::move(evaluators)}));
  limits_.functor_count = static_cast<int>(entries_.size());
}

std::shared_ptr<const FunctorEntry> FunctorRegistry::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e->descriptor.name == name) return e;
  }
  return nullptr;
}

void FunctorRegistry::set_max_length(int c) {
  if (c < 1) throw RegistryError("chain length limit must be positive");
  limits_.max_length = c;
}

void register_functor(FunctorRegistry& registry, FunctorDescriptor descriptor,
                      std::array<FunctorEvaluator, kMaxFeatureDim> evaluators) {
  registry.register_functor(std::move(descriptor), std::move(evaluators));
}

FunctorChain parse_chain(std::string_view text, const FunctorRegistry& registry, const ChainLimits& limits,
                         int input_dim) {
  if (input_dim < 1 || input_dim > kMaxFeatureDim) {
    throw ContractError("chain input dim " + std::to_string(input_dim) + " outside 1..4");
  }
  FunctorChain chain = FunctorChain::identity(input_dim);
  ChainLexer lex(text);
  if (lex.done()) return chain;

  int dim = input_dim;
  do {
    const std::string name = lex.name();
    auto functor = registry.find(name);
    if (!functor) lex.fail("unknown functor '" + name + "'");

    std::vector<float> args;
    if (lex.accept('(')) {
      if (!lex.accept(')')) {
        do {
          args.push_back(lex.number());
        } while (lex.accept(','));
        lex.expect(')');
      }
    }

    if (static_cast<int>(chain.steps.size()) >= limits.max_length) {
      lex.fail("chain longer than " + std::to_string(limits.max_length) + " steps");
    }

    ChainStep step;
    step.functor = functor;
    step.input_dim = dim;
    step.argument.dim = dim;
    const int max_args = functor->descriptor.max_args;
    const auto n = static_cast<int>(args.size());
    if (max_args == 0) {
      if (n != 0) lex.fail("'" + name + "' takes no arguments");
    } else if (n == 1) {
      for (int i = 0; i < dim; ++i) step.argument[i] = args[0];
    } else if (n == dim && n <= max_args) {
      for (int i = 0; i < dim; ++i) step.argument[i] = args[static_cast<std::size_t>(i)];
    } else {
      lex.fail("'" + name + "' got " + std::to_string(n) + " arguments, expected 1 or " + std::to_string(dim));
    }
    step.output_dim = functor->descriptor.domain_map(dim);
    dim = step.output_dim;
    chain.steps.push_back(std::move(step));
  } while (lex.accept('|'));

  if (!lex.done()) lex.fail("unexpected trailing input");
  chain.output_dim = dim;
  return chain;
}

FieldVector eval_chain(const FunctorChain& chain, const FieldVector& value) {
  FieldVector v = value;
  for (const ChainStep& step : chain.steps) v = step.apply(v);
  return v;
}

}  // namespace insitu
