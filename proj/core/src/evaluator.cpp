#include "progspace/evaluator.hpp"

#include <algorithm>
#include <cmath>

#include "progspace/error.hpp"
#include "progspace/random.hpp"

namespace progspace {

void EvalDomain::validate() const {
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
    throw Error(ErrorKind::invalid_argument, "evaluation domain needs finite lo < hi");
  }
  if (pairs < 1 || attempts < pairs) {
    throw Error(ErrorKind::invalid_argument, "evaluation domain needs attempts >= pairs >= 1");
  }
}

namespace {

std::size_t eval_rec(std::span<const Op> prefix, std::size_t pos, float x, float& out) {
  const Op op = prefix[pos++];
  switch (arity(op)) {
    case 0:
      out = x;
      return pos;
    case 1: {
      float a;
      pos = eval_rec(prefix, pos, x, a);
      out = detail::apply(op, a, 0.0f);
      return pos;
    }
    default: {
      float a, b;
      pos = eval_rec(prefix, pos, x, a);
      pos = eval_rec(prefix, pos, x, b);
      out = detail::apply(op, a, b);
      return pos;
    }
  }
}

}  // namespace

float eval_scalar(std::span<const Op> prefix, float x) {
  float out;
  eval_rec(prefix, 0, x, out);
  return out;
}

float eval_scalar(const Ast& ast, float x) { return eval_scalar(ast.prefix(), x); }

std::vector<float> eval_grid(const Ast& ast, std::span<const float> xs) {
  std::vector<float> out(xs.size());
  BatchEvaluator evaluator;
  evaluator.evaluate(ast.prefix(), xs, out);
  return out;
}

void BatchEvaluator::evaluate(std::span<const Op> prefix, std::span<const float> xs, std::span<float> out) {
  if (out.size() != xs.size()) throw Error(ErrorKind::invalid_argument, "batch output size mismatch");
  if (xs.empty()) return;
  // One scratch row per tree level; sized before recursion so rows never move mid-evaluation.
  if (scratch_.size() < prefix.size()) scratch_.resize(prefix.size());
  eval(prefix, 0, xs, out.data(), 0);
}

std::size_t BatchEvaluator::eval(std::span<const Op> prefix, std::size_t pos, std::span<const float> xs, float* out,
                                 std::size_t depth) {
  const Op op = prefix[pos++];
  const std::size_t n = xs.size();
  switch (op) {
    case Op::var:
      std::copy(xs.begin(), xs.end(), out);
      return pos;
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div: {
      pos = eval(prefix, pos, xs, out, depth + 1);
      auto& tmp = scratch_[depth];
      if (tmp.size() < n) tmp.resize(n);
      float* rhs = tmp.data();
      pos = eval(prefix, pos, xs, rhs, depth + 1);
      switch (op) {
        case Op::add: for (std::size_t i = 0; i < n; ++i) out[i] = out[i] + rhs[i]; break;
        case Op::sub: for (std::size_t i = 0; i < n; ++i) out[i] = out[i] - rhs[i]; break;
        case Op::mul: for (std::size_t i = 0; i < n; ++i) out[i] = out[i] * rhs[i]; break;
        default: for (std::size_t i = 0; i < n; ++i) out[i] = out[i] / rhs[i]; break;
      }
      return pos;
    }
    default: {
      pos = eval(prefix, pos, xs, out, depth + 1);
      switch (op) {
        case Op::sin: for (std::size_t i = 0; i < n; ++i) out[i] = std::sin(out[i]); break;
        case Op::cos: for (std::size_t i = 0; i < n; ++i) out[i] = std::cos(out[i]); break;
        case Op::exp: for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(out[i]); break;
        case Op::log: for (std::size_t i = 0; i < n; ++i) out[i] = std::log(out[i]); break;
        default: for (std::size_t i = 0; i < n; ++i) out[i] = std::sqrt(out[i]); break;
      }
      return pos;
    }
  }
}

std::vector<float> linspace(float lo, float hi, std::size_t n) {
  std::vector<float> out(n);
  if (n == 0) return out;
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  const double a = lo, b = hi;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  out.back() = hi;
  return out;
}

float sample_input(const EvalDomain& dom, std::uint64_t stream_key, std::uint64_t counter) {
  const CounterRng rng(stream_key);
  const double u = rng.unit24(counter);
  return static_cast<float>(static_cast<double>(dom.lo) + (static_cast<double>(dom.hi) - dom.lo) * u);
}

std::uint64_t program_stream_key(std::uint64_t seed, const Ast& ast) { return combine_keys(seed, fnv1a64(render(ast))); }

namespace {

double bernoulli_kl(double q, double p) {
  auto term = [](double a, double b) { return a <= 0.0 ? 0.0 : a * std::log(a / b); };
  return term(q, p) + term(1.0 - q, 1.0 - p);
}

// Largest p >= q with t * KL(q || p) <= budget.
double kl_upper_bound(double q, double t, double budget) {
  double lo = q, hi = 1.0;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (t * bernoulli_kl(q, mid) > budget) hi = mid;
    else lo = mid;
  }
  return hi;
}

// True when, with confidence 1 - 2*delta, the remaining draws cannot supply `need` more pairs.
bool hopeless(std::uint64_t drawn, std::uint32_t accepted, std::uint64_t remaining, std::uint32_t need, double log_inv_delta) {
  if (remaining == 0) return true;
  const double t = static_cast<double>(drawn);
  const double p_up = kl_upper_bound(static_cast<double>(accepted) / t, t, log_inv_delta);
  const double m = static_cast<double>(remaining);
  const double target = static_cast<double>(need) / m;
  if (target <= p_up) return false;
  if (target >= 1.0) return true;
  return m * bernoulli_kl(target, p_up) >= log_inv_delta;
}

constexpr std::size_t stream_batch = 512;

// Open-addressing set of float bit patterns. 0xffffffff is a NaN pattern that sample_input
// never produces, so it marks empty slots.
class SeenInputs {
 public:
  explicit SeenInputs(std::uint32_t expected) {
    std::size_t cap = 16;
    while (cap < 2 * static_cast<std::size_t>(expected)) cap <<= 1;
    slots_.assign(cap, empty);
    mask_ = cap - 1;
  }
  bool insert(std::uint32_t bits) {
    std::size_t i = static_cast<std::size_t>(mix64(bits)) & mask_;
    while (slots_[i] != empty) {
      if (slots_[i] == bits) return false;
      i = (i + 1) & mask_;
    }
    slots_[i] = bits;
    return true;
  }

 private:
  static constexpr std::uint32_t empty = 0xffffffffu;
  std::vector<std::uint32_t> slots_;
  std::size_t mask_ = 0;
};

// Walks the program's stream; calls on_accept(x, y) for each accepted pair until `dom.pairs`
// are found or the budget (or the early-reject rule) ends the walk.
template <typename OnAccept>
ValidityResult walk_stream(const Ast& ast, const EvalDomain& dom, std::uint64_t seed, const ValidityOptions& opts,
                           BatchEvaluator& evaluator, OnAccept&& on_accept) {
  const std::uint64_t key = program_stream_key(seed, ast);
  const double log_inv_delta = std::log(1.0 / opts.confidence);
  SeenInputs seen(dom.pairs);
  const CounterRng rng(key);
  const double lo = dom.lo, width = static_cast<double>(dom.hi) - dom.lo;
  float xs[stream_batch];
  float ys[stream_batch];
  ValidityResult result;
  std::uint64_t drawn = 0;
  while (drawn < dom.attempts) {
    const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(stream_batch, dom.attempts - drawn));
    for (std::size_t i = 0; i < n; ++i) xs[i] = static_cast<float>(lo + width * rng.unit24(drawn + i));
    evaluator.evaluate(ast.prefix(), std::span<const float>(xs, n), std::span<float>(ys, n));
    for (std::size_t i = 0; i < n; ++i) {
      ++drawn;
      if (!std::isfinite(ys[i])) continue;
      if (!seen.insert(std::bit_cast<std::uint32_t>(xs[i]))) continue;
      on_accept(xs[i], ys[i]);
      if (++result.accepted == dom.pairs) {
        result.valid = true;
        result.reason = ValidityReason::accepted;
        result.attempts = drawn;
        return result;
      }
    }
    const std::uint32_t need = dom.pairs - result.accepted;
    const std::uint64_t remaining = dom.attempts - drawn;
    if (remaining < need) {
      result.reason = ValidityReason::hopeless;
      break;
    }
    if (opts.early_reject && drawn >= 4096 && hopeless(drawn, result.accepted, remaining, need, log_inv_delta)) {
      result.reason = ValidityReason::hopeless;
      break;
    }
  }
  result.attempts = drawn;
  if (drawn >= dom.attempts && result.reason != ValidityReason::hopeless) result.reason = ValidityReason::exhausted;
  return result;
}

}  // namespace

ValidityResult check_validity(const Ast& ast, const EvalDomain& dom, std::uint64_t seed, const ValidityOptions& opts,
                              BatchEvaluator& evaluator, std::span<const float> screen_grid) {
  if (!screen_grid.empty()) {
    std::vector<float> ys(screen_grid.size());
    evaluator.evaluate(ast.prefix(), screen_grid, ys);
    if (std::none_of(ys.begin(), ys.end(), [](float y) { return std::isfinite(y); })) {
      ValidityResult result;
      result.reason = ValidityReason::screened_out;
      return result;
    }
  }
  return walk_stream(ast, dom, seed, opts, evaluator, [](float, float) {});
}

ValidityResult check_validity(const Ast& ast, const EvalDomain& dom, std::uint64_t seed, const ValidityOptions& opts) {
  dom.validate();
  BatchEvaluator evaluator;
  const auto grid = opts.screen_points > 0 ? linspace(dom.lo, dom.hi, opts.screen_points) : std::vector<float>{};
  return check_validity(ast, dom, seed, opts, evaluator, grid);
}

bool is_valid_program(const Ast& ast, const EvalDomain& dom, std::uint64_t seed) { return check_validity(ast, dom, seed).valid; }

std::vector<AcceptedPair> accepted_pairs(const Ast& ast, const EvalDomain& dom, std::uint64_t seed) {
  dom.validate();
  std::vector<AcceptedPair> pairs;
  pairs.reserve(dom.pairs);
  BatchEvaluator evaluator;
  ValidityOptions opts;
  opts.early_reject = false;
  const auto result = walk_stream(ast, dom, seed, opts, evaluator, [&](float x, float y) { pairs.push_back({x, y}); });
  if (!result.valid) {
    throw Error(ErrorKind::budget_exhausted, "program " + render(ast) + " yields only " + std::to_string(result.accepted) +
                                                 " valid pairs within " + std::to_string(result.attempts) + " attempts");
  }
  return pairs;
}

Digest128 signature_digest(std::span<float> outputs) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(outputs.size() * 4 + (outputs.size() + 7) / 8);
  std::vector<std::uint8_t> mask((outputs.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (!std::isfinite(outputs[i])) mask[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    const std::uint32_t bits = canonical_bits(outputs[i]);
    outputs[i] = std::bit_cast<float>(bits);
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  bytes.insert(bytes.end(), mask.begin(), mask.end());
  const auto full = sha256(bytes);
  Digest128 out{};
  std::copy_n(full.begin(), out.size(), out.begin());
  return out;
}

Signature signature(const Ast& ast, std::span<const float> grid) {
  Signature sig;
  sig.values = eval_grid(ast, grid);
  sig.invalid.assign((grid.size() + 63) / 64, 0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!std::isfinite(sig.values[i])) sig.invalid[i / 64] |= std::uint64_t{1} << (i % 64);
  }
  sig.digest = signature_digest(sig.values);
  return sig;
}

}  // namespace progspace
