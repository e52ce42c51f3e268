#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "progspace/digest.hpp"
#include "progspace/grammar.hpp"

namespace progspace {

/// Sampling domain for validity checks and task specifications.
struct EvalDomain {
  float lo = -10.0f;
  float hi = 10.0f;
  std::uint64_t attempts = 1'000'000;  // validity budget k
  std::uint32_t pairs = 1'000;         // distinct valid pairs required

  void validate() const;
  friend bool operator==(const EvalDomain&, const EvalDomain&) = default;
};

namespace detail {

inline float apply(Op op, float a, float b) {
  switch (op) {
    case Op::add: return a + b;
    case Op::sub: return a - b;
    case Op::mul: return a * b;
    case Op::div: return a / b;
    case Op::sin: return std::sin(a);
    case Op::cos: return std::cos(a);
    case Op::exp: return std::exp(a);
    case Op::log: return std::log(a);
    case Op::sqrt: return std::sqrt(a);
    case Op::var: break;
  }
  return a;
}

}  // namespace detail

/// Value of the program at x in binary32, evaluated in natural recursive order.
/// NaN and infinities are ordinary values and propagate.
float eval_scalar(const Ast& ast, float x);
float eval_scalar(std::span<const Op> prefix, float x);

std::vector<float> eval_grid(const Ast& ast, std::span<const float> xs);

/// Reusable evaluator over batches of inputs; bit-identical to eval_scalar.
class BatchEvaluator {
 public:
  void evaluate(std::span<const Op> prefix, std::span<const float> xs, std::span<float> out);

 private:
  std::size_t eval(std::span<const Op> prefix, std::size_t pos, std::span<const float> xs, float* out, std::size_t depth);
  std::vector<std::vector<float>> scratch_;
};

/// n equidistant binary32 points on [lo, hi], both ends included.
std::vector<float> linspace(float lo, float hi, std::size_t n);

inline bool is_finite_value(float y) { return std::isfinite(y); }

/// Value as used for observational equivalence: all NaNs collapse to one quiet NaN and
/// -0 collapses to +0. Everything else is kept bit-for-bit.
inline std::uint32_t canonical_bits(float y) {
  if (std::isnan(y)) return 0x7fc00000u;
  if (y == 0.0f) return 0u;
  return std::bit_cast<std::uint32_t>(y);
}

inline bool same_value(float a, float b) { return canonical_bits(a) == canonical_bits(b); }

/// Input drawn at attempt `counter` of the stream for (seed, program).
float sample_input(const EvalDomain& dom, std::uint64_t stream_key, std::uint64_t counter);
/// Stream key of a program: (global seed, canonical source). Independent of universe ids, so a
/// program's stream is the same in every universe that contains it.
std::uint64_t program_stream_key(std::uint64_t seed, const Ast& ast);

struct ValidityOptions {
  /// Programs with no finite output on this many equidistant points are rejected without
  /// drawing the stream. 0 disables screening.
  std::size_t screen_points = 4096;
  /// Reject early once a Chernoff bound shows the remaining budget cannot plausibly reach the
  /// required number of pairs (failure probability below 2 * confidence).
  bool early_reject = true;
  double confidence = 1e-12;
};

enum class ValidityReason : std::uint8_t { accepted, screened_out, hopeless, exhausted };

struct ValidityResult {
  bool valid = false;
  ValidityReason reason = ValidityReason::exhausted;
  std::uint64_t attempts = 0;  // stream draws consumed
  std::uint32_t accepted = 0;  // distinct valid pairs found
};

ValidityResult check_validity(const Ast& ast, const EvalDomain& dom, std::uint64_t seed, const ValidityOptions& opts = {});
ValidityResult check_validity(const Ast& ast, const EvalDomain& dom, std::uint64_t seed, const ValidityOptions& opts,
                              BatchEvaluator& evaluator, std::span<const float> screen_grid);

/// True iff `pairs` finite outputs at pairwise-distinct inputs are found within `attempts` draws.
bool is_valid_program(const Ast& ast, const EvalDomain& dom, std::uint64_t seed);

/// Output of one accepted stream draw.
struct AcceptedPair {
  float x;
  float y;
};

/// First `dom.pairs` accepted draws of the program's stream, in draw order. Throws
/// ErrorKind::budget_exhausted when the budget runs out first.
std::vector<AcceptedPair> accepted_pairs(const Ast& ast, const EvalDomain& dom, std::uint64_t seed);

/// Observational-equivalence fingerprint over a fixed grid.
struct Signature {
  std::vector<float> values;          // canonicalised outputs (see canonical_bits)
  std::vector<std::uint64_t> invalid;  // bit i set when output i is NaN or infinite
  Digest128 digest{};

  friend bool operator==(const Signature& a, const Signature& b) { return a.digest == b.digest; }
};

Signature signature(const Ast& ast, std::span<const float> grid);
/// Digest of already evaluated outputs; `outputs` is canonicalised in place.
Digest128 signature_digest(std::span<float> outputs);

}  // namespace progspace
