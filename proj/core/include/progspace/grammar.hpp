#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace progspace {

/// Node symbols of the arithmetic DSL. The numeric values are part of the on-disk grammar
/// version; append, never renumber.
enum class Op : std::uint8_t {
  var = 0,
  add,
  sub,
  mul,
  div,
  sin,
  cos,
  exp,
  log,
  sqrt,
};

inline constexpr int op_symbol_count = 10;

constexpr int arity(Op op) {
  switch (op) {
    case Op::var: return 0;
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div: return 2;
    default: return 1;
  }
}

constexpr bool is_binary(Op op) { return arity(op) == 2; }
constexpr bool is_unary(Op op) { return arity(op) == 1; }

/// Text label of a node: "x", "+", "-", "*", "/", "sin", ...
std::string_view label(Op op);

/// Binary operators in canonical-text order of their symbol ('*' < '+' < '-' < '/').
inline constexpr Op binary_ops_canonical[] = {Op::mul, Op::add, Op::sub, Op::div};
/// Unary functions in canonical-text order of their name.
inline constexpr Op unary_ops_canonical[] = {Op::cos, Op::exp, Op::log, Op::sin, Op::sqrt};

/// Immutable expression tree over the single variable x, stored as its prefix (Polish) code.
/// Arities are fixed per symbol, so the prefix sequence determines the tree uniquely.
class Ast {
 public:
  Ast() : code_{Op::var} {}
  /// Takes ownership of a prefix code; throws ErrorKind::arity if it is not exactly one tree.
  explicit Ast(std::vector<Op> prefix);

  static Ast var() { return Ast(); }
  static Ast unary(Op fn, const Ast& child);
  static Ast binary(Op op, const Ast& lhs, const Ast& rhs);

  std::span<const Op> prefix() const { return code_; }
  Op root() const { return code_.front(); }
  std::size_t node_count() const { return code_.size(); }

  /// Direct children of the root (empty for x).
  std::vector<Ast> children() const;

  friend bool operator==(const Ast&, const Ast&) = default;
  friend auto operator<=>(const Ast& a, const Ast& b) { return a.code_ <=> b.code_; }

 private:
  std::vector<Op> code_;
};

/// Index one past the subtree that starts at `pos` in a prefix code.
std::size_t subtree_end(std::span<const Op> prefix, std::size_t pos);

/// Parses infix source. Accepts the canonical form plus conventional shorthand (whitespace,
/// redundant parentheses, unparenthesised binary chains with usual precedence, left associative).
/// Throws ParseError with kind syntax or arity.
Ast parse(std::string_view source);

/// Canonical text: fully parenthesised binary applications, call syntax for functions.
std::string render(const Ast& ast);
void render_into(std::span<const Op> prefix, std::string& out);

std::size_t operator_count(const Ast& ast);

/// Number of distinct ASTs with exactly n operator nodes:
/// t(0) = 1, t(n) = 5 t(n-1) + 4 sum_{i+j=n-1} t(i) t(j).
std::uint64_t count_trees(int n_ops);

/// Versioned, human-readable description of the DSL alphabet and productions. Downstream
/// manifests embed the SHA-256 of this text as the grammar hash.
std::string grammar_description();
std::string grammar_hash();

/// Position of a program inside the canonical enumeration: exact operator count plus rank
/// among programs of that count.
struct ProgramRef {
  std::uint8_t ops = 0;
  std::uint64_t rank = 0;
  friend bool operator==(const ProgramRef&, const ProgramRef&) = default;
};

/// A program yielded by the enumerator together with references to its direct children.
struct EnumeratedProgram {
  const Ast& ast;
  ProgramRef self;
  int child_count;
  ProgramRef children[2];
};

/// Exhaustive enumeration in canonical order: by operator count, then lexicographically by
/// canonical text. Sub-enumerations for smaller counts are memoised, so any contiguous rank range
/// of any count can be generated independently (the unit of sharding).
class Enumerator {
 public:
  explicit Enumerator(int max_ops);

  int max_ops() const { return max_ops_; }
  std::uint64_t count(int n_ops) const;
  std::uint64_t total() const;

  using Visitor = std::function<void(const EnumeratedProgram&)>;

  /// Programs with exactly n_ops operators and rank in [first, last).
  void visit(int n_ops, std::uint64_t first, std::uint64_t last, const Visitor& visitor) const;
  /// Every program with at most max_ops operators, in canonical order.
  void for_each(const Visitor& visitor) const;

  /// Canonical source of a memoised program (operator count < max_ops).
  std::string_view memo_source(ProgramRef ref) const;

 private:
  struct Level {
    std::vector<Op> codes;
    std::vector<std::uint32_t> offsets;  // size = count + 1
    std::string sources;
    std::vector<std::uint32_t> source_offsets;
    std::span<const Op> code(std::uint64_t rank) const {
      return {codes.data() + offsets[rank], offsets[rank + 1] - offsets[rank]};
    }
  };
  struct LeftChild {
    ProgramRef ref;
    std::uint64_t block_begin;  // first binary rank whose left child is this entry
  };

  void build_level(int n);
  void build_left_order(int n);
  void emit_range(int n, std::uint64_t first, std::uint64_t last, const Visitor& visitor, Level* sink) const;

  int max_ops_;
  std::vector<std::uint64_t> counts_;
  std::vector<Level> levels_;                        // levels_[n] for n < max_ops
  std::vector<std::vector<LeftChild>> left_order_;  // per n: merged canonical order of left children
  std::vector<std::uint64_t> binary_total_;
};

/// All programs with at most max_ops operators, canonical order. Convenience for small bounds.
std::vector<Ast> enumerate_programs(int max_ops);

}  // namespace progspace
