#include "progspace/grammar.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "progspace/digest.hpp"
#include "progspace/error.hpp"

namespace progspace {

std::string_view label(Op op) {
  switch (op) {
    case Op::var: return "x";
    case Op::add: return "+";
    case Op::sub: return "-";
    case Op::mul: return "*";
    case Op::div: return "/";
    case Op::sin: return "sin";
    case Op::cos: return "cos";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sqrt: return "sqrt";
  }
  return "?";
}

std::size_t subtree_end(std::span<const Op> prefix, std::size_t pos) {
  // Number of subtrees still to be read.
  long pending = 1;
  while (pending > 0) {
    if (pos >= prefix.size()) return prefix.size() + 1;
    pending += arity(prefix[pos++]) - 1;
  }
  return pos;
}

Ast::Ast(std::vector<Op> prefix) : code_(std::move(prefix)) {
  if (code_.empty() || subtree_end(code_, 0) != code_.size()) {
    throw Error(ErrorKind::arity, "prefix code is not a single well-formed tree");
  }
  for (Op op : code_) {
    if (static_cast<int>(op) >= op_symbol_count) throw Error(ErrorKind::syntax, "unknown operator code");
  }
}

Ast Ast::unary(Op fn, const Ast& child) {
  if (!is_unary(fn)) throw Error(ErrorKind::arity, "not a unary function: " + std::string(label(fn)));
  std::vector<Op> code;
  code.reserve(child.code_.size() + 1);
  code.push_back(fn);
  code.insert(code.end(), child.code_.begin(), child.code_.end());
  Ast out;
  out.code_ = std::move(code);
  return out;
}

Ast Ast::binary(Op op, const Ast& lhs, const Ast& rhs) {
  if (!is_binary(op)) throw Error(ErrorKind::arity, "not a binary operator: " + std::string(label(op)));
  std::vector<Op> code;
  code.reserve(lhs.code_.size() + rhs.code_.size() + 1);
  code.push_back(op);
  code.insert(code.end(), lhs.code_.begin(), lhs.code_.end());
  code.insert(code.end(), rhs.code_.begin(), rhs.code_.end());
  Ast out;
  out.code_ = std::move(code);
  return out;
}

std::vector<Ast> Ast::children() const {
  std::vector<Ast> out;
  std::size_t pos = 1;
  for (int i = 0; i < arity(root()); ++i) {
    const std::size_t end = subtree_end(code_, pos);
    Ast child;
    child.code_.assign(code_.begin() + static_cast<std::ptrdiff_t>(pos), code_.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(std::move(child));
    pos = end;
  }
  return out;
}

namespace {

std::size_t render_rec(std::span<const Op> prefix, std::size_t pos, std::string& out) {
  const Op op = prefix[pos++];
  switch (arity(op)) {
    case 0:
      out.push_back('x');
      return pos;
    case 1:
      out.append(label(op));
      out.push_back('(');
      pos = render_rec(prefix, pos, out);
      out.push_back(')');
      return pos;
    default:
      out.push_back('(');
      pos = render_rec(prefix, pos, out);
      out.append(label(op));
      pos = render_rec(prefix, pos, out);
      out.push_back(')');
      return pos;
  }
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  std::vector<Op> parse_all() {
    skip_space();
    if (pos_ == text_.size()) throw ParseError(ErrorKind::syntax, pos_, "empty program");
    auto code = parse_sum();
    skip_space();
    if (pos_ != text_.size()) throw ParseError(ErrorKind::syntax, pos_, "unexpected '" + std::string(1, text_[pos_]) + "'");
    return code;
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  int peek() {
    skip_space();
    return pos_ < text_.size() ? static_cast<unsigned char>(text_[pos_]) : -1;
  }

  static std::vector<Op> join(Op op, std::vector<Op> lhs, const std::vector<Op>& rhs) {
    lhs.insert(lhs.begin(), op);
    lhs.insert(lhs.end(), rhs.begin(), rhs.end());
    return lhs;
  }

  std::vector<Op> parse_sum() {
    auto lhs = parse_product();
    for (;;) {
      const int c = peek();
      if (c != '+' && c != '-') return lhs;
      const std::size_t at = pos_++;
      auto rhs = parse_operand(at, static_cast<char>(c), &Parser::parse_product);
      lhs = join(c == '+' ? Op::add : Op::sub, std::move(lhs), rhs);
    }
  }

  std::vector<Op> parse_product() {
    auto lhs = parse_factor();
    for (;;) {
      const int c = peek();
      if (c != '*' && c != '/') return lhs;
      const std::size_t at = pos_++;
      auto rhs = parse_operand(at, static_cast<char>(c), &Parser::parse_factor);
      lhs = join(c == '*' ? Op::mul : Op::div, std::move(lhs), rhs);
    }
  }

  std::vector<Op> parse_operand(std::size_t op_pos, char op, std::vector<Op> (Parser::*rule)()) {
    const int c = peek();
    if (c == -1 || c == ')' || c == '+' || c == '-' || c == '*' || c == '/') {
      throw ParseError(ErrorKind::arity, op_pos, std::string("operator '") + op + "' is missing its right operand");
    }
    return (this->*rule)();
  }

  std::vector<Op> parse_factor() {
    const int c = peek();
    if (c == -1) throw ParseError(ErrorKind::arity, pos_, "expected an operand");
    if (c == '+' || c == '-' || c == '*' || c == '/') {
      throw ParseError(ErrorKind::arity, pos_, std::string("operator '") + static_cast<char>(c) + "' is missing its left operand");
    }
    if (c == '(') {
      ++pos_;
      if (peek() == ')') throw ParseError(ErrorKind::arity, pos_, "empty parentheses");
      auto inner = parse_sum();
      expect(')');
      return inner;
    }
    if (std::isalpha(c)) {
      const std::size_t start = pos_;
      while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      const std::string_view name = text_.substr(start, pos_ - start);
      if (name == "x") return {Op::var};
      for (Op fn : unary_ops_canonical) {
        if (name == label(fn)) {
          expect('(');
          if (peek() == ')') throw ParseError(ErrorKind::arity, pos_, "function '" + std::string(name) + "' is missing its argument");
          auto arg = parse_sum();
          expect(')');
          arg.insert(arg.begin(), fn);
          return arg;
        }
      }
      throw ParseError(ErrorKind::syntax, start, "unknown identifier '" + std::string(name) + "'");
    }
    throw ParseError(ErrorKind::syntax, pos_, "unexpected '" + std::string(1, static_cast<char>(c)) + "'");
  }

  void expect(char want) {
    const int c = peek();
    if (c != want) {
      if (c == -1) throw ParseError(ErrorKind::syntax, pos_, std::string("expected '") + want + "' before end of input");
      throw ParseError(ErrorKind::syntax, pos_, std::string("expected '") + want + "', found '" + static_cast<char>(c) + "'");
    }
    ++pos_;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

void render_into(std::span<const Op> prefix, std::string& out) { render_rec(prefix, 0, out); }

std::string render(const Ast& ast) {
  std::string out;
  out.reserve(ast.node_count() * 4);
  render_into(ast.prefix(), out);
  return out;
}

Ast parse(std::string_view source) { return Ast(Parser(source).parse_all()); }

std::size_t operator_count(const Ast& ast) {
  return static_cast<std::size_t>(std::count_if(ast.prefix().begin(), ast.prefix().end(), [](Op op) { return op != Op::var; }));
}

std::uint64_t count_trees(int n_ops) {
  if (n_ops < 0) throw Error(ErrorKind::invalid_argument, "negative operator count");
  std::vector<std::uint64_t> t(static_cast<std::size_t>(n_ops) + 1, 0);
  t[0] = 1;
  for (int n = 1; n <= n_ops; ++n) {
    std::uint64_t pairs = 0;
    for (int i = 0; i <= n - 1; ++i) pairs += t[i] * t[n - 1 - i];
    t[n] = 5 * t[n - 1] + 4 * pairs;
  }
  return t[n_ops];
}

std::string grammar_description() {
  std::set<char> alphabet{'(', ')'};
  for (int i = 0; i < op_symbol_count; ++i) {
    for (char c : label(static_cast<Op>(i))) alphabet.insert(c);
  }
  std::ostringstream out;
  out << "progspace-grammar 1\n";
  out << "start S\n";
  out << "nonterminals S E\n";
  out << "terminal x\n";
  out << "binary";
  for (Op op : binary_ops_canonical) out << ' ' << label(op);
  out << "\nunary";
  for (Op op : unary_ops_canonical) out << ' ' << label(op);
  out << "\nrule S -> E\n";
  out << "rule E -> x\n";
  out << "rule E -> ( E op E )    op in binary\n";
  out << "rule E -> fn ( E )      fn in unary\n";
  out << "alphabet ";
  for (char c : alphabet) out << c;
  out << "\n";
  out << "opcodes";
  for (int i = 0; i < op_symbol_count; ++i) out << ' ' << label(static_cast<Op>(i)) << '=' << i;
  out << "\n";
  return out.str();
}

std::string grammar_hash() {
  const auto digest = sha256(grammar_description());
  return to_hex(digest);
}

// ---------------------------------------------------------------------------------------------
// Enumerator

Enumerator::Enumerator(int max_ops) : max_ops_(max_ops) {
  if (max_ops < 0 || max_ops > 8) throw Error(ErrorKind::invalid_argument, "max_ops must lie in [0, 8]");
  counts_.resize(static_cast<std::size_t>(max_ops) + 1);
  for (int n = 0; n <= max_ops; ++n) counts_[n] = count_trees(n);
  binary_total_.assign(static_cast<std::size_t>(max_ops) + 1, 0);
  left_order_.resize(static_cast<std::size_t>(max_ops) + 1);
  levels_.resize(static_cast<std::size_t>(max_ops));
  for (int n = 0; n <= max_ops; ++n) {
    build_left_order(n);
    if (n < max_ops) build_level(n);
  }
}

std::uint64_t Enumerator::count(int n_ops) const {
  if (n_ops < 0 || n_ops > max_ops_) throw Error(ErrorKind::invalid_argument, "operator count outside enumerator bound");
  return counts_[n_ops];
}

std::uint64_t Enumerator::total() const {
  std::uint64_t sum = 0;
  for (auto c : counts_) sum += c;
  return sum;
}

std::string_view Enumerator::memo_source(ProgramRef ref) const {
  const auto& level = levels_.at(ref.ops);
  const auto begin = level.source_offsets[ref.rank];
  return std::string_view(level.sources).substr(begin, level.source_offsets[ref.rank + 1] - begin);
}

void Enumerator::build_left_order(int n) {
  // Left children of a binary root with n operators range over all programs with at most n-1
  // operators, merged in canonical text order. Canonical strings are prefix-free, so ordering the
  // concatenation "(" A op B ")" reduces to ordering by A, then op, then B.
  if (n == 0) return;
  std::vector<LeftChild> merged;
  if (n >= 2) {
    const auto& prev = left_order_[n - 1];
    const auto& level = levels_[n - 1];
    merged.reserve(prev.size() + level.offsets.size());
    std::size_t i = 0;
    std::uint64_t j = 0;
    const std::uint64_t level_count = counts_[n - 1];
    while (i < prev.size() || j < level_count) {
      bool take_prev;
      if (i == prev.size()) take_prev = false;
      else if (j == level_count) take_prev = true;
      else take_prev = memo_source(prev[i].ref) < memo_source(ProgramRef{static_cast<std::uint8_t>(n - 1), j});
      if (take_prev) merged.push_back({prev[i++].ref, 0});
      else merged.push_back({ProgramRef{static_cast<std::uint8_t>(n - 1), j++}, 0});
    }
  } else {
    merged.push_back({ProgramRef{0, 0}, 0});
  }
  std::uint64_t begin = 0;
  for (auto& entry : merged) {
    entry.block_begin = begin;
    begin += 4 * counts_[n - 1 - entry.ref.ops];
  }
  binary_total_[n] = begin;
  left_order_[n] = std::move(merged);
}

void Enumerator::build_level(int n) {
  auto& level = levels_[n];
  level.offsets.push_back(0);
  level.source_offsets.push_back(0);
  emit_range(n, 0, counts_[n], Visitor{}, &level);
}

void Enumerator::emit_range(int n, std::uint64_t first, std::uint64_t last, const Visitor& visitor, Level* sink) const {
  if (first >= last) return;
  std::vector<Op> code;
  auto deliver = [&](std::uint64_t rank, int child_count, ProgramRef a, ProgramRef b) {
    if (sink != nullptr) {
      sink->codes.insert(sink->codes.end(), code.begin(), code.end());
      sink->offsets.push_back(static_cast<std::uint32_t>(sink->codes.size()));
      render_into(code, sink->sources);
      sink->source_offsets.push_back(static_cast<std::uint32_t>(sink->sources.size()));
    }
    if (visitor) {
      const Ast ast(code);
      EnumeratedProgram program{ast, ProgramRef{static_cast<std::uint8_t>(n), rank}, child_count, {a, b}};
      visitor(program);
    }
  };

  if (n == 0) {
    code = {Op::var};
    deliver(0, 0, {}, {});
    return;
  }

  std::uint64_t rank = first;
  const auto& lefts = left_order_[n];
  if (rank < binary_total_[n]) {
    auto it = std::upper_bound(lefts.begin(), lefts.end(), rank,
                               [](std::uint64_t r, const LeftChild& e) { return r < e.block_begin; });
    std::size_t li = static_cast<std::size_t>(std::distance(lefts.begin(), it)) - 1;
    for (; li < lefts.size() && rank < last; ++li) {
      const ProgramRef a = lefts[li].ref;
      const int b_ops = n - 1 - a.ops;
      const std::uint64_t b_count = counts_[b_ops];
      const auto a_code = levels_[a.ops].code(a.rank);
      std::uint64_t offset = rank - lefts[li].block_begin;
      for (std::size_t oi = offset / b_count; oi < 4 && rank < last; ++oi) {
        for (std::uint64_t bi = offset % b_count; bi < b_count && rank < last; ++bi, ++rank) {
          const auto b_code = levels_[b_ops].code(bi);
          code.clear();
          code.push_back(binary_ops_canonical[oi]);
          code.insert(code.end(), a_code.begin(), a_code.end());
          code.insert(code.end(), b_code.begin(), b_code.end());
          deliver(rank, 2, a, ProgramRef{static_cast<std::uint8_t>(b_ops), bi});
        }
        offset = 0;
      }
    }
  }
  const std::uint64_t c_count = counts_[n - 1];
  while (rank < last) {
    const std::uint64_t u = rank - binary_total_[n];
    const std::size_t fi = static_cast<std::size_t>(u / c_count);
    const std::uint64_t ci = u % c_count;
    const auto c_code = levels_[n - 1].code(ci);
    code.clear();
    code.push_back(unary_ops_canonical[fi]);
    code.insert(code.end(), c_code.begin(), c_code.end());
    deliver(rank, 1, ProgramRef{static_cast<std::uint8_t>(n - 1), ci}, {});
    ++rank;
  }
}

void Enumerator::visit(int n_ops, std::uint64_t first, std::uint64_t last, const Visitor& visitor) const {
  if (n_ops < 0 || n_ops > max_ops_) throw Error(ErrorKind::invalid_argument, "operator count outside enumerator bound");
  last = std::min(last, counts_[n_ops]);
  emit_range(n_ops, first, last, visitor, nullptr);
}

void Enumerator::for_each(const Visitor& visitor) const {
  for (int n = 0; n <= max_ops_; ++n) visit(n, 0, counts_[n], visitor);
}

std::vector<Ast> enumerate_programs(int max_ops) {
  Enumerator e(max_ops);
  std::vector<Ast> out;
  out.reserve(e.total());
  e.for_each([&](const EnumeratedProgram& p) { out.push_back(p.ast); });
  return out;
}

}  // namespace progspace
