#include "progspace/universe.hpp"

#include <algorithm>
#include <numeric>

#include "progspace/binary_io.hpp"
#include "progspace/error.hpp"
#include "progspace/parallel.hpp"
#include "progspace/random.hpp"

namespace progspace {

namespace {
constexpr std::uint32_t universe_version = 1;
constexpr std::uint32_t classes_version = 1;
constexpr std::size_t record_bytes = 8 + 1 + 16 + 8 + 4;
constexpr std::size_t universe_header_bytes = 4 + 4 + 8;
}  // namespace

std::uint64_t UniverseStats::raw_total() const { return std::accumulate(raw.begin(), raw.end(), std::uint64_t{0}); }
std::uint64_t UniverseStats::valid_total() const { return std::accumulate(valid.begin(), valid.end(), std::uint64_t{0}); }

std::string_view Universe::source(ProgramId id) const {
  if (id >= size()) throw Error(ErrorKind::invalid_argument, "program id " + std::to_string(id) + " outside universe");
  return std::string_view(pool_).substr(offsets_[id], offsets_[id + 1] - offsets_[id]);
}

void Universe::append(std::string_view source, int op_count, const Digest128& digest) {
  pool_.append(source);
  offsets_.push_back(pool_.size());
  op_counts_.push_back(static_cast<std::uint8_t>(op_count));
  digests_.push_back(digest);
}

void Universe::reserve(std::size_t programs, std::size_t source_bytes) {
  pool_.reserve(source_bytes);
  offsets_.reserve(programs + 1);
  op_counts_.reserve(programs);
  digests_.reserve(programs);
}

namespace {

struct ChunkResult {
  std::vector<std::uint64_t> ranks;  // accepted ranks, ascending
  std::string sources;
  std::vector<std::uint32_t> source_ends;
  std::vector<Digest128> digests;
  std::vector<std::uint8_t> all_nan;  // per rank in the chunk; only kept when memoised
  std::uint64_t screened = 0, hopeless = 0, exhausted = 0, seen = 0;
};

struct Worker {
  BatchEvaluator evaluator;
  std::vector<float> screen_out;
  std::vector<float> sig_out;
};

}  // namespace

Universe build_universe(const UniverseBuildOptions& opts) {
  opts.domain.validate();
  if (opts.max_ops < 0) throw Error(ErrorKind::invalid_argument, "max_ops must be non-negative");
  if (opts.signature_points == 0) throw Error(ErrorKind::invalid_argument, "signature grid needs at least one point");

  const Enumerator enumerator(opts.max_ops);
  const auto screen_grid = linspace(opts.domain.lo, opts.domain.hi, opts.validity.screen_points);
  const auto sig_grid = linspace(opts.domain.lo, opts.domain.hi, opts.signature_points);
  const bool memoise = !screen_grid.empty();

  Universe u;
  u.max_ops = opts.max_ops;
  u.domain = opts.domain;
  u.seed = opts.seed;
  u.signature_points = opts.signature_points;
  u.grammar_hash = grammar_hash();
  u.stats.raw.assign(static_cast<std::size_t>(opts.max_ops) + 1, 0);
  u.stats.valid.assign(static_cast<std::size_t>(opts.max_ops) + 1, 0);

  // all_nan[n][rank]: program has NaN output at every screening point. NaN absorbs through
  // every operator, so a parent of such a program is NaN everywhere too and is screened out
  // without evaluation.
  std::vector<std::vector<std::uint8_t>> all_nan(static_cast<std::size_t>(opts.max_ops));

  const std::size_t workers = std::max<std::size_t>(1, thread_count());

  for (int n = 0; n <= opts.max_ops; ++n) {
    const std::uint64_t count = enumerator.count(n);
    const bool keep_flags = memoise && n < opts.max_ops;
    if (keep_flags) all_nan[n].assign(count, 0);
    const std::size_t chunks = static_cast<std::size_t>((count + opts.chunk_size - 1) / opts.chunk_size);
    // Waves bound the memory held by finished-but-unmerged chunks.
    const std::size_t wave = std::max<std::size_t>(workers * 4, 1);
    for (std::size_t wave_begin = 0; wave_begin < chunks; wave_begin += wave) {
      const std::size_t wave_end = std::min(chunks, wave_begin + wave);
      std::vector<ChunkResult> results(wave_end - wave_begin);
      parallel_for(results.size(), [&](std::size_t i) {
        Worker w;
        const std::uint64_t first = (wave_begin + i) * opts.chunk_size;
        const std::uint64_t last = std::min<std::uint64_t>(count, first + opts.chunk_size);
        ChunkResult& out = results[i];
        if (keep_flags) out.all_nan.assign(last - first, 0);
        w.screen_out.resize(screen_grid.size());
        w.sig_out.resize(sig_grid.size());
        enumerator.visit(n, first, last, [&](const EnumeratedProgram& p) {
          ++out.seen;
          bool nan_everywhere = false;
          for (int c = 0; c < p.child_count && memoise; ++c) {
            if (all_nan[p.children[c].ops][p.children[c].rank]) nan_everywhere = true;
          }
          if (!nan_everywhere && memoise) {
            w.evaluator.evaluate(p.ast.prefix(), screen_grid, w.screen_out);
            nan_everywhere = std::all_of(w.screen_out.begin(), w.screen_out.end(), [](float y) { return std::isnan(y); });
            if (!nan_everywhere && std::none_of(w.screen_out.begin(), w.screen_out.end(), [](float y) { return std::isfinite(y); })) {
              ++out.screened;
              return;
            }
          }
          if (nan_everywhere) {
            if (keep_flags) out.all_nan[p.self.rank - first] = 1;
            ++out.screened;
            return;
          }
          const auto verdict = check_validity(p.ast, opts.domain, opts.seed, opts.validity, w.evaluator, {});
          if (!verdict.valid) {
            if (verdict.reason == ValidityReason::hopeless) ++out.hopeless;
            else ++out.exhausted;
            return;
          }
          w.evaluator.evaluate(p.ast.prefix(), sig_grid, w.sig_out);
          out.ranks.push_back(p.self.rank);
          render_into(p.ast.prefix(), out.sources);
          out.source_ends.push_back(static_cast<std::uint32_t>(out.sources.size()));
          out.digests.push_back(signature_digest(w.sig_out));
        });
      });
      for (std::size_t i = 0; i < results.size(); ++i) {
        auto& r = results[i];
        const std::uint64_t first = (wave_begin + i) * opts.chunk_size;
        u.stats.raw[n] += r.seen;
        u.stats.valid[n] += r.ranks.size();
        u.stats.screened_out += r.screened;
        u.stats.hopeless += r.hopeless;
        u.stats.exhausted += r.exhausted;
        std::uint32_t begin = 0;
        for (std::size_t k = 0; k < r.ranks.size(); ++k) {
          u.append(std::string_view(r.sources).substr(begin, r.source_ends[k] - begin), n, r.digests[k]);
          begin = r.source_ends[k];
        }
        if (keep_flags) std::copy(r.all_nan.begin(), r.all_nan.end(), all_nan[n].begin() + static_cast<std::ptrdiff_t>(first));
      }
      if (opts.progress) {
        opts.progress("ops=" + std::to_string(n) + " chunks " + std::to_string(wave_end) + "/" + std::to_string(chunks) +
                      " universe=" + std::to_string(u.size()));
      }
    }
    if (u.stats.raw[n] != count_trees(n)) {
      throw Error(ErrorKind::count_mismatch, "enumerated " + std::to_string(u.stats.raw[n]) + " programs with " + std::to_string(n) +
                                                 " operators, expected " + std::to_string(count_trees(n)));
    }
  }
  return u;
}

void resign_universe(Universe& u, std::size_t signature_points) {
  const auto grid = linspace(u.domain.lo, u.domain.hi, signature_points);
  const std::size_t chunk = 8192;
  const std::size_t chunks = (u.size() + chunk - 1) / chunk;
  parallel_for(chunks, [&](std::size_t c) {
    BatchEvaluator evaluator;
    std::vector<float> out(grid.size());
    for (ProgramId id = c * chunk; id < std::min<std::size_t>(u.size(), (c + 1) * chunk); ++id) {
      evaluator.evaluate(u.ast(id).prefix(), grid, out);
      u.set_digest(id, signature_digest(out));
    }
  });
  u.signature_points = signature_points;
}

std::vector<std::uint32_t> EquivalenceClassing::class_index(std::size_t universe_size) const {
  std::vector<std::uint32_t> index(universe_size, 0);
  for (std::size_t c = 0; c < class_count(); ++c) {
    for (ProgramId id : members_of(c)) index.at(id) = static_cast<std::uint32_t>(c);
  }
  return index;
}

ProgramId canonical_representative(const Universe& u, std::span<const ProgramId> ids) {
  if (ids.empty()) throw Error(ErrorKind::invalid_argument, "empty equivalence class");
  return *std::min_element(ids.begin(), ids.end(), [&](ProgramId a, ProgramId b) {
    const auto sa = u.source(a), sb = u.source(b);
    return sa.size() != sb.size() ? sa.size() < sb.size() : sa < sb;
  });
}

EquivalenceClassing partition_equivalence(const Universe& u) {
  std::vector<ProgramId> order(u.size());
  std::iota(order.begin(), order.end(), ProgramId{0});
  std::stable_sort(order.begin(), order.end(), [&](ProgramId a, ProgramId b) { return u.digest(a) < u.digest(b); });

  struct Group {
    std::size_t begin, end;
  };
  std::vector<Group> groups;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && u.digest(order[j]) == u.digest(order[i])) ++j;
    groups.push_back({i, j});
    i = j;
  }
  // Within a group ids are ascending (stable sort), so order[g.begin] is the smallest member.
  std::sort(groups.begin(), groups.end(), [&](const Group& a, const Group& b) { return order[a.begin] < order[b.begin]; });

  EquivalenceClassing out;
  out.keys.reserve(groups.size());
  out.members.reserve(u.size());
  out.representatives.reserve(groups.size());
  out.offsets.reserve(groups.size() + 1);
  for (const auto& g : groups) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(g.begin);
    const auto last = order.begin() + static_cast<std::ptrdiff_t>(g.end);
    out.keys.push_back(u.digest(*first));
    out.members.insert(out.members.end(), first, last);
    out.offsets.push_back(out.members.size());
    out.representatives.push_back(canonical_representative(u, std::span<const ProgramId>(&*first, g.end - g.begin)));
  }
  return out;
}

std::vector<float> audit_grid(const EvalDomain& domain, std::size_t points) {
  if (points == 0) throw Error(ErrorKind::invalid_argument, "audit grid needs at least one point");
  // Cell midpoints: never coincide with an equidistant signature grid of the same size.
  std::vector<float> g(points);
  const double step = (domain.hi - domain.lo) / static_cast<double>(points);
  for (std::size_t i = 0; i < points; ++i) g[i] = static_cast<float>(domain.lo + (static_cast<double>(i) + 0.5) * step);
  return g;
}

CollisionAudit audit_collisions(const Universe& u, const EquivalenceClassing& classes, std::size_t sample_classes,
                                std::size_t grid_points, std::uint64_t seed) {
  std::vector<std::size_t> multi;
  for (std::size_t c = 0; c < classes.class_count(); ++c) {
    if (classes.members_of(c).size() > 1) multi.push_back(c);
  }
  // Partial Fisher-Yates: the first `take` entries become a uniform sample without replacement.
  const std::size_t take = std::min(sample_classes, multi.size());
  auto engine = seeded_engine(seed, 0xa0d17);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_index(engine, multi.size() - i));
    std::swap(multi[i], multi[j]);
  }
  multi.resize(take);
  std::sort(multi.begin(), multi.end());

  const auto grid = audit_grid(u.domain, grid_points);
  std::vector<std::uint8_t> violated(take, 0);
  parallel_for(take, [&](std::size_t i) {
    const std::size_t c = multi[i];
    BatchEvaluator evaluator;
    std::vector<float> ref(grid.size()), other(grid.size());
    evaluator.evaluate(u.ast(classes.representatives[c]).prefix(), grid, ref);
    for (ProgramId id : classes.members_of(c)) {
      if (id == classes.representatives[c]) continue;
      evaluator.evaluate(u.ast(id).prefix(), grid, other);
      for (std::size_t k = 0; k < grid.size(); ++k) {
        if (!same_value(ref[k], other[k])) {
          violated[i] = 1;
          return;
        }
      }
    }
  });
  CollisionAudit audit;
  audit.grid_points = grid_points;
  audit.classes_checked = take;
  audit.violations = static_cast<std::size_t>(std::count(violated.begin(), violated.end(), 1));
  return audit;
}

void save_universe(const Universe& u, const std::filesystem::path& table, const std::filesystem::path& index) {
  ByteWriter w;
  w.magic("PMUN");
  w.u32(universe_version);
  w.u64(u.size());
  std::uint64_t pool_offset = 0;
  for (ProgramId id = 0; id < u.size(); ++id) {
    const auto src = u.source(id);
    w.u64(id);
    w.u8(static_cast<std::uint8_t>(u.op_count(id)));
    w.raw(u.digest(id));
    w.u64(pool_offset);
    w.u32(static_cast<std::uint32_t>(src.size()));
    pool_offset += src.size();
  }
  for (ProgramId id = 0; id < u.size(); ++id) w.raw(u.source(id));
  w.write_to(table);

  ByteWriter idx;
  idx.magic("PMIX");
  idx.u32(universe_version);
  idx.u64(u.size());
  for (ProgramId id = 0; id < u.size(); ++id) idx.u64(universe_header_bytes + id * record_bytes);
  idx.write_to(index);
}

Universe load_universe(const std::filesystem::path& table) {
  auto r = ByteReader::from_file(table);
  r.expect_magic("PMUN");
  if (r.u32() != universe_version) throw Error(ErrorKind::malformed, "unsupported universe version in " + table.string());
  const std::uint64_t count = r.u64();
  const std::size_t pool_start = universe_header_bytes + count * record_bytes;
  struct Rec {
    std::uint8_t ops;
    Digest128 digest;
    std::uint64_t offset;
    std::uint32_t len;
  };
  std::vector<Rec> recs(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (r.u64() != i) throw Error(ErrorKind::malformed, "non-dense id in " + table.string());
    recs[i].ops = r.u8();
    auto d = r.raw(16);
    std::copy(d.begin(), d.end(), recs[i].digest.begin());
    recs[i].offset = r.u64();
    recs[i].len = r.u32();
  }
  Universe u;
  std::uint64_t pool_bytes = 0;
  for (const auto& rec : recs) pool_bytes = std::max<std::uint64_t>(pool_bytes, rec.offset + rec.len);
  u.reserve(count, pool_bytes);
  r.seek(pool_start);
  const auto pool = r.raw(pool_bytes);
  for (const auto& rec : recs) {
    u.append(std::string_view(reinterpret_cast<const char*>(pool.data()) + rec.offset, rec.len), rec.ops, rec.digest);
  }
  return u;
}

void save_classes(const EquivalenceClassing& classes, const std::filesystem::path& path) {
  ByteWriter w;
  w.magic("PMCL");
  w.u32(classes_version);
  w.u64(classes.class_count());
  w.u64(classes.members.size());
  for (auto o : classes.offsets) w.u64(o);
  for (auto m : classes.members) w.u64(m);
  for (const auto& k : classes.keys) w.raw(k);
  for (auto rep : classes.representatives) w.u64(rep);
  w.write_to(path);
}

EquivalenceClassing load_classes(const std::filesystem::path& path) {
  auto r = ByteReader::from_file(path);
  r.expect_magic("PMCL");
  if (r.u32() != classes_version) throw Error(ErrorKind::malformed, "unsupported class file version in " + path.string());
  const std::uint64_t n_classes = r.u64();
  const std::uint64_t n_members = r.u64();
  EquivalenceClassing c;
  c.offsets.resize(n_classes + 1);
  for (auto& o : c.offsets) o = r.u64();
  c.members.resize(n_members);
  for (auto& m : c.members) m = r.u64();
  c.keys.resize(n_classes);
  for (auto& k : c.keys) {
    auto d = r.raw(16);
    std::copy(d.begin(), d.end(), k.begin());
  }
  c.representatives.resize(n_classes);
  for (auto& rep : c.representatives) rep = r.u64();
  return c;
}

}  // namespace progspace
