// Acceptance run: one PASS/FAIL line per criterion.
//
// Builds (or reuses) an L=6 universe and a fresh L=4 smoke pipeline under
// PROGSPACE_ACCEPTANCE_DIR, then checks each criterion against those outputs.
// Exit status is 1 if any criterion fails, unless --report is given, in which case it is 0
// once every check has run (so the log can be collected by ctest).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "progspace/datasets.hpp"
#include "progspace/error.hpp"
#include "progspace/grammar.hpp"
#include "progspace/harness.hpp"
#include "progspace/pipeline.hpp"
#include "progspace/random.hpp"

using namespace progspace;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<std::pair<std::string, Outcome>> results;

void record(const std::string& name, const std::function<Outcome()>& check) {
  std::cerr << "[acceptance] checking " << name << std::endl;
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
  results.emplace_back(name, o);
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

void log_stage(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

// Counting oracle: number of prefix codes with `ops` operators filling `open` slots.
std::uint64_t oracle_count(int n) {
  std::vector<std::vector<std::uint64_t>> memo(static_cast<std::size_t>(n) + 2, std::vector<std::uint64_t>(static_cast<std::size_t>(n) + 2, 0));
  std::vector<std::vector<bool>> done(memo.size(), std::vector<bool>(memo.size(), false));
  std::function<std::uint64_t(int, int)> rec = [&](int open, int ops) -> std::uint64_t {
    if (open == 0) return ops == 0 ? 1 : 0;
    auto& m = memo[static_cast<std::size_t>(open)][static_cast<std::size_t>(ops)];
    if (done[static_cast<std::size_t>(open)][static_cast<std::size_t>(ops)]) return m;
    std::uint64_t t = rec(open - 1, ops);
    if (ops > 0) t += 5 * rec(open, ops - 1) + 4 * rec(open + 1, ops - 1);
    done[static_cast<std::size_t>(open)][static_cast<std::size_t>(ops)] = true;
    return m = t;
  };
  return rec(1, n);
}

PipelineConfig l6_config(const fs::path& root) {
  PipelineConfig c;
  c.max_ops = 6;
  c.seed = 0;
  c.output = root / "l6";
  return c;
}

PipelineConfig smoke_config(const fs::path& root) {
  auto c = load_config(fs::path(PROGSPACE_CONFIG_DIR) / "smoke.json");
  c.output = root / "smoke";
  c.threads = 0;
  return c;
}

ProgramId find_source(const Universe& u, std::string_view s) {
  for (ProgramId i = 0; i < u.size(); ++i)
    if (u.source(i) == s) return i;
  throw Error(ErrorKind::invalid_argument, "program " + std::string(s) + " not in universe");
}

double coefficient_of_variation(std::span<const ProgramId> ids, std::span<const float> values) {
  double mean = 0;
  for (auto id : ids) mean += values[id];
  mean /= static_cast<double>(ids.size());
  double ss = 0;
  for (auto id : ids) ss += (values[id] - mean) * (values[id] - mean);
  return std::sqrt(ss / static_cast<double>(ids.size())) / mean;
}

std::vector<std::string> every_split() {
  auto names = density_split_names();
  names.insert(names.end(), support_split_names().begin(), support_split_names().end());
  return names;
}

void write_run(const PipelineConfig& c, const std::string& dir, const std::function<std::string(const TaskInstance&)>& candidate) {
  for (const auto& split : every_split()) {
    std::vector<CandidateSet> sets;
    for (const auto& t : import_dataset(Layout{c.output}.dataset(split), "test")) {
      sets.push_back({t.task_id, std::vector<std::string>(10, candidate(t)), 0.0, 0, 1e15, "acceptance"});
    }
    write_candidates(sets, c.output / dir / split / "run0.jsonl");
  }
}

}  // namespace

int main(int argc, char** argv) {
  bool report_only = false;
  fs::path root = PROGSPACE_ACCEPTANCE_DIR;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--report") == 0) {
      report_only = true;
    } else if (std::strcmp(argv[i], "--workdir") == 0 && i + 1 < argc) {
      root = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--report] [--workdir DIR]\n";
      return 2;
    }
  }
  fs::create_directories(root);
  const unsigned cores = std::max(1u, std::thread::hardware_concurrency());
  std::cout << "acceptance workdir " << root.string() << ", " << cores << " hardware thread(s)" << std::endl;

  // ------------------------------------------------------------------ builds
  const auto l6 = l6_config(root);
  double l6_seconds = 0;
  bool l6_cached = false;
  json l6_summary;
  try {
    const auto t0 = Clock::now();
    const auto r = run_stage(l6, "enumerate", log_stage);
    l6_seconds = seconds_since(t0);
    l6_cached = r.at(0).skipped;
    l6_summary = json::parse(r.at(0).summary).at("summary");
  } catch (const std::exception& e) {
    std::cerr << "[acceptance] L=6 build failed: " << e.what() << std::endl;
  }

  const auto smoke = smoke_config(root);
  double smoke_seconds = -1;
  std::string smoke_error;
  {
    std::error_code ec;
    fs::remove_all(smoke.output, ec);
    try {
      const auto t0 = Clock::now();
      run_stage(smoke, "all", log_stage);
      write_run(smoke, "candidates", [](const TaskInstance& t) { return t.source; });
      run_stage(smoke, "evaluate", log_stage);
      run_stage(smoke, "analyze", log_stage);
      smoke_seconds = seconds_since(t0);
    } catch (const std::exception& e) {
      smoke_error = e.what();
    }
  }

  // ------------------------------------------------------------------ criteria
  record("enumeration correctness", [&] {
    const Enumerator e(6);
    std::vector<std::uint64_t> seen(7, 0);
    const auto t0 = Clock::now();
    e.for_each([&](const EnumeratedProgram& p) { ++seen[p.self.ops]; });
    const double secs = seconds_since(t0);
    std::uint64_t total = 0;
    bool ok = true;
    std::string per;
    for (int n = 0; n <= 6; ++n) {
      const auto oracle = oracle_count(n);
      ok = ok && seen[static_cast<std::size_t>(n)] == oracle && count_trees(n) == oracle;
      total += seen[static_cast<std::size_t>(n)];
      per += (n ? "," : "") + std::to_string(seen[static_cast<std::size_t>(n)]);
    }
    ok = ok && total == 12'619'531;
    if (!l6_summary.is_null()) ok = ok && l6_summary.at("raw_total").get<std::uint64_t>() == 12'619'531;
    ok = ok && secs <= 1800;
    return Outcome{ok, "per-count [" + per + "] total " + std::to_string(total) + " (oracle 12619531), enumeration " + fmt(secs) +
                           " s on " + std::to_string(cores) + " thread(s); universe stage raw_total " +
                           (l6_summary.is_null() ? std::string("unavailable") : l6_summary.at("raw_total").dump())};
  });

  record("universe size", [&] {
    if (l6_summary.is_null()) return Outcome{false, "L=6 build did not complete"};
    const auto size = l6_summary.at("valid_total").get<std::uint64_t>();
    const bool in_window = size >= 6'000'000 && size <= 8'000'000;
    const bool smoke_ok = smoke_error.empty() && smoke_seconds >= 0 && smoke_seconds < 600;
    return Outcome{in_window && smoke_ok,
                   "|U| at L=6 = " + std::to_string(size) + " (target window [6000000, 8000000]), build " +
                       (l6_cached ? std::string("reused from cache") : fmt(l6_seconds) + " s") + "; L=4 smoke pipeline " +
                       (smoke_error.empty() ? fmt(smoke_seconds) + " s (limit 600 s)" : "failed: " + smoke_error)};
  });

  record("equivalence soundness", [&] {
    const auto u = load_built_universe(l6.output);
    const auto classes = load_classes(Layout{l6.output}.classes());
    const auto audit = audit_collisions(u, classes, l6.audit_classes, l6.audit_grid, l6.seed_for("audit"));
    const auto idx = classes.class_index(u.size());
    const bool zero = idx[find_source(u, "(x-x)")] == idx[find_source(u, "sin((x-x))")];
    const bool ident = idx[find_source(u, "((x+x)-x)")] == idx[find_source(u, "x")];
    return Outcome{audit.rate() < 0.001 && zero && ident,
                   "audit " + std::to_string(audit.violations) + "/" + std::to_string(audit.classes_checked) + " classes violated at " +
                       std::to_string(audit.grid_points) + " points (rate " + fmt(100 * audit.rate()) + "%, limit 0.1%), signature grid " +
                       std::to_string(u.signature_points) + " points, " + std::to_string(classes.class_count()) +
                       " classes; x-x ~ sin(x-x): " + (zero ? "yes" : "no") + "; (x+x)-x ~ x: " + (ident ? "yes" : "no")};
  });

  record("embedding invariants", [&] {
    const Layout layout{smoke.output};
    const auto u = load_built_universe(smoke.output);
    const auto classes = load_classes(layout.classes());
    const auto sem = load_embeddings(layout.embeddings(Manifold::semantic));
    const auto syn = load_embeddings(layout.embeddings(Manifold::syntactic));

    std::vector<bool> flagged(syn.rows, false);
    for (auto id : syn.flagged) flagged[id] = true;
    double worst_norm = 0;
    for (std::size_t i = 0; i < syn.rows; ++i) {
      if (flagged[i]) continue;
      double s = 0;
      for (float v : syn.row(i)) s += static_cast<double>(v) * v;
      worst_norm = std::max(worst_norm, std::abs(std::sqrt(s) - 1.0));
    }

    float worst_sem = 0;
    std::string witness;
    for (std::size_t c = 0; c < classes.class_count(); ++c) {
      const auto m = classes.members_of(c);
      for (auto id : m) {
        worst_sem = std::max(worst_sem, distance(sem.row(id), sem.row(m.front())));
        if (witness.empty() && id != m.front() && distance(syn.row(id), syn.row(m.front())) > 0.0f) {
          witness = std::string(u.source(m.front())) + " vs " + std::string(u.source(id)) + " (d_syn " +
                    fmt(distance(syn.row(id), syn.row(m.front()))) + ")";
        }
      }
    }

    std::mt19937_64 g(2024);
    double worst_metric = 0;
    for (const auto* m : {&sem, &syn}) {
      for (int t = 0; t < 100'000; ++t) {
        const auto a = m->row(uniform_index(g, m->rows));
        const auto b = m->row(uniform_index(g, m->rows));
        const auto c = m->row(uniform_index(g, m->rows));
        const double ab = distance(a, b), ba = distance(b, a), bc = distance(b, c), ac = distance(a, c);
        worst_metric = std::max({worst_metric, -ab, std::abs(ab - ba), ac - (ab + bc), static_cast<double>(distance(a, a))});
      }
    }
    const bool ok = worst_norm <= 1e-4 && worst_sem == 0.0f && !witness.empty() && worst_metric <= 1e-5;
    return Outcome{ok, "L=4 build: max |norm-1| " + fmt(worst_norm) + " over " + std::to_string(syn.rows - syn.flagged.size()) + " rows (" +
                           std::to_string(syn.flagged.size()) + " flagged); max within-class d_sem " + fmt(worst_sem) + "; witness " +
                           (witness.empty() ? std::string("none") : witness) + "; worst metric-axiom violation " + fmt(worst_metric) +
                           " over 2x100000 triples"};
  });

  record("sampling flattening", [&] {
    const Layout layout{smoke.output};
    const auto dk_sem = load_embeddings(layout.densities(Manifold::semantic));
    const auto dk_syn = load_embeddings(layout.densities(Manifold::syntactic));
    std::vector<ProgramId> all(dk_sem.rows);
    std::iota(all.begin(), all.end(), ProgramId{0});
    const std::size_t m = 1000;
    std::string detail;
    bool ok = true;
    for (const auto* dk : {&dk_sem, &dk_syn}) {
      int wins = 0;
      double cv_inv = 0, cv_uni = 0;
      for (std::uint64_t t = 0; t < 100; ++t) {
        const auto inv = inverse_density_sample(all, dk->data, m, combine_keys(t, 1));
        const auto uni = uniform_sample(all, m, combine_keys(t, 2));
        const double a = coefficient_of_variation(inv, dk->data);
        const double b = coefficient_of_variation(uni, dk->data);
        wins += a < b;
        cv_inv += a / 100;
        cv_uni += b / 100;
      }
      ok = ok && wins >= 95;
      detail += std::string(detail.empty() ? "" : "; ") + to_string(dk->manifold) + " " + std::to_string(wins) + "/100 trials (mean CV " +
                fmt(cv_inv) + " vs uniform " + fmt(cv_uni) + ")";
    }
    return Outcome{ok, "L=4, m=" + std::to_string(m) + ": " + detail};
  });

  record("split geometry", [&] {
    const Layout layout{smoke.output};
    bool ok = true;
    std::string detail;
    for (const auto& name : density_split_names()) {
      const auto s = load_split(layout.splits(), name);
      std::vector<ProgramId> both;
      std::set_intersection(s.train.begin(), s.train.end(), s.test.begin(), s.test.end(), std::back_inserter(both));
      const bool good = both.empty() && s.train.size() == smoke.density_sizes.train && s.test.size() == smoke.density_sizes.test;
      ok = ok && good;
      detail += name + (good ? " ok" : " BAD") + ", ";
    }
    for (const auto manifold : {Manifold::semantic, Manifold::syntactic}) {
      const auto rows = load_embeddings(layout.embeddings(manifold));
      const auto part = geometric_partition(rows, smoke.inside_fraction);
      const double n = static_cast<double>(rows.rows - part.excluded.size());
      const double frac_err = std::abs(static_cast<double>(part.inside.size()) - smoke.inside_fraction * n);
      const std::string prefix = to_string(manifold);
      const auto interp = load_split(layout.splits(), prefix + "-interp");
      const auto extrap = load_split(layout.splits(), prefix + "-extrap");
      float closest = std::numeric_limits<float>::infinity();
      for (auto id : extrap.test) closest = std::min(closest, distance(rows.row(id), part.centroid));
      bool inside_ok = true;
      for (auto id : interp.train) inside_ok = inside_ok && distance(rows.row(id), part.centroid) <= part.radius;
      for (auto id : interp.test) inside_ok = inside_ok && distance(rows.row(id), part.centroid) <= part.radius;
      const bool good = frac_err <= 1.0 && closest > part.radius && extrap.radius == part.radius && inside_ok &&
                        extrap.test.size() == smoke.support_sizes.test && interp.train.size() == smoke.support_sizes.train;
      ok = ok && good;
      detail += prefix + ": |S_in|=" + std::to_string(part.inside.size()) + " of " + std::to_string(static_cast<std::size_t>(n)) +
                " (off by " + fmt(frac_err) + "), r=" + fmt(part.radius) + ", min extrap d=" + fmt(closest) + (good ? "" : " BAD") +
                (manifold == Manifold::semantic ? ", " : "");
    }
    return Outcome{ok, "L=4 build: " + detail};
  });

  record("pass@k estimator", [&] {
    double worst = 0;
    for (unsigned n = 1; n <= 12; ++n) {
      for (unsigned c = 0; c <= n; ++c) {
        for (unsigned k = 1; k <= n; ++k) {
          std::uint64_t hit = 0, total = 0;
          for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
            if (static_cast<unsigned>(__builtin_popcount(mask)) != k) continue;
            ++total;
            hit += (mask & ((1u << c) - 1)) != 0;
          }
          worst = std::max(worst, std::abs(pass_at_k(n, c, k) - static_cast<double>(hit) / static_cast<double>(total)));
        }
      }
    }
    const double ex = pass_at_k(10, 3, 5);
    return Outcome{worst <= 1e-12 && std::abs(ex - 0.916667) < 5e-7,
                   "max deviation from subset enumeration " + fmt(worst) + " (n<=12); pass@5(10,3) = " + fmt(ex, 7)};
  });

  record("harness end-to-end", [&] {
    if (!smoke_error.empty()) return Outcome{false, "smoke pipeline failed: " + smoke_error};
    const auto truth = json::parse(std::ifstream(smoke.output / "evaluate" / "manifest.json")).at("summary");
    double worst_truth = 1;
    for (const auto& split : every_split()) worst_truth = std::min(worst_truth, truth.at(split).at("pass@1").at("mean").get<double>());

    auto junk = smoke;
    junk.candidates_dir = "junk-candidates";
    write_run(junk, "junk-candidates", [](const TaskInstance&) { return std::string("sin(x+"); });
    run_stage(junk, "evaluate", log_stage);
    const auto bad = json::parse(std::ifstream(smoke.output / "evaluate" / "manifest.json")).at("summary");
    double best_junk = 0;
    for (const auto& split : every_split()) {
      for (const auto& [k, v] : bad.at(split).items()) best_junk = std::max(best_junk, v.at("mean").get<double>());
    }
    return Outcome{worst_truth == 1.0 && best_junk == 0.0, "ground-truth candidates: min pass@1 over 7 splits " + fmt(worst_truth) +
                                                               "; unparseable candidates: max pass@k " + fmt(best_junk)};
  });

  std::size_t failed = 0;
  for (const auto& [name, o] : results) failed += !o.pass;
  std::cout << results.size() - failed << "/" << results.size() << " criteria passed" << std::endl;
  return failed == 0 || report_only ? 0 : 1;
}
