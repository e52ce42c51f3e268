#include "progspace/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <unordered_map>

#include <json.hpp>

#include "progspace/binary_io.hpp"
#include "progspace/error.hpp"
#include "progspace/evaluator.hpp"
#include "progspace/parallel.hpp"

namespace progspace {

using nlohmann::json;

const char* to_string(MatchStatus s) {
  switch (s) {
    case MatchStatus::match: return "match";
    case MatchStatus::too_long: return "too_long";
    case MatchStatus::parse_error: return "parse_error";
    case MatchStatus::invalid_output: return "invalid_output";
    case MatchStatus::mismatch: return "mismatch";
  }
  return "unknown";
}

MatchOutcome functional_match(std::string_view candidate, const TaskInstance& task, const MatchOptions& opts) {
  if (candidate.size() > opts.max_chars) return {MatchStatus::too_long, 0};
  Ast ast;
  try {
    ast = parse(candidate);
  } catch (const Error&) {
    return {MatchStatus::parse_error, 0};
  }
  for (std::size_t i = 0; i < task.spec.size(); ++i) {
    const float want = task.spec[i].y;
    const float got = eval_scalar(ast.prefix(), task.spec[i].x);
    if (!std::isfinite(got)) return {MatchStatus::invalid_output, i};
    bool equal = false;
    if (opts.relative_tolerance > 0.0) {
      const double a = got, b = want;
      equal = std::abs(a - b) <= opts.relative_tolerance * std::max(std::abs(a), std::abs(b));
    } else {
      equal = same_value(got, want);
    }
    if (!equal) return {MatchStatus::mismatch, i};
  }
  return {MatchStatus::match, 0};
}

double pass_at_k(std::uint64_t n, std::uint64_t c, std::uint64_t k) {
  if (c > n || k < 1 || k > n) {
    throw Error(ErrorKind::invalid_argument, "pass@k needs 0 <= c <= n and 1 <= k <= n (n=" + std::to_string(n) + ", c=" + std::to_string(c) +
                                                 ", k=" + std::to_string(k) + ")");
  }
  if (n - c < k) return 1.0;
  double miss = 1.0;
  for (std::uint64_t i = n - c + 1; i <= n; ++i) miss *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
  return 1.0 - miss;
}

// ---------------------------------------------------------------------------------------------

std::vector<CandidateSet> read_candidates(const std::filesystem::path& path) {
  std::vector<CandidateSet> out;
  for_each_line(path, [&](std::string_view line, std::size_t number) {
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) return;
    try {
      const auto j = json::parse(line);
      CandidateSet s;
      s.task_id = j.at("task_id").get<std::string>();
      s.candidates = j.at("candidates").get<std::vector<std::string>>();
      s.temperature = j.value("temperature", 0.0);
      s.seed = j.value("seed", std::uint64_t{0});
      s.flops = j.value("flops", 0.0);
      s.model = j.value("model", std::string());
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::malformed, path.string() + " line " + std::to_string(number) + ": " + e.what());
    }
  });
  return out;
}

void write_candidates(std::span<const CandidateSet> sets, const std::filesystem::path& path) {
  std::string text;
  for (const auto& s : sets) {
    json j = {{"task_id", s.task_id}, {"candidates", s.candidates}, {"temperature", s.temperature}, {"seed", s.seed}, {"flops", s.flops}};
    if (!s.model.empty()) j["model"] = s.model;
    text += j.dump();
    text += '\n';
  }
  write_text_file(path, text);
}

std::optional<std::size_t> RunReport::k_index(std::uint64_t k) const {
  const auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) return std::nullopt;
  return static_cast<std::size_t>(it - ks.begin());
}

double RunReport::mean_at(std::uint64_t k) const {
  const auto i = k_index(k);
  if (!i) throw Error(ErrorKind::invalid_argument, "report has no pass@" + std::to_string(k));
  return mean_pass[*i];
}

RunReport evaluate_run(std::span<const TaskInstance> tasks, std::span<const CandidateSet> candidates, std::span<const std::uint64_t> ks,
                       const MatchOptions& opts) {
  if (ks.empty()) throw Error(ErrorKind::invalid_argument, "no k values requested");
  const std::uint64_t max_k = *std::max_element(ks.begin(), ks.end());
  std::unordered_map<std::string_view, const CandidateSet*> by_task;
  for (const auto& c : candidates) {
    if (!by_task.emplace(c.task_id, &c).second) throw Error(ErrorKind::invalid_argument, "duplicate candidate set for task " + c.task_id);
  }
  std::vector<const CandidateSet*> matched(tasks.size());
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto it = by_task.find(tasks[i].task_id);
    if (it == by_task.end()) {
      missing.push_back(tasks[i].task_id);
    } else if (it->second->candidates.size() < max_k) {
      missing.push_back(tasks[i].task_id + " (only " + std::to_string(it->second->candidates.size()) + " candidates)");
    } else {
      matched[i] = it->second;
    }
  }
  if (!missing.empty()) {
    std::string msg = std::to_string(missing.size()) + " task(s) lack enough candidates, first: " + missing.front();
    throw Error(ErrorKind::missing_coverage, msg);
  }

  RunReport report;
  report.ks.assign(ks.begin(), ks.end());
  report.tasks.resize(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t i) {
    const auto& set = *matched[i];
    std::unordered_map<std::string_view, bool> seen;
    std::uint64_t c = 0;
    for (const auto& cand : set.candidates) {
      auto [it, fresh] = seen.try_emplace(cand, false);
      if (fresh) it->second = functional_match(cand, tasks[i], opts).matched();
      c += it->second ? 1 : 0;
    }
    auto& score = report.tasks[i];
    score.task_id = tasks[i].task_id;
    score.n = set.candidates.size();
    score.c = c;
    for (auto k : ks) score.pass.push_back(pass_at_k(score.n, c, k));
  });
  report.mean_pass.assign(ks.size(), 0.0);
  for (const auto& t : report.tasks) {
    for (std::size_t j = 0; j < ks.size(); ++j) report.mean_pass[j] += t.pass[j];
  }
  if (!tasks.empty()) {
    for (auto& m : report.mean_pass) m /= static_cast<double>(tasks.size());
  }
  for (const auto* s : matched) report.flops = std::max(report.flops, s->flops);
  return report;
}

std::vector<Aggregate> aggregate_runs(std::span<const RunReport> runs) {
  if (runs.empty()) return {};
  std::vector<Aggregate> out;
  for (auto k : runs.front().ks) {
    Aggregate a;
    a.k = k;
    std::vector<double> values;
    for (const auto& r : runs) values.push_back(r.mean_at(k));
    a.runs = values.size();
    for (double v : values) a.mean += v;
    a.mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(values.size()));
    out.push_back(a);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

NearestTrainSummary nn_distance_report(std::span<const ProgramId> test, std::span<const std::string> task_ids,
                                       std::span<const ProgramId> train, const EmbeddingMatrix& sem, const EmbeddingMatrix& syn,
                                       const std::vector<bool>& solved) {
  if (task_ids.size() != test.size() || solved.size() != test.size()) {
    throw Error(ErrorKind::invalid_argument, "test ids, task ids and solved flags differ in length");
  }
  if (train.empty()) throw Error(ErrorKind::invalid_argument, "nearest-train report needs a train set");
  auto check = [&](ProgramId id) {
    if (id >= sem.rows || id >= syn.rows) throw Error(ErrorKind::invalid_argument, "program id " + std::to_string(id) + " outside the universe");
  };
  for (auto id : test) check(id);
  for (auto id : train) check(id);

  NearestTrainSummary s;
  s.rows.resize(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    auto nearest = [&](const EmbeddingMatrix& m) {
      float best = std::numeric_limits<float>::infinity();
      const auto q = m.row(test[i]);
      for (auto t : train) best = std::min(best, distance(q, m.row(t)));
      return best;
    };
    s.rows[i] = {task_ids[i], test[i], nearest(sem), nearest(syn), static_cast<bool>(solved[i])};
  });
  double sem_s = 0, sem_f = 0, syn_s = 0, syn_f = 0;
  for (const auto& r : s.rows) {
    if (r.solved) {
      ++s.solved;
      sem_s += r.d_sem;
      syn_s += r.d_syn;
    } else {
      ++s.failed;
      sem_f += r.d_sem;
      syn_f += r.d_syn;
    }
  }
  const auto n = static_cast<double>(s.rows.size());
  if (n > 0) {
    s.mean_sem_all = (sem_s + sem_f) / n;
    s.mean_syn_all = (syn_s + syn_f) / n;
  }
  if (s.solved > 0) {
    s.mean_sem_solved = sem_s / static_cast<double>(s.solved);
    s.mean_syn_solved = syn_s / static_cast<double>(s.solved);
  }
  if (s.failed > 0) {
    s.mean_sem_failed = sem_f / static_cast<double>(s.failed);
    s.mean_syn_failed = syn_f / static_cast<double>(s.failed);
  }
  return s;
}

std::vector<ScalingFit> scaling_report(std::span<const ScalingPoint> points) {
  std::map<std::string, std::vector<const ScalingPoint*>> by_split;
  for (const auto& p : points) {
    if (!(p.flops > 0.0) || !std::isfinite(p.flops)) throw Error(ErrorKind::invalid_argument, "FLOPs must be positive and finite");
    by_split[p.split].push_back(&p);
  }
  std::vector<ScalingFit> out;
  for (const auto& [split, pts] : by_split) {
    std::vector<double> distinct;
    for (const auto* p : pts) distinct.push_back(p->flops);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) throw Error(ErrorKind::invalid_argument, "split " + split + " needs at least two distinct FLOPs values");
    double mx = 0, my = 0;
    for (const auto* p : pts) {
      mx += std::log10(p->flops);
      my += p->mean;
    }
    mx /= static_cast<double>(pts.size());
    my /= static_cast<double>(pts.size());
    double sxy = 0, sxx = 0;
    for (const auto* p : pts) {
      const double dx = std::log10(p->flops) - mx;
      sxy += dx * (p->mean - my);
      sxx += dx * dx;
    }
    ScalingFit f;
    f.split = split;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.points = pts.size();
    out.push_back(f);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

namespace {

std::string num(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_task_scores_csv(const RunReport& run, const std::filesystem::path& path) {
  std::string text = "task_id,n,c";
  for (auto k : run.ks) text += ",pass@" + std::to_string(k);
  text += '\n';
  for (const auto& t : run.tasks) {
    text += csv_field(t.task_id) + "," + std::to_string(t.n) + "," + std::to_string(t.c);
    for (double p : t.pass) text += "," + num(p);
    text += '\n';
  }
  write_text_file(path, text);
}

void write_aggregate_csv(std::span<const Aggregate> rows, std::string_view split, const std::filesystem::path& path) {
  std::string text = "split,k,mean,std,runs\n";
  for (const auto& a : rows) {
    text += csv_field(split) + "," + std::to_string(a.k) + "," + num(a.mean) + "," + num(a.std) + "," + std::to_string(a.runs) + "\n";
  }
  write_text_file(path, text);
}

void write_nearest_train_csv(const NearestTrainSummary& s, const std::filesystem::path& path) {
  std::string text = "task_id,program_id,d_sem,d_syn,solved\n";
  for (const auto& r : s.rows) {
    text += csv_field(r.task_id) + "," + std::to_string(r.program_id) + "," + num(r.d_sem) + "," + num(r.d_syn) + "," + (r.solved ? "1" : "0") + "\n";
  }
  write_text_file(path, text);
}

void write_scaling_csv(std::span<const ScalingPoint> points, std::span<const ScalingFit> fits, const std::filesystem::path& path) {
  std::string text = "kind,split,flops,pass1_mean,pass1_std,slope,intercept\n";
  for (const auto& p : points) text += "point," + csv_field(p.split) + "," + num(p.flops) + "," + num(p.mean) + "," + num(p.std) + ",,\n";
  for (const auto& f : fits) text += "fit," + csv_field(f.split) + ",,,," + num(f.slope) + "," + num(f.intercept) + "\n";
  write_text_file(path, text);
}

}  // namespace progspace
