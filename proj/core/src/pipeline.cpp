#include "progspace/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "progspace/binary_io.hpp"
#include "progspace/datasets.hpp"
#include "progspace/digest.hpp"
#include "progspace/error.hpp"
#include "progspace/grammar.hpp"
#include "progspace/manifolds.hpp"
#include "progspace/parallel.hpp"
#include "progspace/random.hpp"
#include "progspace/universe.hpp"

namespace progspace {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------------------------
// Configuration

std::uint64_t PipelineConfig::seed_for(std::string_view component) const { return combine_keys(seed, fnv1a64(component)); }

void PipelineConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorKind::invalid_argument, "config: " + what); };
  if (max_ops < 0 || max_ops > 8) bad("max_ops must be in [0, 8]");
  try {
    domain.validate();
  } catch (const Error& e) {
    bad(e.what());
  }
  if (signature_points < 1) bad("universe.signature_points must be positive");
  if (max_signature_points < signature_points) bad("audit.max_signature_points is below universe.signature_points");
  if (semantic_grid < 2) bad("embedding.semantic_grid must be at least 2");
  if (embedding_dim < 1 || embedding_dim > semantic_grid + 1) bad("embedding.dim must be in [1, semantic_grid + 1]");
  if (pq_p < 1 || pq_q < 1) bad("embedding.pq_p and pq_q must be positive");
  if (hash_dim == 0 || (hash_dim & (hash_dim - 1)) != 0) bad("embedding.hash_dim must be a power of two");
  if (embedding_dim > hash_dim) bad("embedding.dim exceeds hash_dim");
  if (semantic_fit_rows == 0 || syntactic_fit_rows == 0) bad("fit row counts must be positive");
  if (knn_k < 1) bad("density.k must be positive");
  if (!(pool_fraction > 0.0 && pool_fraction < 1.0)) bad("splits.pool_fraction must be in (0, 1)");
  if (!(inside_fraction > 0.0 && inside_fraction < 1.0)) bad("splits.inside_fraction must be in (0, 1)");
  if (density_sizes.train == 0 || density_sizes.test == 0 || support_sizes.train == 0 || support_sizes.test == 0) bad("split sizes must be positive");
  if (ks.empty()) bad("evaluate.ks is empty");
  for (auto k : ks) {
    if (k == 0) bad("evaluate.ks entries must be positive");
  }
  if (relative_tolerance < 0.0) bad("evaluate.relative_tolerance must be non-negative");
  for (const auto& s : all_stages) {
    if (std::find(stage_names().begin(), stage_names().end(), s) == stage_names().end()) bad("unknown stage '" + s + "'");
  }
  const auto& dn = density_split_names();
  const auto& sn = support_split_names();
  for (const auto& s : evaluate_splits) {
    if (std::find(dn.begin(), dn.end(), s) == dn.end() && std::find(sn.begin(), sn.end(), s) == sn.end()) bad("unknown split '" + s + "'");
  }
}

namespace {

// Strict object reader: every key must be consumed, so typos surface as errors.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorKind::invalid_argument, "config: " + where() + " must be an object");
  }
  template <typename T>
  void get(const char* key, T& out) {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    used_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw Error(ErrorKind::invalid_argument, "config: " + where(key) + " has the wrong type");
    }
  }
  std::optional<Reader> object(const char* key) {
    const auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    used_.insert(key);
    return Reader(*it, where(key));
  }
  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw Error(ErrorKind::invalid_argument, "config: unknown key " + where(k));
    }
  }

 private:
  std::string where(std::string_view key = {}) const {
    std::string p = path_.empty() ? std::string(key) : path_ + (key.empty() ? "" : "." + std::string(key));
    return p.empty() ? "<root>" : p;
  }
  const json& j_;
  std::string path_;
  std::set<std::string, std::less<>> used_;
};

void read_sizes(Reader& r, SplitSizes& s) {
  r.get("train", s.train);
  r.get("test", s.test);
  r.finish();
}

}  // namespace

PipelineConfig config_from_json_text(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_argument, std::string("config: ") + e.what());
  }
  PipelineConfig c;
  Reader root(j, "");
  root.get("max_ops", c.max_ops);
  root.get("seed", c.seed);
  std::string output = c.output.string();
  root.get("output", output);
  c.output = output;
  root.get("threads", c.threads);
  root.get("stages", c.all_stages);
  if (auto r = root.object("domain")) {
    r->get("lo", c.domain.lo);
    r->get("hi", c.domain.hi);
    r->get("attempts", c.domain.attempts);
    r->get("pairs", c.domain.pairs);
    r->finish();
  }
  if (auto r = root.object("universe")) {
    r->get("signature_points", c.signature_points);
    r->get("screen_points", c.screen_points);
    r->get("early_reject", c.early_reject);
    r->finish();
  }
  if (auto r = root.object("audit")) {
    r->get("classes", c.audit_classes);
    r->get("grid_points", c.audit_grid);
    r->get("threshold", c.audit_threshold);
    r->get("max_signature_points", c.max_signature_points);
    r->finish();
  }
  if (auto r = root.object("embedding")) {
    r->get("dim", c.embedding_dim);
    r->get("semantic_grid", c.semantic_grid);
    r->get("semantic_fit_rows", c.semantic_fit_rows);
    r->get("pq_p", c.pq_p);
    r->get("pq_q", c.pq_q);
    r->get("hash_dim", c.hash_dim);
    r->get("syntactic_fit_rows", c.syntactic_fit_rows);
    r->finish();
  }
  if (auto r = root.object("density")) {
    r->get("k", c.knn_k);
    r->get("exact_limit", c.knn_exact_limit);
    r->finish();
  }
  if (auto r = root.object("splits")) {
    r->get("pool_fraction", c.pool_fraction);
    r->get("inside_fraction", c.inside_fraction);
    if (auto s = r->object("density")) read_sizes(*s, c.density_sizes);
    if (auto s = r->object("support")) read_sizes(*s, c.support_sizes);
    r->finish();
  }
  if (auto r = root.object("export")) {
    r->get("gzip", c.gzip);
    r->finish();
  }
  if (auto r = root.object("evaluate")) {
    r->get("ks", c.ks);
    r->get("max_chars", c.max_candidate_chars);
    r->get("relative_tolerance", c.relative_tolerance);
    r->get("candidates", c.candidates_dir);
    r->get("splits", c.evaluate_splits);
    r->finish();
  }
  root.finish();
  c.validate();
  return c;
}

namespace {

json sizes_json(const SplitSizes& s) { return {{"train", s.train}, {"test", s.test}}; }
json domain_json(const EvalDomain& d) { return {{"lo", d.lo}, {"hi", d.hi}, {"attempts", d.attempts}, {"pairs", d.pairs}}; }

json config_json(const PipelineConfig& c) {
  return {
      {"max_ops", c.max_ops},
      {"seed", c.seed},
      {"output", c.output.string()},
      {"threads", c.threads},
      {"stages", c.all_stages},
      {"domain", domain_json(c.domain)},
      {"universe", {{"signature_points", c.signature_points}, {"screen_points", c.screen_points}, {"early_reject", c.early_reject}}},
      {"audit",
       {{"classes", c.audit_classes}, {"grid_points", c.audit_grid}, {"threshold", c.audit_threshold}, {"max_signature_points", c.max_signature_points}}},
      {"embedding",
       {{"dim", c.embedding_dim},
        {"semantic_grid", c.semantic_grid},
        {"semantic_fit_rows", c.semantic_fit_rows},
        {"pq_p", c.pq_p},
        {"pq_q", c.pq_q},
        {"hash_dim", c.hash_dim},
        {"syntactic_fit_rows", c.syntactic_fit_rows}}},
      {"density", {{"k", c.knn_k}, {"exact_limit", c.knn_exact_limit}}},
      {"splits",
       {{"pool_fraction", c.pool_fraction},
        {"inside_fraction", c.inside_fraction},
        {"density", sizes_json(c.density_sizes)},
        {"support", sizes_json(c.support_sizes)}}},
      {"export", {{"gzip", c.gzip}}},
      {"evaluate",
       {{"ks", c.ks},
        {"max_chars", c.max_candidate_chars},
        {"relative_tolerance", c.relative_tolerance},
        {"candidates", c.candidates_dir},
        {"splits", c.evaluate_splits}}},
  };
}

}  // namespace

std::string config_to_json_text(const PipelineConfig& c) { return config_json(c).dump(2) + "\n"; }

void apply_environment(PipelineConfig& c) {
  if (const char* out = std::getenv("PROGSPACE_OUTPUT"); out != nullptr && *out != '\0') c.output = out;
  if (const char* t = std::getenv("PROGSPACE_THREADS"); t != nullptr && *t != '\0') {
    try {
      std::size_t used = 0;
      const long v = std::stol(t, &used);
      if (used != std::string_view(t).size() || v < 0) throw std::invalid_argument(t);
      c.threads = static_cast<unsigned>(v);
    } catch (const std::exception&) {
      throw Error(ErrorKind::invalid_argument, std::string("PROGSPACE_THREADS must be a non-negative integer, got '") + t + "'");
    }
  }
}

PipelineConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::invalid_argument, std::string("config: ") + e.what());
  }
  auto c = config_from_json_text(text);
  apply_environment(c);
  return c;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument:
    case ErrorKind::syntax:
    case ErrorKind::arity: return 2;
    case ErrorKind::stale_upstream: return 3;
    case ErrorKind::capacity: return 4;
    case ErrorKind::io:
    case ErrorKind::malformed: return 5;
    case ErrorKind::missing_coverage: return 6;
    case ErrorKind::hash_mismatch: return 7;
    case ErrorKind::budget_exhausted:
    case ErrorKind::count_mismatch: return 1;
  }
  return 1;
}

// ---------------------------------------------------------------------------------------------
// Stage bookkeeping

namespace {

std::string key_of(const json& params) { return to_hex(sha256(params.dump())); }

std::string rel_path(const fs::path& root, const fs::path& p) { return fs::relative(p, root).generic_string(); }

bool write_if_changed(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (fs::exists(path, ec)) {
    try {
      if (read_text_file(path) == text) return false;
    } catch (const Error&) {
    }
  }
  fs::create_directories(path.parent_path());
  write_text_file(path, text);
  return true;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::malformed, path.string() + ": " + e.what());
  }
}

struct StageContext {
  const PipelineConfig& config;
  Layout layout;
  const std::function<void(const std::string&)>& log;

  void say(const std::string& msg) const {
    if (log) log(msg);
  }
};

// Parameters each stage reads, chained through upstream keys.
// Bumped when a stage's outputs change for the same parameters.
constexpr int enumerate_format = 3;
constexpr int embed_format = 2;

json enumerate_params(const PipelineConfig& c) {
  return {{"format", enumerate_format},
          {"grammar", grammar_hash()},
          {"max_ops", c.max_ops},
          {"domain", domain_json(c.domain)},
          {"seed", c.seed_for("universe")},
          {"signature_points", c.signature_points},
          {"screen_points", c.screen_points},
          {"early_reject", c.early_reject},
          {"audit", {{"classes", c.audit_classes}, {"grid", c.audit_grid}, {"threshold", c.audit_threshold}, {"max_points", c.max_signature_points}, {"seed", c.seed_for("audit")}}}};
}
json embed_params(const PipelineConfig& c) {
  return {{"format", embed_format},
          {"upstream", key_of(enumerate_params(c))},
          {"dim", c.embedding_dim},
          {"semantic", {{"grid", c.semantic_grid}, {"fit_rows", c.semantic_fit_rows}, {"seed", c.seed_for("semantic")}}},
          {"syntactic",
           {{"p", c.pq_p}, {"q", c.pq_q}, {"hash_dim", c.hash_dim}, {"hash_seed", c.seed_for("hash")}, {"fit_rows", c.syntactic_fit_rows}, {"seed", c.seed_for("syntactic")}}},
          {"knn", {{"k", c.knn_k}, {"exact_limit", c.knn_exact_limit}, {"seed", c.seed_for("knn")}}}};
}
json split_params(const PipelineConfig& c) {
  return {{"upstream", key_of(embed_params(c))},
          {"pool_fraction", c.pool_fraction},
          {"inside_fraction", c.inside_fraction},
          {"density", sizes_json(c.density_sizes)},
          {"support", sizes_json(c.support_sizes)},
          {"seeds", {{"pool", c.seed_for("pool")}, {"density", c.seed_for("density")}, {"support", c.seed_for("support")}}}};
}
json export_params(const PipelineConfig& c) {
  return {{"upstream", key_of(split_params(c))}, {"domain", domain_json(c.domain)}, {"validity_seed", c.seed_for("universe")}, {"gzip", c.gzip}};
}

std::vector<std::string> all_split_names() {
  auto names = density_split_names();
  const auto& s = support_split_names();
  names.insert(names.end(), s.begin(), s.end());
  return names;
}

std::vector<std::string> evaluated_splits(const PipelineConfig& c) { return c.evaluate_splits.empty() ? all_split_names() : c.evaluate_splits; }

fs::path candidates_root(const PipelineConfig& c) {
  const fs::path p(c.candidates_dir);
  return p.is_absolute() ? p : c.output / p;
}

// Candidate run files of one split, sorted by name.
std::vector<fs::path> candidate_runs(const PipelineConfig& c, const std::string& split) {
  std::vector<fs::path> out;
  const auto dir = candidates_root(c) / split;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && (name.ends_with(".jsonl") || name.ends_with(".jsonl.gz"))) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string run_name(const fs::path& p) {
  auto name = p.filename().string();
  for (const char* ext : {".jsonl.gz", ".jsonl"}) {
    if (name.ends_with(ext)) return name.substr(0, name.size() - std::string_view(ext).size());
  }
  return name;
}

json evaluate_params(const PipelineConfig& c) {
  json files = json::object();
  for (const auto& split : evaluated_splits(c)) {
    json runs = json::object();
    for (const auto& f : candidate_runs(c, split)) runs[f.filename().string()] = to_hex(sha256_file(f));
    files[split] = runs;
  }
  return {{"upstream", key_of(export_params(c))},
          {"ks", c.ks},
          {"max_chars", c.max_candidate_chars},
          {"relative_tolerance", c.relative_tolerance},
          {"candidates", files}};
}
json analyze_params(const PipelineConfig& c) { return {{"upstream", key_of(evaluate_params(c))}}; }

json params_for(const PipelineConfig& c, std::string_view stage) {
  if (stage == "enumerate") return enumerate_params(c);
  if (stage == "embed") return embed_params(c);
  if (stage == "split") return split_params(c);
  if (stage == "export") return export_params(c);
  if (stage == "evaluate") return evaluate_params(c);
  if (stage == "analyze") return analyze_params(c);
  throw Error(ErrorKind::invalid_argument, "unknown stage '" + std::string(stage) + "'");
}

std::string upstream_of(std::string_view stage) {
  if (stage == "embed") return "enumerate";
  if (stage == "split") return "embed";
  if (stage == "export") return "split";
  if (stage == "evaluate") return "export";
  if (stage == "analyze") return "evaluate";
  return {};
}

// Completed stage manifest whose key and files still match, if any.
std::optional<json> current_manifest(const Layout& layout, std::string_view stage, const std::string& key) {
  const auto path = layout.stage_manifest(stage);
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  json m;
  try {
    m = read_json(path);
  } catch (const Error&) {
    return std::nullopt;
  }
  if (m.value("stage_key", std::string()) != key) return std::nullopt;
  for (const auto& f : m.at("files")) {
    const auto p = layout.root / f.at("path").get<std::string>();
    if (!fs::exists(p, ec) || fs::file_size(p, ec) != f.at("bytes").get<std::uint64_t>()) return std::nullopt;
  }
  return m;
}

void require_upstream(const StageContext& ctx, std::string_view stage) {
  const auto up = upstream_of(stage);
  if (up.empty()) return;
  const auto key = key_of(params_for(ctx.config, up));
  if (!current_manifest(ctx.layout, up, key)) {
    std::error_code ec;
    const bool present = fs::exists(ctx.layout.stage_manifest(up), ec);
    throw Error(ErrorKind::stale_upstream, "stage " + std::string(stage) + " needs stage " + up +
                                               (present ? ", whose outputs were built from a different configuration" : ", which has not run") +
                                               "; run it first");
  }
}

class ManifestBuilder {
 public:
  ManifestBuilder(const StageContext& ctx, std::string stage, std::string key) : ctx_(ctx), stage_(std::move(stage)), key_(std::move(key)) {}

  void add(const fs::path& p) {
    files_.push_back({{"path", rel_path(ctx_.layout.root, p)}, {"bytes", fs::file_size(p)}, {"sha256", to_hex(sha256_file(p))}});
  }
  json& summary() { return summary_; }
  json& extra() { return extra_; }

  json finish() {
    json m = {{"stage", stage_}, {"stage_key", key_}, {"params", params_for(ctx_.config, stage_)}, {"files", files_}, {"summary", summary_}};
    for (const auto& [k, v] : extra_.items()) m[k] = v;
    write_if_changed(ctx_.layout.stage_manifest(stage_), m.dump(2) + "\n");
    return m;
  }

 private:
  const StageContext& ctx_;
  std::string stage_;
  std::string key_;
  json files_ = json::array();
  json summary_ = json::object();
  json extra_ = json::object();
};

void update_root_manifest(const Layout& layout) {
  json stages = json::object();
  std::error_code ec;
  for (const auto& s : stage_names()) {
    const auto path = layout.stage_manifest(s);
    if (!fs::exists(path, ec)) continue;
    stages[s] = {{"manifest", rel_path(layout.root, path)}, {"sha256", to_hex(sha256_file(path))}};
  }
  const json root = {{"format", "progspace-build/1"}, {"grammar_hash", grammar_hash()}, {"stages", stages}};
  write_if_changed(layout.root / "manifest.json", root.dump(2) + "\n");
}

// ---------------------------------------------------------------------------------------------
// Stages

json stats_json(const UniverseStats& s) {
  return {{"raw", s.raw},
          {"valid", s.valid},
          {"raw_total", s.raw_total()},
          {"valid_total", s.valid_total()},
          {"screened_out", s.screened_out},
          {"hopeless", s.hopeless},
          {"exhausted", s.exhausted}};
}

json audit_json(const CollisionAudit& a, std::size_t signature_points) {
  return {{"signature_points", signature_points}, {"grid_points", a.grid_points}, {"classes_checked", a.classes_checked}, {"violations", a.violations}, {"rate", a.rate()}};
}

void stage_enumerate(const StageContext& ctx, ManifestBuilder& mb) {
  const auto& c = ctx.config;
  UniverseBuildOptions opts;
  opts.max_ops = c.max_ops;
  opts.domain = c.domain;
  opts.seed = c.seed_for("universe");
  opts.signature_points = c.signature_points;
  opts.validity.screen_points = c.screen_points;
  opts.validity.early_reject = c.early_reject;
  opts.progress = ctx.log;
  auto u = build_universe(opts);
  ctx.say("universe: " + std::to_string(u.size()) + " valid of " + std::to_string(u.stats.raw_total()) + " enumerated");

  auto classes = partition_equivalence(u);
  json audits = json::array();
  for (;;) {
    const auto audit = audit_collisions(u, classes, c.audit_classes, c.audit_grid, c.seed_for("audit"));
    audits.push_back(audit_json(audit, u.signature_points));
    ctx.say("collision audit at " + std::to_string(u.signature_points) + " points: " + std::to_string(audit.violations) + "/" +
            std::to_string(audit.classes_checked) + " classes violated");
    if (audit.rate() < c.audit_threshold || u.signature_points * 2 > c.max_signature_points) break;
    resign_universe(u, u.signature_points * 2);
    classes = partition_equivalence(u);
  }

  const auto dir = ctx.layout.stage_dir("enumerate");
  fs::create_directories(dir);
  save_universe(u, ctx.layout.universe_table(), ctx.layout.universe_index());
  save_classes(classes, ctx.layout.classes());
  write_text_file(dir / "grammar.txt", grammar_description());
  const json stats = {{"stats", stats_json(u.stats)}, {"classes", classes.class_count()}, {"audits", audits}};
  write_text_file(dir / "stats.json", stats.dump(2) + "\n");
  for (const auto& p : {ctx.layout.universe_table(), ctx.layout.universe_index(), ctx.layout.classes(), dir / "grammar.txt", dir / "stats.json"}) mb.add(p);

  mb.extra()["universe"] = {{"max_ops", c.max_ops},
                            {"domain", domain_json(c.domain)},
                            {"seed", opts.seed},
                            {"signature_points", u.signature_points},
                            {"grammar_hash", grammar_hash()},
                            {"universe_hash", to_hex(sha256_file(ctx.layout.universe_table()))}};
  mb.summary() = {{"raw_total", u.stats.raw_total()}, {"raw", u.stats.raw}, {"valid_total", u.size()}, {"classes", classes.class_count()},
                  {"signature_points", u.signature_points}, {"audit_rate", audits.back().at("rate")}};
}

std::string universe_hash(const Layout& layout) {
  return read_json(layout.stage_manifest("enumerate")).at("universe").at("universe_hash").get<std::string>();
}

void stage_embed(const StageContext& ctx, ManifestBuilder& mb) {
  const auto& c = ctx.config;
  const auto u = load_built_universe(ctx.layout.root);
  const auto dir = ctx.layout.stage_dir("embed");
  fs::create_directories(dir);

  SemanticFitOptions so;
  so.grid_points = c.semantic_grid;
  so.dim = c.embedding_dim;
  so.fit_rows = c.semantic_fit_rows;
  so.seed = c.seed_for("semantic");
  so.warn = ctx.log;
  ctx.say("fitting semantic PCA");
  const auto sem_model = fit_semantic(u, so);
  const auto sem = embed_semantic(u, sem_model, load_classes(ctx.layout.classes()));

  SyntacticFitOptions yo;
  yo.p = c.pq_p;
  yo.q = c.pq_q;
  yo.hash_dim = c.hash_dim;
  yo.hash_seed = c.seed_for("hash");
  yo.dim = c.embedding_dim;
  yo.fit_rows = c.syntactic_fit_rows;
  yo.seed = c.seed_for("syntactic");
  yo.warn = ctx.log;
  ctx.say("fitting syntactic SVD");
  const auto syn_model = fit_syntactic(u, yo);
  const auto syn = embed_syntactic(u, syn_model);
  if (!syn.flagged.empty()) ctx.say("warning: " + std::to_string(syn.flagged.size()) + " programs have a zero syntactic projection");

  save_semantic_model(sem_model, dir / "semantic.model");
  save_syntactic_model(syn_model, dir / "syntactic.model");
  save_embeddings(sem, ctx.layout.embeddings(Manifold::semantic));
  save_embeddings(syn, ctx.layout.embeddings(Manifold::syntactic));

  KnnOptions ko;
  ko.k = c.knn_k;
  ko.exact_limit = c.knn_exact_limit;
  ko.seed = c.seed_for("knn");
  json knn = json::object();
  for (const auto* m : {&sem, &syn}) {
    ctx.say(std::string("k-NN densities on ") + to_string(m->manifold));
    const auto r = knn_mean_distance(*m, ko);
    EmbeddingMatrix dk(m->manifold, m->rows, 1);
    dk.data = r.mean_distance;
    save_embeddings(dk, ctx.layout.densities(m->manifold));
    knn[to_string(m->manifold)] = {{"exact", r.exact}, {"nprobe", r.nprobe}, {"audit_error", r.audit_error}};
  }
  for (const auto& p : {dir / "semantic.model", dir / "syntactic.model", ctx.layout.embeddings(Manifold::semantic),
                        ctx.layout.embeddings(Manifold::syntactic), ctx.layout.densities(Manifold::semantic), ctx.layout.densities(Manifold::syntactic)}) {
    mb.add(p);
  }
  mb.summary() = {{"rows", u.size()},
                  {"dim", c.embedding_dim},
                  {"semantic_degenerate", sem_model.degenerate},
                  {"syntactic_degenerate", syn_model.degenerate},
                  {"syntactic_flagged", syn.flagged.size()},
                  {"knn", knn}};
}

void stage_split(const StageContext& ctx, ManifestBuilder& mb) {
  const auto& c = ctx.config;
  const auto classes = load_classes(ctx.layout.classes());
  const auto sem = load_embeddings(ctx.layout.embeddings(Manifold::semantic));
  const auto syn = load_embeddings(ctx.layout.embeddings(Manifold::syntactic));
  const auto dk_sem = load_embeddings(ctx.layout.densities(Manifold::semantic));
  const auto dk_syn = load_embeddings(ctx.layout.densities(Manifold::syntactic));
  const auto uhash = universe_hash(ctx.layout);

  const auto pool = global_pool(sem.rows, c.seed_for("pool"), c.pool_fraction);
  auto splits = build_density_splits({&classes, dk_sem.data, dk_syn.data}, pool, c.density_sizes, c.seed_for("density"), c.knn_k);
  json partitions = json::object();
  for (const auto* m : {&sem, &syn}) {
    const auto part = geometric_partition(*m, c.inside_fraction);
    auto s = build_support_splits(part, c.support_sizes, c.seed_for("support"), c.inside_fraction);
    splits.insert(splits.end(), s.begin(), s.end());
    partitions[to_string(m->manifold)] = {{"centroid", part.centroid},
                                          {"radius", part.radius},
                                          {"inside", part.inside.size()},
                                          {"outside", part.outside.size()},
                                          {"beyond_radius", part.beyond_radius().size()},
                                          {"excluded", part.excluded.size()}};
  }
  const auto dir = ctx.layout.splits();
  fs::create_directories(dir);
  json counts = json::object();
  for (auto& s : splits) {
    s.universe_hash = uhash;
    save_split(s, dir);
    for (const auto& suffix : {".json", ".train.ids", ".test.ids"}) mb.add(dir / (s.name + suffix));
    counts[s.name] = {{"train", s.train.size()}, {"test", s.test.size()}};
  }
  write_text_file(dir / "partitions.json", partitions.dump(2) + "\n");
  mb.add(dir / "partitions.json");
  mb.summary() = {{"pool", {{"train", pool.train.size()}, {"test", pool.test.size()}}}, {"splits", counts}};
}

void stage_export(const StageContext& ctx, ManifestBuilder& mb) {
  const auto& c = ctx.config;
  const auto u = load_built_universe(ctx.layout.root);
  ExportOptions eo;
  eo.domain = c.domain;
  eo.validity_seed = c.seed_for("universe");
  eo.gzip = c.gzip;
  json counts = json::object();
  for (const auto& name : all_split_names()) {
    ctx.say("exporting " + name);
    const auto split = load_split(ctx.layout.splits(), name);
    const auto dir = ctx.layout.dataset(name);
    const auto m = export_dataset(split, u, dir, eo);
    for (const auto& f : m.files) mb.add(dir / f.file);
    mb.add(dir / "manifest.json");
    counts[name] = {{"train", m.file("train").count}, {"test", m.file("test").count}};
  }
  mb.summary() = {{"datasets", counts}};
}

void stage_evaluate(const StageContext& ctx, ManifestBuilder& mb) {
  const auto& c = ctx.config;
  MatchOptions mo;
  mo.max_chars = c.max_candidate_chars;
  mo.relative_tolerance = c.relative_tolerance;
  std::vector<std::string> missing;
  for (const auto& split : evaluated_splits(c)) {
    if (candidate_runs(c, split).empty()) missing.push_back(split);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw Error(ErrorKind::missing_coverage, "no candidate files under " + candidates_root(c).string() + " for split(s): " + list);
  }

  const auto out = ctx.layout.reports();
  json runs = json::array();
  std::string summary_csv = "split,k,mean,std,runs\n";
  json summary = json::object();
  for (const auto& split : evaluated_splits(c)) {
    const auto tasks = import_dataset(ctx.layout.dataset(split), "test");
    std::vector<RunReport> reports;
    fs::create_directories(out / split);
    for (const auto& file : candidate_runs(c, split)) {
      const auto name = run_name(file);
      ctx.say("evaluating " + split + "/" + name);
      const auto cands = read_candidates(file);
      auto report = evaluate_run(tasks, cands, c.ks, mo);
      const auto csv = out / split / (name + ".tasks.csv");
      write_task_scores_csv(report, csv);
      mb.add(csv);
      runs.push_back({{"split", split}, {"run", name}, {"flops", report.flops}, {"tasks_csv", rel_path(ctx.layout.root, csv)}, {"mean_pass", report.mean_pass}});
      reports.push_back(std::move(report));
    }
    const auto agg = aggregate_runs(reports);
    write_aggregate_csv(agg, split, out / split / "aggregate.csv");
    mb.add(out / split / "aggregate.csv");
    json per_k = json::object();
    for (const auto& a : agg) {
      summary_csv += split + "," + std::to_string(a.k) + "," + json(a.mean).dump() + "," + json(a.std).dump() + "," + std::to_string(a.runs) + "\n";
      per_k["pass@" + std::to_string(a.k)] = {{"mean", a.mean}, {"std", a.std}};
    }
    summary[split] = per_k;
  }
  write_text_file(out / "summary.csv", summary_csv);
  write_text_file(out / "runs.json", runs.dump(2) + "\n");
  mb.add(out / "summary.csv");
  mb.add(out / "runs.json");
  mb.summary() = summary;
}

// task_id -> c from a task score CSV.
std::vector<std::pair<std::string, std::uint64_t>> read_task_scores(const fs::path& path) {
  std::vector<std::pair<std::string, std::uint64_t>> out;
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    const auto e = line.find(',', b + 1);
    if (a == std::string::npos || b == std::string::npos) throw Error(ErrorKind::malformed, "bad row in " + path.string());
    out.emplace_back(line.substr(0, a), std::stoull(line.substr(b + 1, e - b - 1)));
  }
  return out;
}

void stage_analyze(const StageContext& ctx, ManifestBuilder& mb) {
  const auto sem = load_embeddings(ctx.layout.embeddings(Manifold::semantic));
  const auto syn = load_embeddings(ctx.layout.embeddings(Manifold::syntactic));
  const auto runs = read_json(ctx.layout.reports() / "runs.json");
  const auto out = ctx.layout.analysis();
  fs::create_directories(out);

  std::string nearest_csv = "split,run,solved,failed,sem_all,sem_solved,sem_failed,syn_all,syn_solved,syn_failed\n";
  std::map<std::pair<std::string, double>, std::vector<double>> by_flops;
  for (const auto& r : runs) {
    const auto split_name = r.at("split").get<std::string>();
    const auto run = r.at("run").get<std::string>();
    const auto split = load_split(ctx.layout.splits(), split_name);
    const auto scores = read_task_scores(ctx.layout.root / r.at("tasks_csv").get<std::string>());
    std::vector<ProgramId> test;
    std::vector<std::string> ids;
    std::vector<bool> solved;
    for (const auto& [task, c] : scores) {
      ids.push_back(task);
      test.push_back(task_program_id(task));
      solved.push_back(c > 0);
    }
    const auto s = nn_distance_report(test, ids, split.train, sem, syn, solved);
    fs::create_directories(out / split_name);
    const auto path = out / split_name / (run + ".nearest.csv");
    write_nearest_train_csv(s, path);
    mb.add(path);
    auto f = [](double v) { return json(v).dump(); };
    nearest_csv += split_name + "," + run + "," + std::to_string(s.solved) + "," + std::to_string(s.failed) + "," + f(s.mean_sem_all) + "," +
                   f(s.mean_sem_solved) + "," + f(s.mean_sem_failed) + "," + f(s.mean_syn_all) + "," + f(s.mean_syn_solved) + "," +
                   f(s.mean_syn_failed) + "\n";
    const auto& mean_pass = r.at("mean_pass");
    const auto& ks = ctx.config.ks;
    const auto k1 = std::find(ks.begin(), ks.end(), 1);
    if (k1 != ks.end()) by_flops[{split_name, r.at("flops").get<double>()}].push_back(mean_pass.at(static_cast<std::size_t>(k1 - ks.begin())).get<double>());
  }
  write_text_file(out / "nearest_summary.csv", nearest_csv);
  mb.add(out / "nearest_summary.csv");

  std::vector<ScalingPoint> points;
  std::map<std::string, std::set<double>> distinct;
  for (const auto& [key, values] : by_flops) {
    if (!(key.second > 0.0)) continue;
    ScalingPoint p;
    p.split = key.first;
    p.flops = key.second;
    for (double v : values) p.mean += v;
    p.mean /= static_cast<double>(values.size());
    for (double v : values) p.std += (v - p.mean) * (v - p.mean);
    p.std = std::sqrt(p.std / static_cast<double>(values.size()));
    points.push_back(p);
    distinct[p.split].insert(p.flops);
  }
  std::vector<ScalingPoint> fit_points;
  json skipped = json::array();
  for (const auto& p : points) {
    if (distinct[p.split].size() >= 2) fit_points.push_back(p);
  }
  for (const auto& [split, f] : distinct) {
    if (f.size() < 2) skipped.push_back(split);
  }
  const auto fits = fit_points.empty() ? std::vector<ScalingFit>{} : scaling_report(fit_points);
  write_scaling_csv(points, fits, out / "scaling.csv");
  mb.add(out / "scaling.csv");
  mb.summary() = {{"runs", runs.size()}, {"scaling_fits", fits.size()}, {"scaling_skipped", skipped}};
}

StageResult run_one(const StageContext& ctx, const std::string& stage) {
  const auto key = key_of(params_for(ctx.config, stage));
  if (const auto m = current_manifest(ctx.layout, stage, key)) {
    ctx.say(stage + ": up to date");
    update_root_manifest(ctx.layout);
    return {stage, key, true, json({{"stage", stage}, {"skipped", true}, {"summary", m->at("summary")}}).dump()};
  }
  require_upstream(ctx, stage);
  std::error_code ec;
  fs::remove(ctx.layout.stage_manifest(stage), ec);
  ManifestBuilder mb(ctx, stage, key);
  ctx.say(stage + ": running");
  if (stage == "enumerate") stage_enumerate(ctx, mb);
  else if (stage == "embed") stage_embed(ctx, mb);
  else if (stage == "split") stage_split(ctx, mb);
  else if (stage == "export") stage_export(ctx, mb);
  else if (stage == "evaluate") stage_evaluate(ctx, mb);
  else if (stage == "analyze") stage_analyze(ctx, mb);
  const auto m = mb.finish();
  update_root_manifest(ctx.layout);
  return {stage, key, false, json({{"stage", stage}, {"skipped", false}, {"summary", m.at("summary")}}).dump()};
}

}  // namespace

Universe load_built_universe(const fs::path& output) {
  const Layout layout{output};
  const auto m = read_json(layout.stage_manifest("enumerate"));
  auto u = load_universe(layout.universe_table());
  const auto& meta = m.at("universe");
  u.max_ops = meta.at("max_ops").get<int>();
  u.domain.lo = meta.at("domain").at("lo").get<float>();
  u.domain.hi = meta.at("domain").at("hi").get<float>();
  u.domain.attempts = meta.at("domain").at("attempts").get<std::uint64_t>();
  u.domain.pairs = meta.at("domain").at("pairs").get<std::uint32_t>();
  u.seed = meta.at("seed").get<std::uint64_t>();
  u.signature_points = meta.at("signature_points").get<std::size_t>();
  u.grammar_hash = meta.at("grammar_hash").get<std::string>();
  return u;
}

std::vector<StageResult> run_stage(const PipelineConfig& config, std::string_view stage, const std::function<void(const std::string&)>& log) {
  config.validate();
  set_thread_count(config.threads);
  const StageContext ctx{config, Layout{config.output}, log};
  fs::create_directories(config.output);
  std::vector<StageResult> out;
  if (stage == "all") {
    for (const auto& s : stage_names()) {
      if (std::find(config.all_stages.begin(), config.all_stages.end(), s) != config.all_stages.end()) out.push_back(run_one(ctx, s));
    }
    return out;
  }
  if (std::find(stage_names().begin(), stage_names().end(), stage) == stage_names().end()) {
    throw Error(ErrorKind::invalid_argument, "unknown stage '" + std::string(stage) + "'");
  }
  out.push_back(run_one(ctx, std::string(stage)));
  return out;
}

VerifyReport verify_outputs(const fs::path& output) {
  const Layout layout{output};
  const auto root_path = output / "manifest.json";
  std::error_code ec;
  if (!fs::exists(root_path, ec)) throw Error(ErrorKind::io, "no build manifest at " + root_path.string());
  const auto root = read_json(root_path);
  VerifyReport report;
  for (const auto& [stage, entry] : root.at("stages").items()) {
    const auto mpath = output / entry.at("manifest").get<std::string>();
    ++report.files;
    if (!fs::exists(mpath, ec)) {
      report.mismatches.push_back(rel_path(output, mpath) + ": missing");
      continue;
    }
    if (to_hex(sha256_file(mpath)) != entry.at("sha256").get<std::string>()) {
      report.mismatches.push_back(rel_path(output, mpath) + ": hash differs");
    }
    const auto m = read_json(mpath);
    for (const auto& f : m.at("files")) {
      const auto p = output / f.at("path").get<std::string>();
      ++report.files;
      if (!fs::exists(p, ec)) {
        report.mismatches.push_back(f.at("path").get<std::string>() + ": missing");
      } else if (to_hex(sha256_file(p)) != f.at("sha256").get<std::string>()) {
        report.mismatches.push_back(f.at("path").get<std::string>() + ": hash differs");
      }
    }
  }
  return report;
}

}  // namespace progspace
