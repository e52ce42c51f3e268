#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "progspace/datasets.hpp"
#include "progspace/error.hpp"
#include "progspace/pipeline.hpp"
#include "support.hpp"

using namespace progspace;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

PipelineConfig tiny(const fs::path& out) {
  auto c = load_config(fs::path(PROGSPACE_CONFIG_DIR) / "tiny.json");
  c.output = out;
  return c;
}

std::map<std::string, fs::file_time_type> snapshot(const fs::path& root) {
  std::map<std::string, fs::file_time_type> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[e.path().string()] = e.last_write_time();
  return out;
}

int cli(const std::string& args) {
  const std::string cmd = std::string("\"") + PROGSPACE_CLI + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string cli_output(const std::string& args) {
  const std::string cmd = std::string("\"") + PROGSPACE_CLI + "\" " + args + " 2>/dev/null";
  std::string out;
  if (FILE* p = popen(cmd.c_str(), "r")) {
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
    pclose(p);
  }
  return out;
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

// One run per split whose candidates are the ground-truth sources.
void write_truth_candidates(const PipelineConfig& c, const std::string& run, double flops) {
  const Layout layout{c.output};
  auto names = density_split_names();
  names.insert(names.end(), support_split_names().begin(), support_split_names().end());
  for (const auto& split : names) {
    std::vector<CandidateSet> sets;
    for (const auto& t : import_dataset(layout.dataset(split), "test")) sets.push_back({t.task_id, std::vector<std::string>(10, t.source), 0.8, 1, flops, ""});
    write_candidates(sets, c.output / "candidates" / split / (run + ".jsonl"));
  }
}

}  // namespace

TEST_CASE("config parsing") {
  const auto c = config_from_json_text(R"({"max_ops": 3, "seed": 9, "splits": {"density": {"train": 10, "test": 2}}})");
  CHECK(c.max_ops == 3);
  CHECK(c.seed == 9);
  CHECK(c.density_sizes.train == 10);
  CHECK(c.seed_for("universe") != c.seed_for("embed"));
  const auto again = config_from_json_text(config_to_json_text(c));
  CHECK(config_to_json_text(again) == config_to_json_text(c));
  CHECK_THROWS_AS(config_from_json_text(R"({"max_opz": 3})"), Error);
  CHECK_THROWS_AS(config_from_json_text(R"({"domain": {"lo": 5, "hi": 1}})"), Error);
  CHECK_THROWS_AS(config_from_json_text("{"), Error);
  CHECK(config_from_json_text("{}").all_stages == std::vector<std::string>{"enumerate", "embed", "split", "export"});
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ErrorKind::invalid_argument) == 2);
  CHECK(exit_code_for(ErrorKind::stale_upstream) == 3);
  CHECK(exit_code_for(ErrorKind::capacity) == 4);
  CHECK(exit_code_for(ErrorKind::io) == 5);
  CHECK(exit_code_for(ErrorKind::missing_coverage) == 6);
  CHECK(exit_code_for(ErrorKind::hash_mismatch) == 7);
}

TEST_CASE("enumerate at L=2 reports 127 raw candidates") {
  testing::TempDir dir("pipe-enum");
  const auto r = run_stage(tiny(dir.path()), "enumerate");
  REQUIRE(r.size() == 1);
  const auto j = json::parse(r[0].summary);
  CHECK(j.at("summary").at("raw_total") == 127);
  CHECK(j.at("summary").at("valid_total") == testing::small_universe(2).size());
  CHECK(fs::exists(dir / "enumerate" / "grammar.txt"));
}

TEST_CASE("full pipeline, idempotence, evaluation and verification") {
  testing::TempDir dir("pipe-all");
  const auto c = tiny(dir.path());
  const auto first = run_stage(c, "all");
  REQUIRE(first.size() == 4);
  for (const auto& r : first) CHECK_FALSE(r.skipped);

  const auto before = snapshot(dir.path());
  const auto second = run_stage(c, "all");
  for (const auto& r : second) CHECK(r.skipped);
  CHECK(snapshot(dir.path()) == before);
  CHECK(verify_outputs(dir.path()).ok());

  // Downstream files refer back to the universe they came from.
  const auto root = json::parse(std::ifstream(dir / "manifest.json"));
  CHECK(root.at("stages").contains("export"));
  const auto dm = load_dataset_manifest(dir / "export" / "diverse");
  CHECK_FALSE(dm.universe_hash.empty());

  // evaluate without candidates
  try {
    run_stage(c, "evaluate");
    FAIL("expected missing coverage");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::missing_coverage);
  }

  write_truth_candidates(c, "run-a", 1e15);
  write_truth_candidates(c, "run-b", 1e16);
  const auto ev = json::parse(run_stage(c, "evaluate")[0].summary);
  for (const auto& [split, per_k] : ev.at("summary").items()) CHECK(per_k.at("pass@1").at("mean") == 1.0);
  CHECK(fs::exists(dir / "evaluate" / "summary.csv"));
  CHECK(fs::exists(dir / "evaluate" / "diverse" / "run-a.tasks.csv"));

  const auto an = json::parse(run_stage(c, "analyze")[0].summary);
  CHECK(an.at("summary").at("scaling_fits") == 7);
  CHECK(fs::exists(dir / "analyze" / "scaling.csv"));
  CHECK(fs::exists(dir / "analyze" / "sem-extrap" / "run-a.nearest.csv"));
  CHECK(run_stage(c, "evaluate")[0].skipped);

  // New candidates invalidate evaluate and, through it, analyze.
  write_truth_candidates(c, "run-c", 1e17);
  CHECK_FALSE(run_stage(c, "evaluate")[0].skipped);
  CHECK(verify_outputs(dir.path()).ok());
}

TEST_CASE("a changed upstream configuration makes later stages stale") {
  testing::TempDir dir("pipe-stale");
  auto c = tiny(dir.path());
  try {
    run_stage(c, "split");
    FAIL("expected stale upstream");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::stale_upstream);
  }
  run_stage(c, "enumerate");
  run_stage(c, "embed");
  c.domain.pairs = 500;
  try {
    run_stage(c, "embed");
    FAIL("expected stale upstream");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::stale_upstream);
  }
}

TEST_CASE("the same seed gives byte-identical builds") {
  testing::TempDir a("pipe-det-a"), b("pipe-det-b");
  auto ca = tiny(a.path());
  auto cb = tiny(b.path());
  cb.threads = 1;
  run_stage(ca, "all");
  run_stage(cb, "all");
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a.path());
    std::ifstream x(e.path(), std::ios::binary), y(b.path() / rel, std::ios::binary);
    std::stringstream sx, sy;
    sx << x.rdbuf();
    sy << y.rdbuf();
    if (rel.string() == "manifest.json") continue;
    INFO(rel.string());
    CHECK(sx.str() == sy.str());
  }
}

TEST_CASE("command line exit codes") {
  testing::TempDir dir("pipe-cli");
  const std::string cfg = std::string(" -q -c \"") + PROGSPACE_CONFIG_DIR + "/tiny.json\" -o \"" + dir.path().string() + "\"";

  CHECK(cli("split" + cfg) == 3);
  CHECK(cli("run -s all" + cfg) == 0);
  CHECK(cli("verify" + cfg) == 0);
  CHECK(cli("evaluate" + cfg) == 6);

  const auto out = cli_output("run -s enumerate" + cfg);
  const auto j = json::parse(out.substr(0, out.find('\n')));
  CHECK(j.at("skipped") == true);
  CHECK(j.at("summary").at("raw_total") == 127);

  {
    std::ofstream f(dir / "split" / "diverse.test.ids", std::ios::binary | std::ios::app);
    f << "x";
  }
  CHECK(cli("verify" + cfg) == 7);

  write_file(dir / "bad.json", R"({"max_ops": 2, "sed": 1})");
  CHECK(cli("enumerate -q -c \"" + (dir / "bad.json").string() + "\"") == 2);
  write_file(dir / "huge.json", R"({"max_ops": 2, "splits": {"density": {"train": 100000, "test": 5}}})");
  CHECK(cli("run -s all -q -c \"" + (dir / "huge.json").string() + "\" -o \"" + (dir / "huge").string() + "\"") == 4);
  CHECK(cli("frobnicate") != 0);
  CHECK(cli_output("grammar").rfind("progspace-grammar", 0) == 0);
}

TEST_CASE("environment overrides output and threads") {
  testing::TempDir dir("pipe-env");
  setenv("PROGSPACE_OUTPUT", dir.path().c_str(), 1);
  setenv("PROGSPACE_THREADS", "2", 1);
  auto c = config_from_json_text(R"({"output": "elsewhere", "threads": 7})");
  CHECK(c.output == "elsewhere");
  apply_environment(c);
  unsetenv("PROGSPACE_OUTPUT");
  unsetenv("PROGSPACE_THREADS");
  CHECK(c.output == dir.path());
  CHECK(c.threads == 2);
}
