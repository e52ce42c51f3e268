#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "progspace/datasets.hpp"
#include "progspace/error.hpp"
#include "support.hpp"

using namespace progspace;

namespace {

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, std::string_view s) {
  std::ofstream out(p, std::ios::binary);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

SplitSpec small_split(const Universe& u) {
  SplitSpec s;
  s.name = "diverse";
  s.strategy = "diverse";
  s.seed = 3;
  s.pool_seed = 4;
  for (ProgramId i = 0; i < u.size(); i += 7) s.train.push_back(i);
  for (ProgramId i = 3; i < u.size(); i += 29) s.test.push_back(i);
  s.train_size = s.train.size();
  s.test_size = s.test.size();
  return s;
}

std::uint32_t bits(float f) { return std::bit_cast<std::uint32_t>(f); }

}  // namespace

TEST_CASE("task ids") {
  CHECK(make_task_id("sem-extrap", "test", 42) == "sem-extrap:test:42");
  CHECK(task_program_id("sem-extrap:test:42") == 42);
  CHECK_THROWS_AS(task_program_id("nonsense"), Error);
  CHECK_THROWS_AS(task_program_id("a:b:"), Error);
}

TEST_CASE("spec examples") {
  EvalDomain dom;
  const auto tx = sample_spec(parse("x"), dom, 0);
  REQUIRE(tx.spec.size() == 1000);
  for (const auto& p : tx.spec) CHECK(bits(p.x) == bits(p.y));

  const auto ts = sample_spec(parse("sqrt(x)"), dom, 0);
  REQUIRE(ts.spec.size() == 1000);
  for (const auto& p : ts.spec) CHECK(p.x >= 0.0f);

  const auto td = sample_spec(parse("(x/x)"), dom, 0);
  for (const auto& p : td.spec) {
    CHECK(p.x != 0.0f);
    CHECK(p.y == 1.0f);
  }
  std::set<std::uint32_t> xs;
  for (const auto& p : td.spec) xs.insert(bits(p.x));
  CHECK(xs.size() == 1000);
  CHECK(sample_spec(parse("sin(x)"), dom, 5) == sample_spec(parse("sin(x)"), dom, 5));
  CHECK_THROWS_AS(sample_spec(parse("log((x-x))"), dom, 0), Error);
}

TEST_CASE("float text round-trips every binary32 class") {
  const float specials[] = {0.0f, -0.0f, 1.0f, -1.0f, 0.1f, std::numeric_limits<float>::min(), std::numeric_limits<float>::denorm_min(),
                            std::numeric_limits<float>::max(), -std::numeric_limits<float>::max(), 1e-40f, 3.4028235e38f, 16777217.0f};
  for (float f : specials) CHECK(bits(parse_float(format_float(f))) == bits(f));
  CHECK(format_float(-0.0f) == "-0.0");
  std::mt19937 g(1);
  for (int i = 0; i < 1'000'000; ++i) {
    const float f = std::bit_cast<float>(static_cast<std::uint32_t>(g()));
    if (!std::isfinite(f)) continue;
    REQUIRE(bits(parse_float(format_float(f))) == bits(f));
  }
  CHECK_THROWS_AS(parse_float("abc"), Error);
  CHECK_THROWS_AS(parse_float("1.0x"), Error);
  CHECK_THROWS_AS(parse_float(""), Error);
}

TEST_CASE("json line round-trip is bit exact") {
  const auto t = sample_spec(parse("exp(sin(x))"), EvalDomain{}, 2);
  TaskInstance named = t;
  named.task_id = "diverse:test:9";
  named.program_id = 9;
  const auto line = task_to_json_line(named);
  CHECK(line.find('\n') == std::string::npos);
  const auto back = task_from_json_line(line);
  CHECK(back == named);
  CHECK(back.program_id == 9);
  CHECK_THROWS_AS(task_from_json_line("{\"task_id\":\"a:b:1\"}"), Error);
  CHECK_THROWS_AS(task_from_json_line("{\"task_id\":\"a:b:1\",\"source\":\"x\",\"spec\":[[1,2]"), Error);
  CHECK_THROWS_AS(task_from_json_line("not json"), Error);
}

TEST_CASE("json line negative zero") {
  const auto a = task_from_json_line(R"({"task_id":"s:test:0","source":"x","spec":[[-0.0,-0.0],[1,1]]})");
  REQUIRE(a.spec.size() == 2);
  CHECK(bits(a.spec[0].x) == bits(-0.0f));
  // An integer -0 is plain zero, as in Python's json module.
  const auto b = task_from_json_line(R"({"task_id":"s:test:0","source":"x","spec":[[-0,-0],[1e0,1.0]]})");
  CHECK(bits(b.spec[0].y) == bits(0.0f));
  CHECK(b.spec[1].x == 1.0f);
}

TEST_CASE("export then import reproduces the tasks") {
  const auto& u = testing::small_universe(2);
  const auto split = small_split(u);
  testing::TempDir dir("export");
  ExportOptions opts;
  opts.validity_seed = 0;
  opts.chunk_tasks = 3;  // several shards
  const auto m = export_dataset(split, u, dir / "a", opts);
  CHECK(m.split == "diverse");
  CHECK(m.file("train").count == split.train.size());
  CHECK(m.file("test").count == split.test.size());

  const auto train = import_dataset(dir / "a", "train");
  REQUIRE(train.size() == split.train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto want = sample_spec(u.ast(split.train[i]), opts.domain, opts.validity_seed);
    want.task_id = make_task_id("diverse", "train", split.train[i]);
    want.program_id = split.train[i];
    REQUIRE(train[i] == want);
  }
  std::size_t lines = 0;
  for_each_line(dir / "a" / m.file("test").file, [&](std::string_view, std::size_t) { ++lines; });
  CHECK(lines == split.test.size());

  // Different sharding, same bytes.
  opts.chunk_tasks = 1000;
  export_dataset(split, u, dir / "b", opts);
  CHECK(file_bytes(dir / "a" / "train.jsonl") == file_bytes(dir / "b" / "train.jsonl"));
  CHECK(file_bytes(dir / "a" / "manifest.json") == file_bytes(dir / "b" / "manifest.json"));

  const auto loaded = load_dataset_manifest(dir / "a");
  CHECK(loaded.file("train").sha256 == m.file("train").sha256);
  CHECK(loaded.domain == m.domain);
}

TEST_CASE("gzip export reads back identically") {
  const auto& u = testing::small_universe(2);
  const auto split = small_split(u);
  testing::TempDir dir("export-gz");
  ExportOptions plain;
  ExportOptions gz;
  gz.gzip = true;
  export_dataset(split, u, dir / "plain", plain);
  const auto m = export_dataset(split, u, dir / "gz", gz);
  CHECK(m.file("test").file == "test.jsonl.gz");
  CHECK(m.file("test").gzip);
  CHECK(import_dataset(dir / "gz", "test") == import_dataset(dir / "plain", "test"));
  CHECK(read_task_file(dir / "gz" / "test.jsonl.gz") == read_task_file(dir / "plain" / "test.jsonl"));
}

TEST_CASE("damaged dataset files are rejected") {
  const auto& u = testing::small_universe(2);
  const auto split = small_split(u);
  testing::TempDir dir("export-bad");
  export_dataset(split, u, dir.path(), ExportOptions{});
  const auto path = dir / "train.jsonl";
  const auto original = file_bytes(path);

  // Cut inside the fourth record.
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) pos = original.find('\n', pos) + 1;
  write_bytes(path, original.substr(0, pos + 40));
  try {
    read_task_file(path);
    FAIL("expected malformed");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::malformed);
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    CHECK(std::string(e.what()).find("last valid line 3") != std::string::npos);
  }
  try {
    import_dataset(dir.path(), "train");
    FAIL("expected hash mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::hash_mismatch);
  }

  write_bytes(path, original);
  CHECK_NOTHROW(import_dataset(dir.path(), "train"));
  CHECK_THROWS_AS(import_dataset(dir.path(), "validation"), Error);

  SplitSpec bad = split;
  bad.train.push_back(u.size() + 5);
  CHECK_THROWS_AS(export_dataset(bad, u, dir / "other", ExportOptions{}), Error);
}
