#include "progspace/datasets.hpp"

#include <zlib.h>

#include <array>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <memory>

#include <json.hpp>

#include "progspace/binary_io.hpp"
#include "progspace/digest.hpp"
#include "progspace/error.hpp"
#include "progspace/parallel.hpp"

namespace progspace {

using nlohmann::json;

bool operator==(const TaskInstance& a, const TaskInstance& b) {
  if (a.task_id != b.task_id || a.program_id != b.program_id || a.source != b.source || a.spec.size() != b.spec.size()) return false;
  for (std::size_t i = 0; i < a.spec.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(a.spec[i].x) != std::bit_cast<std::uint32_t>(b.spec[i].x) ||
        std::bit_cast<std::uint32_t>(a.spec[i].y) != std::bit_cast<std::uint32_t>(b.spec[i].y)) {
      return false;
    }
  }
  return true;
}

std::string make_task_id(std::string_view split, std::string_view role, ProgramId id) {
  return std::string(split) + ":" + std::string(role) + ":" + std::to_string(id);
}

ProgramId task_program_id(std::string_view task_id) {
  const auto colon = task_id.rfind(':');
  const auto digits = colon == std::string_view::npos ? task_id : task_id.substr(colon + 1);
  ProgramId id = 0;
  const auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), id);
  if (ec != std::errc() || end != digits.data() + digits.size() || digits.empty()) {
    throw Error(ErrorKind::malformed, "task id '" + std::string(task_id) + "' does not end in a program id");
  }
  return id;
}

TaskInstance sample_spec(const Ast& ast, const EvalDomain& dom, std::uint64_t seed) {
  TaskInstance t;
  t.source = render(ast);
  t.spec = accepted_pairs(ast, dom, seed);
  return t;
}

std::string format_float(float v) {
  if (v == 0.0f && std::signbit(v)) return "-0.0";  // a bare "-0" reads back as integer zero
  std::array<char, 32> buf{};
  const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw Error(ErrorKind::invalid_argument, "cannot format float");
  return std::string(buf.data(), end);
}

float parse_float(std::string_view text) {
  float v = 0.0f;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') throw Error(ErrorKind::malformed, "bad number '" + std::string(text) + "'");
  const auto [end, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || end != last) throw Error(ErrorKind::malformed, "bad number '" + std::string(text) + "'");
  return v;
}

std::string task_to_json_line(const TaskInstance& task) {
  std::string out;
  out.reserve(32 + task.source.size() + task.spec.size() * 24);
  out += "{\"task_id\":";
  out += json(task.task_id).dump();
  out += ",\"source\":";
  out += json(task.source).dump();
  out += ",\"spec\":[";
  for (std::size_t i = 0; i < task.spec.size(); ++i) {
    if (i > 0) out += ',';
    out += '[';
    out += format_float(task.spec[i].x);
    out += ',';
    out += format_float(task.spec[i].y);
    out += ']';
  }
  out += "]}";
  return out;
}

namespace {

// SAX reader for one task record. Floats are converted from their raw text so values survive
// the trip bit-exactly (a double round trip could round twice).
class TaskSax : public nlohmann::json_sax<json> {
 public:
  TaskInstance task;
  bool have_id = false, have_source = false, have_spec = false;
  std::string error;

  bool null() override { return fail("unexpected null"); }
  bool boolean(bool) override { return fail("unexpected boolean"); }
  bool number_integer(number_integer_t v) override { return number(static_cast<float>(v)); }
  bool number_unsigned(number_unsigned_t v) override { return number(static_cast<float>(v)); }
  bool number_float(number_float_t, const string_t& s) override {
    try {
      return number(parse_float(s));
    } catch (const Error& e) {
      return fail(e.what());
    }
  }
  bool string(string_t& v) override {
    if (depth_ != 1) return fail("unexpected string");
    if (key_ == "task_id") {
      task.task_id = v;
      have_id = true;
    } else if (key_ == "source") {
      task.source = v;
      have_source = true;
    }
    return true;
  }
  bool binary(binary_t&) override { return fail("unexpected binary value"); }
  bool start_object(std::size_t) override {
    if (depth_ != 0) return fail("unexpected object");
    ++depth_;
    return true;
  }
  bool key(string_t& k) override {
    key_ = k;
    return true;
  }
  bool end_object() override {
    --depth_;
    return true;
  }
  bool start_array(std::size_t) override {
    if (depth_ == 1 && key_ == "spec") {
      have_spec = true;
    } else if (depth_ == 2 && key_ == "spec") {
      arity_ = 0;
    } else {
      return fail("unexpected array");
    }
    ++depth_;
    return true;
  }
  bool end_array() override {
    if (depth_ == 3 && arity_ != 2) return fail("spec entries must be [x, y] pairs");
    --depth_;
    return true;
  }
  bool parse_error(std::size_t position, const std::string&, const nlohmann::detail::exception& ex) override {
    return fail("syntax error at byte " + std::to_string(position) + ": " + ex.what());
  }

 private:
  bool number(float v) {
    if (depth_ != 3 || key_ != "spec" || arity_ >= 2) return fail("unexpected number");
    if (arity_ == 0) {
      task.spec.push_back({v, 0.0f});
    } else {
      task.spec.back().y = v;
    }
    ++arity_;
    return true;
  }
  bool fail(std::string message) {
    if (error.empty()) error = std::move(message);
    return false;
  }

  int depth_ = 0;
  int arity_ = 0;
  std::string key_;
};

}  // namespace

TaskInstance task_from_json_line(std::string_view line) {
  TaskSax sax;
  const bool ok = json::sax_parse(line.begin(), line.end(), &sax);
  if (!ok) throw Error(ErrorKind::malformed, sax.error.empty() ? "malformed task record" : sax.error);
  if (!sax.have_id || !sax.have_source || !sax.have_spec) {
    throw Error(ErrorKind::malformed, "task record needs task_id, source and spec");
  }
  sax.task.program_id = task_program_id(sax.task.task_id);
  return std::move(sax.task);
}

void for_each_line(const std::filesystem::path& path, const std::function<void(std::string_view, std::size_t)>& fn) {
  gzFile in = gzopen(path.c_str(), "rb");
  if (in == nullptr) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::unique_ptr<gzFile_s, int (*)(gzFile)> guard(in, gzclose);
  gzbuffer(in, 1 << 17);
  std::string line;
  std::array<char, 1 << 16> buf{};
  std::size_t number = 0;
  for (;;) {
    const int n = gzread(in, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      int code = 0;
      throw Error(ErrorKind::io, "read error in " + path.string() + ": " + gzerror(in, &code));
    }
    if (n == 0) break;
    const char* p = buf.data();
    const char* end = p + n;
    while (p < end) {
      const char* nl = static_cast<const char*>(std::memchr(p, '\n', static_cast<std::size_t>(end - p)));
      if (nl == nullptr) {
        line.append(p, end);
        break;
      }
      line.append(p, nl);
      fn(line, ++number);
      line.clear();
      p = nl + 1;
    }
  }
  if (!line.empty()) fn(line, ++number);
}

std::vector<TaskInstance> read_task_file(const std::filesystem::path& path) {
  std::vector<TaskInstance> out;
  for_each_line(path, [&](std::string_view line, std::size_t number) {
    try {
      out.push_back(task_from_json_line(line));
    } catch (const Error& e) {
      throw Error(ErrorKind::malformed, path.string() + " line " + std::to_string(number) + ": " + e.what() +
                                            " (last valid line " + std::to_string(number - 1) + ")");
    }
  });
  return out;
}

// ---------------------------------------------------------------------------------------------

namespace {

class TaskWriter {
 public:
  TaskWriter(const std::filesystem::path& path, bool gzip) : path_(path), gzip_(gzip) {
    if (gzip_) {
      gz_ = gzopen(path.c_str(), "wb9");
      if (gz_ == nullptr) throw Error(ErrorKind::io, "cannot create " + path.string());
    } else {
      file_ = std::fopen(path.c_str(), "wb");
      if (file_ == nullptr) throw Error(ErrorKind::io, "cannot create " + path.string());
    }
  }
  ~TaskWriter() {
    if (gz_ != nullptr) gzclose(gz_);
    if (file_ != nullptr) std::fclose(file_);
  }
  TaskWriter(const TaskWriter&) = delete;
  TaskWriter& operator=(const TaskWriter&) = delete;

  void write(std::string_view data) {
    if (data.empty()) return;
    const bool ok = gzip_ ? gzwrite(gz_, data.data(), static_cast<unsigned>(data.size())) == static_cast<int>(data.size())
                          : std::fwrite(data.data(), 1, data.size(), file_) == data.size();
    if (!ok) throw Error(ErrorKind::io, "write failed on " + path_.string());
  }
  void close() {
    const bool ok = gzip_ ? gzclose(gz_) == Z_OK : std::fclose(file_) == 0;
    gz_ = nullptr;
    file_ = nullptr;
    if (!ok) throw Error(ErrorKind::io, "close failed on " + path_.string());
  }

 private:
  std::filesystem::path path_;
  bool gzip_;
  gzFile gz_ = nullptr;
  std::FILE* file_ = nullptr;
};

json domain_json(const EvalDomain& d) {
  return {{"lo", d.lo}, {"hi", d.hi}, {"attempts", d.attempts}, {"pairs", d.pairs}};
}

EvalDomain domain_from_json(const json& j) {
  EvalDomain d;
  d.lo = j.at("lo").get<float>();
  d.hi = j.at("hi").get<float>();
  d.attempts = j.at("attempts").get<std::uint64_t>();
  d.pairs = j.at("pairs").get<std::uint32_t>();
  return d;
}

}  // namespace

const DatasetFile& DatasetManifest::file(std::string_view role) const {
  for (const auto& f : files) {
    if (f.role == role) return f;
  }
  throw Error(ErrorKind::malformed, "dataset manifest for " + split + " has no " + std::string(role) + " file");
}

void save_dataset_manifest(const DatasetManifest& m, const std::filesystem::path& dir) {
  json files = json::array();
  for (const auto& f : m.files) {
    files.push_back({{"role", f.role}, {"file", f.file}, {"count", f.count}, {"sha256", f.sha256}, {"gzip", f.gzip}});
  }
  json j = {
      {"format", "progspace-tasks/1"},
      {"split", m.split},
      {"universe_hash", m.universe_hash},
      {"seeds", {{"validity", m.validity_seed}, {"split", m.split_seed}, {"pool", m.pool_seed}}},
      {"domain", domain_json(m.domain)},
      {"files", files},
  };
  write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

DatasetManifest load_dataset_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  try {
    const auto j = json::parse(read_text_file(path));
    DatasetManifest m;
    m.split = j.at("split").get<std::string>();
    m.universe_hash = j.at("universe_hash").get<std::string>();
    m.validity_seed = j.at("seeds").at("validity").get<std::uint64_t>();
    m.split_seed = j.at("seeds").at("split").get<std::uint64_t>();
    m.pool_seed = j.at("seeds").at("pool").get<std::uint64_t>();
    m.domain = domain_from_json(j.at("domain"));
    for (const auto& f : j.at("files")) {
      m.files.push_back({f.at("role").get<std::string>(), f.at("file").get<std::string>(), f.at("count").get<std::uint64_t>(),
                         f.at("sha256").get<std::string>(), f.at("gzip").get<bool>()});
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::malformed, path.string() + ": " + e.what());
  }
}

DatasetManifest export_dataset(const SplitSpec& split, const Universe& u, const std::filesystem::path& dir, const ExportOptions& opts) {
  opts.domain.validate();
  std::filesystem::create_directories(dir);
  DatasetManifest manifest;
  manifest.split = split.name;
  manifest.universe_hash = split.universe_hash;
  manifest.validity_seed = opts.validity_seed;
  manifest.split_seed = split.seed;
  manifest.pool_seed = split.pool_seed;
  manifest.domain = opts.domain;

  const std::size_t chunk = std::max<std::size_t>(1, opts.chunk_tasks);
  for (const auto* role : {"train", "test"}) {
    const auto& ids = std::string_view(role) == "train" ? split.train : split.test;
    for (auto id : ids) {
      if (id >= u.size()) throw Error(ErrorKind::invalid_argument, "split " + split.name + " refers to id " + std::to_string(id) + " outside the universe");
    }
    const std::string file = std::string(role) + (opts.gzip ? ".jsonl.gz" : ".jsonl");
    TaskWriter writer(dir / file, opts.gzip);
    // Lines are generated in parallel per block, then written in id order.
    const std::size_t block = chunk * std::max<unsigned>(1, thread_count());
    std::vector<std::string> shards;
    for (std::size_t start = 0; start < ids.size(); start += block) {
      const std::size_t stop = std::min(ids.size(), start + block);
      shards.assign((stop - start + chunk - 1) / chunk, std::string());
      parallel_for(shards.size(), [&](std::size_t s) {
        std::string& out = shards[s];
        for (std::size_t i = start + s * chunk; i < std::min(stop, start + (s + 1) * chunk); ++i) {
          const auto ast = u.ast(ids[i]);
          TaskInstance t;
          t.task_id = make_task_id(split.name, role, ids[i]);
          t.program_id = ids[i];
          t.source = std::string(u.source(ids[i]));
          t.spec = accepted_pairs(ast, opts.domain, opts.validity_seed);
          out += task_to_json_line(t);
          out += '\n';
        }
      });
      for (const auto& s : shards) writer.write(s);
    }
    writer.close();
    manifest.files.push_back({role, file, ids.size(), to_hex(sha256_file(dir / file)), opts.gzip});
  }
  save_dataset_manifest(manifest, dir);
  return manifest;
}

std::vector<TaskInstance> import_dataset(const std::filesystem::path& dir, std::string_view role) {
  const auto manifest = load_dataset_manifest(dir);
  const auto& entry = manifest.file(role);
  const auto path = dir / entry.file;
  if (to_hex(sha256_file(path)) != entry.sha256) {
    throw Error(ErrorKind::hash_mismatch, path.string() + " does not match the hash recorded in its manifest");
  }
  auto tasks = read_task_file(path);
  if (tasks.size() != entry.count) {
    throw Error(ErrorKind::malformed, path.string() + " holds " + std::to_string(tasks.size()) + " tasks, manifest says " + std::to_string(entry.count));
  }
  return tasks;
}

}  // namespace progspace
