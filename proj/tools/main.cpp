#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "progspace/error.hpp"
#include "progspace/grammar.hpp"
#include "progspace/pipeline.hpp"

namespace {

struct Options {
  std::string config;
  std::string stage = "all";
  std::optional<unsigned> threads;
  std::optional<std::uint64_t> seed;
  std::string output;
  bool quiet = false;
};

progspace::PipelineConfig resolve(const Options& o) {
  progspace::PipelineConfig c;
  if (!o.config.empty()) {
    c = progspace::load_config(o.config);
  } else {
    progspace::apply_environment(c);
  }
  if (o.threads) c.threads = *o.threads;
  if (o.seed) c.seed = *o.seed;
  if (!o.output.empty()) c.output = o.output;
  c.validate();
  return c;
}

int run(const Options& o, const std::string& stage) {
  const auto config = resolve(o);
  auto log = [&](const std::string& msg) {
    if (!o.quiet) std::cerr << "[progspace] " << msg << std::endl;
  };
  for (const auto& r : progspace::run_stage(config, stage, log)) std::cout << r.summary << std::endl;
  return 0;
}

int verify(const Options& o) {
  const auto config = resolve(o);
  const auto report = progspace::verify_outputs(config.output);
  for (const auto& m : report.mismatches) std::cerr << "mismatch: " << m << "\n";
  std::cout << "{\"verified_files\":" << report.files << ",\"mismatches\":" << report.mismatches.size() << "}" << std::endl;
  return report.ok() ? 0 : progspace::exit_code_for(progspace::ErrorKind::hash_mismatch);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Program-space dataset builder: enumerate, embed, split, export and score DSL programs"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("-t,--threads", o.threads, "worker threads (0 = all cores)");
    sub->add_option("--seed-override", o.seed, "replace the master seed");
    sub->add_option("-o,--output", o.output, "output root");
    sub->add_flag("-q,--quiet", o.quiet, "no progress on stderr");
  };

  std::string subcommand;
  for (const auto& name : progspace::stage_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " stage");
    common(sub);
    sub->callback([&, name] { subcommand = name; });
  }
  auto* run_cmd = app.add_subcommand("run", "run one stage or all of them");
  common(run_cmd);
  run_cmd->add_option("-s,--stage", o.stage, "stage name or 'all'");
  run_cmd->callback([&] { subcommand = "run"; });
  auto* verify_cmd = app.add_subcommand("verify", "re-hash every artifact listed in the build manifests");
  common(verify_cmd);
  verify_cmd->callback([&] { subcommand = "verify"; });
  auto* config_cmd = app.add_subcommand("config", "print the effective configuration");
  common(config_cmd);
  config_cmd->callback([&] { subcommand = "config"; });
  auto* grammar_cmd = app.add_subcommand("grammar", "print the grammar alphabet file");
  grammar_cmd->callback([&] { subcommand = "grammar"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : progspace::exit_code_for(progspace::ErrorKind::invalid_argument);
  }

  try {
    if (subcommand == "verify") return verify(o);
    if (subcommand == "config") {
      std::cout << progspace::config_to_json_text(resolve(o));
      return 0;
    }
    if (subcommand == "grammar") {
      std::cout << progspace::grammar_description();
      return 0;
    }
    return run(o, subcommand == "run" ? o.stage : subcommand);
  } catch (const progspace::Error& e) {
    std::cerr << "error (" << progspace::to_string(e.kind()) << "): " << e.what() << std::endl;
    return progspace::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
}
