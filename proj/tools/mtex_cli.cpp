// mtex: featurize micrographs, evaluate texture classifiers, render textures.
//
// Exit codes: 0 ok, 1 pipeline failure, 2 bad configuration, usage or input files.

#include <CLI11.hpp>

#include <iostream>
#include <thread>

#include "mtex/pipeline.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> jobs;
  std::optional<std::string> mode;
  std::optional<std::string> tap;
  std::vector<std::size_t> filters;
  std::optional<std::string> weights;
};

// CLI flags are patched into the JSON before parsing, so derived seeds follow --seed.
mtex::RunConfig build_config(const Options& o) {
  namespace fs = std::filesystem;
  mtex::json j = mtex::json::object();
  fs::path base = fs::current_path();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw mtex::IoError("cannot read config " + o.config);
    try {
      j = mtex::json::parse(in);
    } catch (const mtex::json::parse_error& e) {
      throw mtex::RunConfigError(o.config + ": " + e.what());
    }
    base = fs::absolute(o.config).parent_path();
  }
  if (!j.is_object()) throw mtex::RunConfigError("run config must be a JSON object");
  if (o.seed) j["seed"] = *o.seed;
  if (o.out) j["output"] = fs::absolute(*o.out).string();
  if (o.jobs) j["jobs"] = *o.jobs == 0 ? std::max(1u, std::thread::hardware_concurrency()) : *o.jobs;
  if (o.weights) j["weights"] = *o.weights == "random" ? *o.weights : fs::absolute(*o.weights).string();
  if (o.mode || o.tap || !o.filters.empty()) {
    auto& v = j["visualize"];
    if (v.is_null()) v = mtex::json::object();
    if (o.mode) v["mode"] = *o.mode;
    if (o.tap) v["tap"] = *o.tap;
    if (!o.filters.empty()) v["filters"] = o.filters;
  }
  return mtex::parse_run_config(j, base);
}

int run(CLI::App& app, const Options& o) {
  if (app.got_subcommand("generate")) {
    std::cout << mtex::cmd_generate(build_config(o)).string() << '\n';
  } else if (app.got_subcommand("featurize")) {
    for (const auto& p : mtex::cmd_featurize(build_config(o))) std::cout << p.string() << '\n';
  } else if (app.got_subcommand("evaluate")) {
    const auto cfg = build_config(o);
    for (const auto& r : mtex::cmd_evaluate(cfg)) {
      std::cout << r.featurizer << ' ' << r.taps << ": F1 " << mtex::format_number(r.mean_f1) << " +- "
                << mtex::format_number(r.std_f1) << '\n';
    }
    std::cout << (cfg.output / "evaluation.csv").string() << '\n';
  } else if (app.got_subcommand("visualize")) {
    const auto res = mtex::cmd_visualize(build_config(o));
    for (const auto& p : res.images) std::cout << p.string() << '\n';
    std::cout << res.index.string() << '\n';
  } else if (app.got_subcommand("convert-check")) {
    const auto cfg = build_config(o);
    if (cfg.weights == "random") throw mtex::UsageError("convert-check needs a weight file (positional or config \"weights\")");
    std::cout << mtex::cmd_convert_check(cfg.weights, cfg.network) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Texture features from micrographs: featurize, evaluate, visualize"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config,-c", o.config, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Run seed (overrides config)");
  app.add_option("--out,-o", o.out, "Output directory (overrides config)");
  app.add_option("--jobs,-j", o.jobs, "Worker threads, 0 for all cores (overrides config)");

  app.add_subcommand("featurize", "Write one features CSV per featurizer and tap group");
  app.add_subcommand("evaluate", "Cross-validate random forests; write evaluation.csv and forest dumps");
  auto* viz = app.add_subcommand("visualize", "Render texture images, important/characteristic textures or heat maps");
  viz->add_option("--mode", o.mode, "textures | important | characteristic | heatmap");
  viz->add_option("--tap", o.tap, "Tap for textures and heatmap modes");
  viz->add_option("--filter", o.filters, "Filter index (repeatable)");
  app.add_subcommand("generate", "Write a synthetic labelled texture set with a manifest");
  auto* check = app.add_subcommand("convert-check", "Validate an MTEXW001 weight file");
  check->add_option("weights", o.weights, "Weight file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    return run(app, o);
  } catch (const mtex::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const mtex::ManifestError& e) {
    std::cerr << "manifest error: " << e.what() << '\n';
    return 2;
  } catch (const mtex::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const mtex::RunConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const mtex::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 2;
  } catch (const mtex::SchemaError& e) {
    std::cerr << "schema error: " << e.what() << '\n';
    return 2;
  } catch (const mtex::CorruptionError& e) {
    std::cerr << "corrupt file: " << e.what() << '\n';
    return 2;
  } catch (const mtex::SpecError& e) {
    std::cerr << "preprocess error: " << e.what() << '\n';
    return 2;
  } catch (const mtex::UnsupportedError& e) {
    std::cerr << "unsupported: " << e.what() << '\n';
    return 2;
  } catch (const mtex::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
