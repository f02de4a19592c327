// Command-line front end: generate, sweep, sensitivity, fit, report.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fixfit/errors.hpp"
#include "fixfit/pipeline.hpp"

namespace fs = std::filesystem;
using namespace fixfit;

namespace {

struct Options {
  std::string workdir;
  std::string config;
  std::vector<std::string> sets;
  std::size_t jobs = 1;
  std::string weights;
  std::string target;
  long long val_index = -1;
};

pipeline::Workdir resolve_workdir(const Options& o) {
  if (!o.workdir.empty()) return {o.workdir};
  if (const char* env = std::getenv("FIXFIT_WORKDIR"); env && *env) return {env};
  throw ConfigError("no workdir: pass --workdir or set FIXFIT_WORKDIR");
}

// An explicit --config wins; later stages fall back to the config that
// `generate` saved in the workdir.
pipeline::PipelineConfig resolve_config(const Options& o, const pipeline::Workdir& wd) {
  fs::path path = o.config;
  if (path.empty()) {
    if (!fs::exists(wd.config())) throw ConfigError("no config: pass --config or run generate first");
    path = wd.config();
  }
  auto cfg = pipeline::PipelineConfig::from_file(path);
  for (const auto& s : o.sets) cfg.set(s);
  return cfg;
}

std::optional<fs::path> optional_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fixfit: bottleneck surrogates for identifiable parameter fitting"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("-w,--workdir", o.workdir, "artifact directory (default: $FIXFIT_WORKDIR)");
  app.add_option("-c,--config", o.config, "pipeline config JSON (default: <workdir>/config.json)");
  app.add_option("--set", o.sets, "override a config key, section.key=value (repeatable)");
  app.add_option("-j,--jobs", o.jobs, "maximum worker threads")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("generate", "sample parameters, simulate, filter and save the dataset");
  auto* swp = app.add_subcommand("sweep", "train replicate networks for each bottleneck width and select k*");
  auto* sen = app.add_subcommand("sensitivity", "latent-vs-input sensitivity matrix of a trained network");
  sen->add_option("--weights", o.weights, "weights file (default: best replicate at the configured or selected k)");
  auto* fit = app.add_subcommand("fit", "fit latent parameters to a target output");
  fit->add_option("--weights", o.weights, "weights file (default: best replicate at the selected k)");
  auto* tgt = fit->add_option("--target", o.target, "raw target outputs (CSV/whitespace list or JSON)");
  auto* vix = fit->add_option("--val-index", o.val_index, "use this validation sample of the dataset as the target");
  tgt->excludes(vix);
  auto* rep = app.add_subcommand("report", "render plots and summaries from existing artifacts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::config);
  }

  try {
    const auto wd = resolve_workdir(o);
    if (rep->parsed()) {
      pipeline::cmd_report(wd);
      return 0;
    }
    const auto cfg = resolve_config(o, wd);
    if (gen->parsed()) {
      pipeline::cmd_generate(cfg, wd, o.jobs);
    } else if (swp->parsed()) {
      pipeline::cmd_sweep(cfg, wd, o.jobs);
    } else if (sen->parsed()) {
      pipeline::cmd_sensitivity(cfg, wd, optional_path(o.weights));
    } else if (fit->parsed()) {
      pipeline::FitTarget target;
      if (!o.target.empty()) target.file = o.target;
      if (o.val_index >= 0) target.val_index = static_cast<std::size_t>(o.val_index);
      if (!target.file && !target.val_index) throw ConfigError("fit: pass --target FILE or --val-index N");
      pipeline::cmd_fit(cfg, wd, optional_path(o.weights), target, o.jobs);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "fixfit: error: " << e.what() << "\n";
    return static_cast<int>(exit_code_for(e));
  }
}
