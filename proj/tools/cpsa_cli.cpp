// Command-line front end: run, train, attack, calibrate, sweep.
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cpsa/harness.hpp"

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string format = "csv";
  bool quiet = false;
  bool plots = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Override run.seed");
  cmd->add_option("--out-dir", c.out_dir, "Directory for exported files");
  cmd->add_option("--format", c.format, "Export format")->check(CLI::IsMember({"csv"}));
  cmd->add_flag("--quiet", c.quiet, "Suppress the summary");
}

cpsa::Scenario load(const std::string& path, const Common& c) {
  cpsa::Scenario s = cpsa::load_scenario(path);
  if (c.seed) s.seed = *c.seed;
  return s;
}

void print_summary(const cpsa::RunRecord& rec) {
  const auto& r = rec.summary;
  std::printf("steps            %zu\n", rec.rows.size());
  std::printf("attack start     %ld\n", rec.t0);
  std::printf("eta              %.6f\n", rec.eta);
  std::printf("alarm rate pre   %.4f\n", r.alarm_rate_before);
  std::printf("alarm rate post  %.4f (limit %.4f)\n", r.alarm_rate_after,
              rec.epsilon + r.allowance);
  std::printf("max |dx|         %.4f\n", r.max_error);
  if (r.first_crossing) {
    std::printf("first |dx|>=%g   t=%ld\n", rec.alpha, *r.first_crossing);
  } else {
    std::printf("first |dx|>=%g   never\n", rec.alpha);
  }
  std::printf("success          %s\n", r.success ? "yes" : "no");
  if (rec.escaped) std::printf("escaped          %s\n", rec.escape_message.c_str());
}

void write_outputs(const cpsa::RunRecord& rec, const Common& c, const std::string& stem) {
  std::filesystem::create_directories(c.out_dir);
  const auto path = (std::filesystem::path(c.out_dir) / (stem + ".csv")).string();
  cpsa::export_csv(rec, path);
  if (c.plots) cpsa::export_plots(rec, (std::filesystem::path(c.out_dir) / (stem + "_plots")).string());
  if (!c.quiet) std::printf("wrote            %s\n", path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stealthy sensor-attack synthesis against EKF-based control loops"};
  app.require_subcommand(1);

  Common common;
  std::string scenario_path, model_path, out_path;
  double eps = 0.05;
  int dof = 1;
  int seeds = 20;

  auto* run = app.add_subcommand("run", "Simulate a scenario and export the record");
  run->add_option("scenario", scenario_path, "Scenario file")->required();
  run->add_flag("--plots", common.plots, "Also write plot data and script");
  add_common(run, common);

  auto* train = app.add_subcommand("train", "Train a neural attack generator online");
  train->add_option("scenario", scenario_path, "Scenario file")->required();
  train->add_option("--out", out_path, "Generator artifact to write")->required();
  add_common(train, common);

  auto* attack = app.add_subcommand("attack", "Roll out a frozen generator");
  attack->add_option("scenario", scenario_path, "Scenario file")->required();
  attack->add_option("--model", model_path, "Generator artifact")->required();
  attack->add_flag("--plots", common.plots, "Also write plot data and script");
  add_common(attack, common);

  auto* calibrate = app.add_subcommand("calibrate", "Print the detector threshold");
  calibrate->add_option("--eps", eps, "False-alarm probability")->required();
  calibrate->add_option("--dof", dof, "Degrees of freedom (sensor count)")->required();
  calibrate->add_flag("--quiet", common.quiet, "Print only the number");

  auto* sweep = app.add_subcommand("sweep", "Success rate over consecutive seeds");
  sweep->add_option("scenario", scenario_path, "Scenario file")->required();
  sweep->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);
  add_common(sweep, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*run) {
      const auto s = load(scenario_path, common);
      const auto rec = cpsa::run_scenario(s);
      if (!common.quiet) print_summary(rec);
      write_outputs(rec, common, "run");
    } else if (*train) {
      const auto s = load(scenario_path, common);
      const auto result = cpsa::train_generator(s);
      cpsa::save_generator(result.artifact, out_path);
      if (!common.quiet) {
        print_summary(result.record);
        std::printf("generator        %s\n", out_path.c_str());
      }
    } else if (*attack) {
      const auto s = load(scenario_path, common);
      const auto artifact = cpsa::load_generator(model_path);
      const auto rec = cpsa::run_attack(s, artifact);
      if (!common.quiet) print_summary(rec);
      write_outputs(rec, common, "attack");
    } else if (*calibrate) {
      const auto det = cpsa::DetectorConfig::calibrate(eps, dof);
      if (common.quiet) {
        std::printf("%.10g\n", det.eta);
      } else {
        std::printf("eta = %.10g (epsilon %g, dof %d)\n", det.eta, eps, dof);
      }
    } else if (*sweep) {
      const auto s = load(scenario_path, common);
      const auto entries = cpsa::sweep(s, s.seed, seeds);
      int wins = 0;
      if (!common.quiet) std::printf("%8s %8s %10s %10s %10s\n", "seed", "success", "max|dx|", "alarm", "crossing");
      for (const auto& e : entries) {
        wins += e.report.success ? 1 : 0;
        if (!common.quiet) {
          std::printf("%8llu %8s %10.4f %10.4f %10ld\n",
                      static_cast<unsigned long long>(e.seed), e.report.success ? "yes" : "no",
                      e.report.max_error, e.report.alarm_rate_after,
                      e.report.first_crossing.value_or(-1));
        }
      }
      std::printf("success rate %d/%d\n", wins, seeds);
    }
  } catch (const cpsa::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
