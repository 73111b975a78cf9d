#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "cpsa/harness.hpp"

using namespace cpsa;

namespace {

std::string scenario_dir() { return CPSA_SCENARIO_DIR; }

Scenario lti_scalar(AttackKind kind) {
  return load_scenario(scenario_dir() + (kind == AttackKind::None ? "/lti_scalar_none.scn"
                                                                  : "/lti_scalar_theorem1.scn"));
}

}  // namespace

TEST_CASE("scenario parsing") {
  const auto s = parse_scenario(
      "# comment line\n"
      "run.seed = 7   # trailing comment\n"
      "model.R_scale = 0.5\n"
      "model.type = lti\n"
      "model.A = 1.1,0.2; 0,0.9\n"
      "model.B = 0; 1\n"
      "model.C = 1,0; 0,1\n"
      "controller.K = 1.8,1.0\n"
      "attack.support = 2\n");
  CHECK(s.seed == 7);
  // model.type applies first, so the explicit R_scale survives its defaults.
  CHECK(s.R_scale == 0.5);
  CHECK(s.lti.A(0, 1) == 0.2);
  CHECK(s.lti.B.rows() == 2);
  CHECK(s.support == std::vector<int>{1});
}

TEST_CASE("scenario errors name the offending field") {
  auto message = [](const std::string& text) {
    try {
      parse_scenario(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("model.type = vehicle\nrun.sed = 3\n").find("run.sed") != std::string::npos);
  CHECK(message("model.type = vehicle\ndetector.epsilon = 1.5\n").find("detector.epsilon") !=
        std::string::npos);
  CHECK(message("model.type = vehicle\nattack.support = 3\n").find("attack.support") !=
        std::string::npos);
  CHECK(message("model.type = lti\nmodel.A = 1\n").find("model.") != std::string::npos);
  CHECK(message("model.type = vehicle\ntrain.beta = abc\n").find("train.beta") != std::string::npos);
  CHECK(message("model.type = boat\n").find("model.type") != std::string::npos);
}

TEST_CASE("every shipped scenario parses") {
  int count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(scenario_dir())) {
    if (entry.path().extension() != ".scn") continue;
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(load_scenario(entry.path().string()));
    ++count;
  }
  CHECK(count >= 10);
}

TEST_CASE("same seed gives a bitwise identical record") {
  auto s = lti_scalar(AttackKind::Theorem1);
  const auto a = csv_text(run_scenario(s));
  const auto b = csv_text(run_scenario(s));
  CHECK(a == b);
  s.seed = 2;
  CHECK(csv_text(run_scenario(s)) != a);
}

TEST_CASE("CSV layout and round trip") {
  auto s = lti_scalar(AttackKind::Theorem1);
  s.log_covariance = true;
  const auto rec = run_scenario(s);
  const auto text = csv_text(rec);
  CHECK(std::count(text.begin(), text.end(), '\n') == s.total_steps() + 1);
  const auto table = parse_csv(text);
  CHECK(table.header.front() == "t");
  CHECK(table.header.back() == "S0_0");
  REQUIRE(table.rows.size() == rec.rows.size());
  const auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(
        std::find(table.header.begin(), table.header.end(), name) - table.header.begin());
  };
  for (std::size_t i = 0; i < rec.rows.size(); ++i) {
    const auto& row = table.rows[i];
    CHECK(row[col("x0")] == rec.rows[i].x(0));
    CHECK(row[col("g")] == rec.rows[i].g);
    // g recomputed from the logged residue and covariance.
    const double z = row[col("z0")];
    CHECK(std::abs(z * z / row[col("S0_0")] - row[col("g")]) < 1e-9);
  }

  RunRecord empty;
  empty.n = 1;
  empty.m = 1;
  empty.p = 1;
  const auto header_only = csv_text(empty);
  CHECK(std::count(header_only.begin(), header_only.end(), '\n') == 1);
}

TEST_CASE("success evaluation is pure and idempotent") {
  const auto rec = run_scenario(lti_scalar(AttackKind::Theorem1));
  const auto a = evaluate_success(rec, 10.0, 0.05);
  const auto b = evaluate_success(rec, 10.0, 0.05);
  CHECK(a.success == b.success);
  CHECK(a.max_error == b.max_error);
  CHECK(a.first_crossing == b.first_crossing);
  CHECK(a.alarm_rate_after == b.alarm_rate_after);
  CHECK(a.success);

  // alpha = 0 is reached immediately; success then rests on stealth alone.
  const auto quiet = run_scenario(lti_scalar(AttackKind::None));
  const auto z = evaluate_success(quiet, 0.0, 0.05);
  CHECK(z.error_reached);
  CHECK(z.success == z.stealthy);
}

TEST_CASE("one alarm in a hundred attacked steps is stealthy") {
  RunRecord rec;
  rec.t0 = 0;
  for (long t = 0; t < 100; ++t) {
    StepRow r;
    r.t = t;
    r.x = VectorXd::Zero(1);
    r.x_hat = VectorXd::Zero(1);
    r.alarm = t == 42;
    rec.rows.push_back(r);
  }
  const auto rep = evaluate_success(rec, 1.0, 0.05);
  CHECK(rep.alarm_rate_after == doctest::Approx(0.01));
  CHECK(rep.stealthy);
  CHECK_FALSE(rep.error_reached);
}

TEST_CASE("unattacked LTI alarms at the nominal rate") {
  const auto rec = run_scenario(load_scenario(scenario_dir() + "/lti_2state_none.scn"));
  CHECK(rec.rows.size() == 10000);
  CHECK(rec.summary.alarm_rate_after >= 0.04);
  CHECK(rec.summary.alarm_rate_after <= 0.06);
}

TEST_CASE("analytic attack keeps alarms low while the error diverges") {
  double alarms = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto s = lti_scalar(AttackKind::Theorem1);
    s.seed = seed;
    const auto rec = run_scenario(s);
    CHECK(rec.summary.success);
    alarms += rec.summary.alarm_rate_after;
  }
  CHECK(alarms / 5 <= 0.06);
}

TEST_CASE("a zero generator leaves the loop untouched") {
  auto s = load_scenario(scenario_dir() + "/vehicle_straight_fnn.scn");
  s.duration = 200;
  const auto model = build_model(s);
  const auto controller = build_controller(s, *model);
  auto frozen = make_attacker(s, *model);
  // Rebuild a zero FNN artifact and run it frozen.
  Rng rng(1);
  auto gen = FnnGenerator::create(*model, s.hidden, build_support(s, *model), s.frame, rng);
  for (auto p : gen.parameters()) p.mutable_value().setZero();
  GeneratorArtifact art{"fnn", model->id(), s.train, gen, std::nullopt};
  auto attacker = make_attacker(s, *model, &art);
  const auto attacked = simulate(s, *model, *controller, attacker.get(), s.seed);
  const auto clean = simulate(s, *model, *controller, nullptr, s.seed);
  REQUIRE(attacked.rows.size() == clean.rows.size());
  for (std::size_t i = 0; i < clean.rows.size(); ++i) {
    CHECK(attacked.rows[i].x == clean.rows[i].x);
    CHECK(attacked.rows[i].g == clean.rows[i].g);
  }
}

TEST_CASE("baseline: controllers hold the unattacked plants near their references") {
  SUBCASE("vehicle, straight and curvy") {
    for (const char* road : {"straight", "curvy"}) {
      auto s = load_scenario(scenario_dir() + "/vehicle_straight_none.scn");
      s.set("controller.road", road);
      const auto model = build_model(s);
      const auto ctl = build_controller(s, *model);
      const auto& lane = dynamic_cast<const LaneKeeping&>(*ctl);
      const auto rec = simulate(s, *model, *ctl, nullptr, 3);
      double worst = 0.0;
      for (const auto& row : rec.rows) {
        if (row.t < 200) continue;
        worst = std::max(worst, std::abs(row.x(1) - lane.road().lateral(row.x(0))));
      }
      CAPTURE(road);
      CHECK(worst < 0.5);
    }
  }
  SUBCASE("quadrotor altitude") {
    auto s = load_scenario(scenario_dir() + "/uav_altitude_fnn.scn");
    s.attack = AttackKind::None;
    s.duration = 1000;
    const auto model = build_model(s);
    const auto ctl = build_controller(s, *model);
    const auto rec = simulate(s, *model, *ctl, nullptr, 3);
    double worst = 0.0;
    for (const auto& row : rec.rows) {
      if (row.t < 600) continue;
      worst = std::max(worst, std::abs(row.x(QuadrotorModel::Z) - s.altitude));
    }
    CHECK(worst < 0.5);
  }
}

TEST_CASE("plot export writes data and script") {
  const auto dir = std::filesystem::temp_directory_path() / "cpsa_plot_test";
  std::filesystem::remove_all(dir);
  export_plots(run_scenario(lti_scalar(AttackKind::Theorem1)), dir.string());
  CHECK(std::filesystem::exists(dir / "run.csv"));
  CHECK(std::filesystem::exists(dir / "run_meta.json"));
  CHECK(std::filesystem::exists(dir / "plot_run.py"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep reports seeds in order") {
  const auto entries = sweep(lti_scalar(AttackKind::Theorem1), 1, 4);
  REQUIRE(entries.size() == 4);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    CHECK(entries[i].seed == i + 1);
    CHECK(entries[i].report.success);
  }
}
