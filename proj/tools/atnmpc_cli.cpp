// Command-line front end for the closed-loop harness.
//
// Exit codes: 0 success, 2 configuration error, 3 infeasible tightening,
// 4 divergence, 1 anything else.

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "atnmpc/atnmpc.hpp"

namespace {

using namespace atnmpc;
using namespace atnmpc::harness;

struct Common {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "csv";
  bool quiet = false;
  std::optional<double> duration;
  std::optional<int> repeats;
  std::string mode;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("scenario", c.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Override the scenario seed");
  cmd->add_option("--out", c.out, "Output path prefix (default: the scenario's 'output' entry)");
  cmd->add_option("--format", c.format, "Trace format")->check(CLI::IsMember({"csv", "json"}));
  cmd->add_flag("--quiet", c.quiet, "Suppress the summary on stdout");
  cmd->add_option("--duration", c.duration, "Override the run duration, s");
  cmd->add_option("--repeats", c.repeats, "Override the drive-cycle repeat count");
}

ScenarioConfig load(const Common& c) {
  auto s = load_scenario(c.scenario);
  if (c.seed) s.seed = *c.seed;
  if (c.repeats) {
    s.cycle_repeats = *c.repeats;
    s.cycle = load_drive_cycle(s.cycle_path).repeated(*c.repeats);
  }
  if (c.duration) s.duration = *c.duration;
  if (!c.mode.empty()) s.controller.apply_mode(control::parse_mode(c.mode));
  s.validate();
  return s;
}

std::string prefix(const Common& c, const ScenarioConfig& s) {
  if (!c.out.empty()) return c.out;
  return s.output.empty() ? "run" : s.output;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  f << content;
}

std::string render(const Table& t, const std::string& format) {
  std::ostringstream out;
  if (format == "json") out << table_json(t).dump(1) << '\n';
  else write_csv(out, t);
  return out.str();
}

void warn_delay(const ScenarioConfig& s, bool quiet) {
  if (s.delay_exceeds_bound() && !quiet)
    std::cerr << "warning: radar_delay " << s.radar_delay << " s exceeds the tube's delay bound T_d = "
              << s.controller.t_d << " s\n";
}

int cmd_run(const Common& c) {
  const auto s = load(c);
  warn_delay(s, c.quiet);
  const auto r = run_scenario(s);
  const std::string p = prefix(c, s);
  write_file(p + "_trace." + c.format, render(r.trace, c.format));
  write_file(p + "_timing." + c.format, render(r.timing, c.format));
  auto summary = metrics_json(r.metrics);
  summary["mode"] = control::mode_name(r.mode);
  summary["seed"] = s.seed;
  if (r.error) summary["error"] = *r.error;
  write_file(p + "_summary.json", summary.dump(1) + "\n");
  if (!c.quiet) std::cout << summary.dump(1) << '\n';
  if (r.error) {
    std::cerr << "error: " << *r.error << '\n';
    return 4;
  }
  return 0;
}

int cmd_compare(const Common& c, const std::vector<std::string>& mode_names) {
  const auto s = load(c);
  warn_delay(s, c.quiet);
  std::vector<control::Mode> modes;
  for (const auto& m : mode_names) modes.push_back(control::parse_mode(m));
  const auto cmp = compare_modes(s, modes);
  const std::string p = prefix(c, s);
  for (const auto& r : cmp.runs) write_file(p + "_" + control::mode_name(r.mode) + "_trace." + c.format,
                                            render(r.trace, c.format));
  std::ostringstream table;
  write_comparison_csv(table, cmp);
  if (c.format == "json") write_file(p + "_compare.json", comparison_json(cmp).dump(1) + "\n");
  else write_file(p + "_compare.csv", table.str());
  if (!c.quiet) std::cout << table.str();
  for (const auto& r : cmp.runs)
    if (r.error) {
      std::cerr << "error (" << control::mode_name(r.mode) << "): " << *r.error << '\n';
      return 4;
    }
  return 0;
}

int cmd_tube(const Common& c) {
  const auto s = load(c);
  warn_delay(s, c.quiet);
  const auto j = tube_report(s);
  std::string text;
  if (c.format == "json") {
    text = j.dump(1) + "\n";
  } else {
    // One row per prediction step: tube box and tightened state/input sets.
    std::ostringstream out;
    out << "step";
    for (const char* set : {"tube", "x"})
      for (const char* coord : {"e_p", "e_v", "t_w"}) out << ',' << set << '_' << coord << "_lo," << set << '_' << coord << "_hi";
    out << ",u_lo,u_hi\n";
    for (std::size_t i = 0; i < j["tube"].size(); ++i) {
      out << i;
      for (const auto* key : {"tube", "tightened_state"}) {
        const auto& b = j[key][i];
        for (std::size_t k = 0; k < 3; ++k)
          out << ',' << detail::format_double(b["lower"][k].get<double>()) << ','
              << detail::format_double(b["upper"][k].get<double>());
      }
      const auto& u = j["tightened_input"][i];
      out << ',' << detail::format_double(u["lower"][0].get<double>()) << ','
          << detail::format_double(u["upper"][0].get<double>()) << '\n';
    }
    text = out.str();
  }
  if (c.out.empty()) std::cout << text;
  else write_file(c.out + "_tube." + c.format, text);
  return 0;
}

int cmd_estimate(const Common& c) {
  auto s = load(c);
  s.controller.adapt = true;  // traces are only meaningful with the estimators running
  const auto r = run_scenario(s);
  const std::string p = prefix(c, s);
  write_file(p + "_estimates." + c.format, render(r.estimates, c.format));
  if (!c.quiet) {
    const auto& last = r.estimates.rows.empty() ? std::vector<double>{} : r.estimates.rows.back();
    if (!last.empty()) {
      std::cout << "final longitudinal estimate vs truth:\n";
      for (int i = 1; i <= 5; ++i)
        std::cout << "  theta_" << i << ' ' << detail::format_double(last[r.estimates.column("theta_" + std::to_string(i))])
                  << "  true " << detail::format_double(last[r.estimates.column("true_theta_" + std::to_string(i))]) << '\n';
    }
  }
  if (r.error) {
    std::cerr << "error: " << *r.error << '\n';
    return 4;
  }
  return 0;
}

int cmd_cycle_validate(const std::string& path, bool quiet) {
  const auto c = load_drive_cycle(path);
  if (!quiet) {
    const auto& v = c.speeds();
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    std::cout << path << ": ok, " << v.size() << " rows, duration " << c.duration() << " s, mean speed " << mean
              << " m/s, max speed " << *std::max_element(v.begin(), v.end()) << " m/s, distance "
              << c.distance(c.times().back()) << " m\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive tube-based NMPC car-following simulator"};
  app.require_subcommand(1);

  Common run_opts, cmp_opts, tube_opts, est_opts;
  std::vector<std::string> modes{"tracking-nmpc", "eco-nmpc", "at-nmpc"};
  std::string cycle_file;
  bool cycle_quiet = false;

  auto* run = app.add_subcommand("run", "Run one closed-loop scenario; writes trace, timing and summary files");
  add_common(run, run_opts);
  run->add_option("--mode", run_opts.mode, "Override the controller mode");

  auto* cmp = app.add_subcommand("compare", "Run the scenario once per mode and compare energy cost");
  add_common(cmp, cmp_opts);
  cmp->add_option("--modes", modes, "Modes to compare")->delimiter(',');

  auto* tube = app.add_subcommand("tube", "Report disturbance sets, tube and tightened constraints");
  add_common(tube, tube_opts);
  tube->add_option("--mode", tube_opts.mode, "Override the controller mode");

  auto* est = app.add_subcommand("estimate", "Run with adaptation on and write estimator traces");
  add_common(est, est_opts);
  est->add_option("--mode", est_opts.mode, "Override the controller mode");

  auto* cycle = app.add_subcommand("cycle", "Drive-cycle utilities");
  cycle->require_subcommand(1);
  auto* validate = cycle->add_subcommand("validate", "Check a drive-cycle CSV");
  validate->add_option("file", cycle_file, "Drive-cycle CSV")->required();
  validate->add_flag("--quiet", cycle_quiet, "No output on success");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(run_opts);
    if (*cmp) return cmd_compare(cmp_opts, modes);
    if (*tube) return cmd_tube(tube_opts);
    if (*est) return cmd_estimate(est_opts);
    if (*validate) return cmd_cycle_validate(cycle_file, cycle_quiet);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InfeasibleTightening& e) {
    std::cerr << "infeasible tightening at step " << e.step() << ": " << e.what() << '\n';
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
