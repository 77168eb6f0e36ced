#pragma once

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vilad/annotate.hpp"
#include "vilad/codec.hpp"
#include "vilad/dataset.hpp"
#include "vilad/distill.hpp"
#include "vilad/errors.hpp"
#include "vilad/grid_io.hpp"
#include "vilad/metrics.hpp"
#include "vilad/model_io.hpp"
#include "vilad/planner.hpp"
#include "vilad/remote_oracle.hpp"
#include "vilad/server.hpp"
#include "vilad/sim.hpp"

// Config file sections (from_json needs every key: resolve_config patches over the
// serialized defaults). Seeds, the LoRA rank and radii that have one authoritative home are
// left out of the sub-structs on purpose.
namespace vilad {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CameraModel, focal_px, u0, v0, height_m, pitch_rad, image_width,
                                   image_height)
}
namespace vilad::planner {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PlannerConfig, beta_goal, beta_social, horizon, dt, v_max, omega_max, a_v,
                                   a_omega, n_v, n_omega)
}
namespace vilad::sim {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SimConfig, robot_radius, pedestrian_radius, goal_tolerance,
                                   occupancy_resolution)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SynthConfig, sigma, horizon, sample_dt, end_peak)
}
namespace vilad::distill {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ModelConfig, patch, grid_height, grid_width, history, hidden, rank)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DistillConfig, lambda_vlm, learning_rate, steps, batch_size, epsilon)
}
namespace vilad::annotate {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MockOracleConfig, horizon_s, sample_dt, weight_per_pedestrian,
                                   max_range_m, lighting_noise_sigma)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RemoteOracleConfig, endpoint, model, attempts, timeout_s)
}

namespace vilad::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kVersion = "vilad 1.0.0";

#ifdef VILAD_SCENARIO_DIR
inline const fs::path kDefaultScenarioDir = VILAD_SCENARIO_DIR;
#else
inline const fs::path kDefaultScenarioDir = "scenarios";
#endif

struct ReplaySettings {
  int stride = 2;
  std::size_t max_trials = 64;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ReplaySettings, stride, max_trials)

struct ServeSettings {
  double staleness_s = 0.5;
  std::size_t top_k = 15;
  std::string address = "127.0.0.1";
  std::string recordings = "recordings";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ServeSettings, staleness_s, top_k, address, recordings)

/// Resolved settings: defaults <- --config file <- VILAD_* environment <- flags.
struct GlobalConfig {
  std::uint64_t seed = 0;
  planner::PlannerConfig planner;
  sim::SimConfig sim;
  CameraModel camera;
  sim::SynthConfig synth;
  distill::ModelConfig model;
  distill::DistillConfig distill;
  annotate::MockOracleConfig mock_oracle;
  annotate::RemoteOracleConfig remote_oracle;
  ReplaySettings replay;
  ServeSettings serve;

  [[nodiscard]] sim::EpisodeConfig episode() const {
    sim::EpisodeConfig e;
    e.planner = planner;
    e.planner.robot_radius = sim.robot_radius;
    e.planner.goal_tolerance = sim.goal_tolerance;
    e.sim = sim;
    e.camera = camera;
    e.synth = synth;
    e.synth.grid_width = static_cast<std::size_t>(model.grid_width);
    e.synth.grid_height = static_cast<std::size_t>(model.grid_height);
    return e;
  }

  [[nodiscard]] distill::DistillConfig distill_config() const {
    auto d = distill;
    d.rank = model.rank;
    d.seed = seed;
    return d;
  }

  [[nodiscard]] annotate::MockOracleConfig mock_config() const {
    auto m = mock_oracle;
    m.seed = seed;
    return m;
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GlobalConfig, seed, planner, sim, camera, synth, model, distill, mock_oracle,
                                   remote_oracle, replay, serve)

namespace detail {

/// Every key of `given` must exist in `known`, recursively.
inline void check_keys(const json& given, const json& known, const std::string& where) {
  if (!given.is_object()) return;
  for (const auto& [k, v] : given.items()) {
    const std::string path = where.empty() ? k : where + "." + k;
    if (!known.contains(k)) throw ConfigError("unknown config key '" + path + "'");
    if (v.is_object() != known.at(k).is_object()) throw ConfigError("config key '" + path + "' has the wrong shape");
    check_keys(v, known.at(k), path);
  }
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace detail

/// VILAD_SEED=3, VILAD_PLANNER__BETA_SOCIAL=4: double underscore separates nesting levels.
/// Values are read as JSON when they parse, else as strings.
inline json env_overrides(const std::vector<std::pair<std::string, std::string>>& env) {
  json patch = json::object();
  for (const auto& [name, value] : env) {
    if (name.rfind("VILAD_", 0) != 0) continue;
    std::string rest = detail::lower(name.substr(6));
    json* node = &patch;
    for (std::size_t at; (at = rest.find("__")) != std::string::npos; rest = rest.substr(at + 2)) {
      node = &(*node)[rest.substr(0, at)];
      if (!node->is_object()) *node = json::object();
    }
    const json parsed = json::parse(value, nullptr, false);
    (*node)[rest] = parsed.is_discarded() ? json(value) : parsed;
  }
  return patch;
}

inline std::vector<std::pair<std::string, std::string>> process_environment() {
  std::vector<std::pair<std::string, std::string>> out;
  for (char** e = ::environ; e && *e; ++e) {
    const std::string kv = *e;
    const auto eq = kv.find('=');
    if (eq != std::string::npos) out.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return out;
}

inline GlobalConfig resolve_config(const std::optional<fs::path>& file,
                                   const std::vector<std::pair<std::string, std::string>>& env) {
  json j = GlobalConfig{};
  const json known = j;
  if (file) {
    if (!fs::exists(*file)) throw ConfigError("config file not found: " + file->string());
    const json f = json::parse(binary::read_text(*file), nullptr, false);
    if (f.is_discarded() || !f.is_object()) throw ConfigError("config file is not a JSON object: " + file->string());
    detail::check_keys(f, known, "");
    j.merge_patch(f);
  }
  const json e = env_overrides(env);
  detail::check_keys(e, known, "");
  j.merge_patch(e);
  try {
    return j.get<GlobalConfig>();
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("bad config value: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------
// Provenance

/// SHA-256 of a file, or of the sorted (relative path, file hash) list of a directory.
/// Provenance records (run.json, *.run.json) are left out so a directory's hash does not depend on its own record.
inline std::string content_hash(const fs::path& p) {
  if (fs::is_regular_file(p)) return sha256_hex(binary::read_file(p));
  if (!fs::is_directory(p)) return "";
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file() && !e.path().filename().string().ends_with("run.json"))
      files.emplace_back(fs::relative(e.path(), p).generic_string(), sha256_hex(binary::read_file(e.path())));
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& [rel, h] : files) listing += rel + '\0' + h + '\n';
  return sha256_hex(listing);
}

struct RunRecord {
  std::string command;
  std::vector<std::string> args;
  json config;
  std::map<std::string, fs::path> inputs;
  json extra = json::object();

  /// Writes the record. Contains nothing time- or host-dependent, so reruns are identical.
  void write(const fs::path& where) const {
    json in = json::object();
    for (const auto& [role, path] : inputs) in[role] = {{"path", path.generic_string()}, {"sha256", content_hash(path)}};
    json j{{"tool", kVersion}, {"command", command}, {"args", args}, {"config", config}, {"inputs", in}};
    if (!extra.empty()) j["result"] = extra;
    if (where.has_parent_path()) fs::create_directories(where.parent_path());
    binary::write_text(where, j.dump(2) + "\n");
  }
};

// ---------------------------------------------------------------------------
// Small file formats

/// Occupancy file for `plan`: {"origin": [x, y], "resolution": r, "rows": ["..#", ...]},
/// rows listed top (largest y) to bottom, '#' occupied, anything else free.
inline OccupancyGrid load_occupancy(const fs::path& path) {
  const json j = json::parse(binary::read_text(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ValidationError(path.string() + ": not a JSON object");
  try {
    const auto rows = j.at("rows").get<std::vector<std::string>>();
    if (rows.empty() || rows.front().empty()) throw ValidationError(path.string() + ": empty occupancy grid");
    const auto origin = j.at("origin").get<std::vector<double>>();
    if (origin.size() != 2) throw ValidationError(path.string() + ": origin must be [x, y]");
    const int w = static_cast<int>(rows.front().size());
    const int h = static_cast<int>(rows.size());
    OccupancyGrid g({origin[0], origin[1]}, j.at("resolution").get<double>(), w, h);
    for (int r = 0; r < h; ++r) {
      if (static_cast<int>(rows[r].size()) != w) throw ValidationError(path.string() + ": ragged occupancy rows");
      for (int c = 0; c < w; ++c)
        if (rows[r][c] == '#') g.set(c, h - 1 - r);
    }
    return g;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline Point2 parse_point(const std::vector<double>& v, const char* what) {
  if (v.size() != 2) throw ConfigError(std::string(what) + " needs two comma-separated numbers");
  return {v[0], v[1]};
}

// ---------------------------------------------------------------------------
// Operations shared by subcommands and the demo

struct Output {
  std::ostream& out;
  std::ostream& log;
};

inline dataset::Source scenario_replay(const GlobalConfig& cfg, const sim::ScenarioSpec& s, std::size_t count,
                                       int history) {
  dataset::ReplayConfig rc;
  rc.episode = cfg.episode();
  rc.stride = cfg.replay.stride;
  rc.max_trials = cfg.replay.max_trials;
  rc.seed = cfg.seed;
  return dataset::replay_source(s, count, history, rc);
}

inline dataset::BuildConfig build_config(const GlobalConfig& cfg, std::size_t count) {
  dataset::BuildConfig b;
  b.history = cfg.model.history;
  b.count = count;
  b.grid_width = static_cast<std::size_t>(cfg.model.grid_width);
  b.grid_height = static_cast<std::size_t>(cfg.model.grid_height);
  b.seed = cfg.seed;
  return b;
}

struct DistillSummary {
  std::size_t records = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
};

/// Trains a fresh model on a dataset. The model adopts the dataset's history length and grid.
inline DistillSummary distill_dataset(GlobalConfig& cfg, const fs::path& dataset_dir, const fs::path& model_out,
                                      Output& io) {
  auto d = dataset::load_dataset(dataset_dir);
  dataset::validate(d);
  cfg.model.history = d.history;
  cfg.model.grid_width = static_cast<int>(d.grid_width);
  cfg.model.grid_height = static_cast<int>(d.grid_height);
  cfg.model.validate();
  const auto samples = dataset::training_samples(d, cfg.model);
  auto model = distill::AttentionModel::create(cfg.model, cfg.seed);
  const auto dc = cfg.distill_config();
  const std::size_t every = std::max<std::size_t>(1, static_cast<std::size_t>(dc.steps) / 10);
  const auto res = distill::train(model, samples, dc, [&](std::size_t step, double loss) {
    if (step % every == 0) io.log << "  step " << step << "  loss " << loss << "\n";
  });
  save_model(model, model_out);
  return {samples.size(), res.loss_history.front(), res.loss_history.back()};
}

inline std::shared_ptr<const distill::AttentionModel> model_for(const sim::PolicySpec& p) {
  if (p.kind != sim::PolicyKind::Model) return nullptr;
  return std::make_shared<const distill::AttentionModel>(distill::load_model(p.model_path));
}

/// Runs trials seed, seed+1, ... and writes `<out>/<scenario>/<policy>/seed_<k>.{json,csv}`.
inline std::vector<sim::EpisodeResult> run_trials(const GlobalConfig& cfg, const sim::ScenarioSpec& scenario,
                                                  const sim::PolicySpec& policy, std::size_t trials,
                                                  const fs::path& out, Output& io) {
  const auto model = model_for(policy);
  std::vector<sim::EpisodeResult> results;
  const fs::path dir = out / scenario.id / policy.name();
  for (std::size_t k = 0; k < trials; ++k) {
    const std::uint64_t seed = cfg.seed + k;
    auto r = sim::run_trial(scenario, policy, cfg.episode(), seed, model);
    char stem[32];
    std::snprintf(stem, sizeof stem, "seed_%04llu", static_cast<unsigned long long>(seed));
    sim::save_episode(dir, stem, r);
    io.log << "  " << scenario.id << " " << policy.name() << " seed " << seed << ": " << sim::to_string(r.status);
    if (r.time_to_goal) io.log << " in " << *r.time_to_goal << " s";
    if (r.min_clearance) io.log << ", min clearance " << *r.min_clearance << " m";
    io.log << "\n";
    results.push_back(std::move(r));
  }
  return results;
}

inline std::vector<metrics::ReportRow> report(const fs::path& runs, const std::optional<fs::path>& refs,
                                              const std::optional<fs::path>& out_csv, Output& io) {
  const auto sets = metrics::load_runs(runs);
  std::map<std::string, metrics::ReferenceTrajectory> references;
  if (refs) references = metrics::load_references(*refs);
  const auto rows = metrics::report_rows(sets, references);
  io.out << metrics::report_table(rows);
  if (out_csv) {
    if (out_csv->has_parent_path()) fs::create_directories(out_csv->parent_path());
    binary::write_text(*out_csv, metrics::report_csv(rows));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Serve: runs until SIGINT/SIGTERM.

inline std::atomic<bool> g_interrupted{false};

inline void serve(const GlobalConfig& cfg, const sim::ScenarioSpec& scenario, const sim::PolicySpec& policy,
                  unsigned short port, Output& io) {
  server::ServeConfig sc;
  sc.scenario = scenario;
  sc.policy = policy;
  sc.episode = cfg.episode();
  sc.model = model_for(policy);
  sc.trial_seed = cfg.seed;
  sc.recordings = cfg.serve.recordings;
  sc.staleness_s = cfg.serve.staleness_s;
  sc.top_k = cfg.serve.top_k;
  sc.address = cfg.serve.address;
  sc.port = port;
  server::Server srv(sc);
  g_interrupted = false;
  auto on_signal = [](int) { g_interrupted = true; };
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  srv.start();
  io.log << "serving " << scenario.id << " (" << policy.name() << ") on ws://" << sc.address << ":" << srv.port()
         << "/  - Ctrl-C to stop" << std::endl;
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  srv.stop();
  std::signal(SIGINT, SIG_DFL);
  std::signal(SIGTERM, SIG_DFL);
  io.log << "stopped after " << srv.ticks() << " ticks\n";
}

// ---------------------------------------------------------------------------
// Dispatch

inline const CLI::App* deepest(const CLI::App* app) {
  for (const auto* s : app->get_subcommands())
    if (s->parsed()) return deepest(s);
  return app;
}

/// Entry point: 0 success, 1 domain error, 2 usage or configuration error.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& log,
                    const std::vector<std::pair<std::string, std::string>>& env = process_environment()) {
  Output io{out, log};
  CLI::App app{"Attention-guided social navigation: annotate, distill, plan, simulate, evaluate, serve.", "vilad"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  std::optional<std::string> config_file;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_file, "JSON config file (sections: planner, sim, camera, synth, model, "
                                          "distill, mock_oracle, remote_oracle, replay, serve)");
  app.add_option("--seed", seed, "Global seed");

  // annotate
  auto* annotate_cmd = app.add_subcommand("annotate", "Build a distillation dataset with an annotation oracle");
  std::string a_source, a_oracle = "mock", a_out;
  std::optional<int> a_n;
  std::size_t a_count = 10;
  std::optional<std::string> a_endpoint, a_model;
  annotate_cmd->add_option("--source", a_source, "Scenario JSON (replayed) or directory of PNG + .agrid pairs")
      ->required();
  annotate_cmd->add_option("--oracle", a_oracle, "mock or remote")->check(CLI::IsMember({"mock", "remote"}));
  annotate_cmd->add_option("--n", a_n, "History frames per record (default: model.history)");
  annotate_cmd->add_option("--count", a_count, "Number of records")->check(CLI::PositiveNumber);
  annotate_cmd->add_option("--out", a_out, "Dataset directory")->required();
  annotate_cmd->add_option("--endpoint", a_endpoint, "Remote oracle: chat-completions URL");
  annotate_cmd->add_option("--model", a_model, "Remote oracle: model name");

  // distill
  auto* distill_cmd = app.add_subcommand("distill", "Train LoRA adapters on a dataset");
  std::string d_dataset, d_out;
  std::optional<double> d_lambda, d_lr;
  std::optional<int> d_rank, d_steps;
  distill_cmd->add_option("--dataset", d_dataset, "Dataset directory")->required();
  distill_cmd->add_option("--lambda", d_lambda, "Weight of the VLM term, 0..1")->check(CLI::Range(0.0, 1.0));
  distill_cmd->add_option("--rank", d_rank, "LoRA rank");
  distill_cmd->add_option("--lr", d_lr, "Learning rate");
  distill_cmd->add_option("--steps", d_steps, "Training steps");
  distill_cmd->add_option("--out", d_out, "Model file (.vlad)")->required();

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "One planning step; prints the candidate table as CSV");
  std::optional<std::string> p_map, p_occ, p_out;
  std::vector<double> p_goal, p_pose{0.0, 0.0, 0.0}, p_vel{0.0, 0.0};
  plan_cmd->add_option("--map", p_map, "Attention map (.agrid); omitted means no social term");
  plan_cmd->add_option("--occupancy", p_occ, "Occupancy JSON; omitted means free space");
  plan_cmd->add_option("--goal", p_goal, "Goal x,y (world frame)")->required()->delimiter(',')->expected(2);
  plan_cmd->add_option("--pose", p_pose, "Robot x,y,theta")->delimiter(',')->expected(3);
  plan_cmd->add_option("--velocity", p_vel, "Current v,omega")->delimiter(',')->expected(2);
  plan_cmd->add_option("--out", p_out, "Also write the CSV here");

  // sim run
  auto* sim_cmd = app.add_subcommand("sim", "Simulation");
  sim_cmd->require_subcommand(1);
  auto* sim_run = sim_cmd->add_subcommand("run", "Run trials of one policy in one scenario");
  std::string s_scenario, s_policy, s_out = "runs";
  std::size_t s_trials = 1;
  sim_run->add_option("--scenario", s_scenario, "Scenario JSON")->required();
  sim_run->add_option("--policy", s_policy,
                      "goal_only | synth:pretrained_like | synth:ground_truth_social | vilad:<model.vlad>")
      ->required();
  sim_run->add_option("--trials", s_trials, "Trials, seeds seed..seed+trials-1")->check(CLI::PositiveNumber);
  sim_run->add_option("--out", s_out, "Output directory");

  // metrics report
  auto* metrics_cmd = app.add_subcommand("metrics", "Evaluation");
  metrics_cmd->require_subcommand(1);
  auto* metrics_report = metrics_cmd->add_subcommand("report", "Aggregate episode results into a table");
  std::string m_runs;
  std::optional<std::string> m_refs, m_out;
  metrics_report->add_option("--runs", m_runs, "Directory of episode results (searched recursively)")->required();
  metrics_report->add_option("--refs", m_refs, "Reference trajectories: <scenario>.csv or <scenario>/<recording>.csv");
  metrics_report->add_option("--out", m_out, "CSV table");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Live episode over WebSocket (see docs/protocol.md)");
  std::string v_scenario, v_policy = "teleop";
  unsigned short v_port = 8765;
  std::optional<std::string> v_recordings;
  serve_cmd->add_option("--scenario", v_scenario, "Scenario JSON")->required();
  serve_cmd->add_option("--policy", v_policy, "teleop | goal_only | synth:... | vilad:<model.vlad>");
  serve_cmd->add_option("--port", v_port, "TCP port; 0 picks a free one");
  serve_cmd->add_option("--recordings", v_recordings, "Directory for teleop recordings");

  // pipeline demo
  auto* pipeline_cmd = app.add_subcommand("pipeline", "End-to-end runs");
  pipeline_cmd->require_subcommand(1);
  auto* demo = pipeline_cmd->add_subcommand("demo", "annotate (mock) -> distill -> sim run -> metrics report");
  std::string e_out;
  std::string e_scenarios = kDefaultScenarioDir.string();
  std::size_t e_count = 24, e_trials = 3;
  int e_steps = 200;
  demo->add_option("--out", e_out, "Output directory")->required();
  demo->add_option("--scenarios", e_scenarios, "Directory with scen*.json and refs/");
  demo->add_option("--count", e_count, "Dataset records per scenario")->check(CLI::PositiveNumber);
  demo->add_option("--steps", e_steps, "Distillation steps")->check(CLI::PositiveNumber);
  demo->add_option("--trials", e_trials, "Trials per scenario and policy")->check(CLI::PositiveNumber);

  for (auto* c : {annotate_cmd, distill_cmd, plan_cmd, sim_run, metrics_report, serve_cmd, demo}) {
    const auto* parent = c->get_parent();
    c->usage("Usage: vilad " + (parent == &app ? "" : parent->get_name() + " ") + c->get_name() + " [OPTIONS]");
  }

  std::vector<std::string> argv_store{"vilad"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << deepest(&app)->help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    log << "error: " << e.what() << "\n\n" << deepest(&app)->help();
    return 2;
  }

  try {
    GlobalConfig cfg = resolve_config(config_file ? std::optional<fs::path>(*config_file) : std::nullopt, env);
    if (seed) cfg.seed = *seed;
    RunRecord run;
    run.args = args;

    if (annotate_cmd->parsed()) {
      run.command = "annotate";
      if (a_n) cfg.model.history = *a_n;
      if (a_endpoint) cfg.remote_oracle.endpoint = *a_endpoint;
      if (a_model) cfg.remote_oracle.model = *a_model;
      const fs::path source = a_source;
      dataset::Source src;
      if (fs::is_directory(source)) {
        src = dataset::directory_source(source);
      } else {
        if (!fs::exists(source)) throw SourceError("source not found: " + source.string());
        src = scenario_replay(cfg, sim::load_scenario(source), a_count, cfg.model.history);
      }
      std::unique_ptr<annotate::AnnotationOracle> oracle;
      if (a_oracle == "remote") oracle = std::make_unique<annotate::RemoteOracle>(cfg.remote_oracle);
      else oracle = std::make_unique<annotate::MockOracle>(cfg.mock_config());
      const auto d = dataset::build_dataset(src, *oracle, build_config(cfg, a_count), a_out);
      dataset::validate(dataset::load_dataset(a_out));
      out << "wrote " << d.records.size() << " records (oracle " << d.oracle << ", n = " << d.history << ") to "
          << a_out << "\n";
      run.inputs["source"] = source;
      run.config = cfg;
      run.config["oracle"] = a_oracle;
      run.write(fs::path(a_out) / "run.json");
    } else if (distill_cmd->parsed()) {
      run.command = "distill";
      if (d_lambda) cfg.distill.lambda_vlm = *d_lambda;
      if (d_rank) cfg.model.rank = *d_rank;
      if (d_lr) cfg.distill.learning_rate = *d_lr;
      if (d_steps) cfg.distill.steps = *d_steps;
      const auto s = distill_dataset(cfg, d_dataset, d_out, io);
      out << "trained on " << s.records << " records: loss " << s.first_loss << " -> " << s.final_loss << "; wrote "
          << d_out << "\n";
      run.inputs["dataset"] = d_dataset;
      run.config = cfg;
      run.extra = {{"first_loss", s.first_loss}, {"final_loss", s.final_loss}};
      run.write(d_out + ".run.json");
    } else if (plan_cmd->parsed()) {
      run.command = "plan";
      std::optional<AttentionMap> map;
      if (p_map) map = load_grid(*p_map);
      std::optional<OccupancyGrid> occ;
      if (p_occ) occ = load_occupancy(*p_occ);
      const auto ec = cfg.episode();
      planner::PlanRequest req;
      req.current = {p_vel[0], p_vel[1]};
      req.pose = {p_pose[0], p_pose[1], p_pose[2]};
      req.goal = parse_point(p_goal, "--goal");
      req.occupancy = occ ? &*occ : nullptr;
      req.attention = map ? &*map : nullptr;
      req.projection.camera = ec.camera;
      ec.planner.validate();
      const auto res = planner::plan(req, ec.planner);
      std::ostringstream csv;
      csv << "v,omega,goal,social,J,chosen\n";
      if (res.recovery) {
        csv << format_double(res.command.v) << "," << format_double(res.command.omega) << ",NA,NA,NA,1\n";
      } else {
        for (const auto& c : res.candidates)
          csv << format_double(c.command.v) << "," << format_double(c.command.omega) << "," << format_double(c.goal)
              << "," << format_double(c.social) << "," << format_double(c.total) << ","
              << (c.command == res.command ? 1 : 0) << "\n";
      }
      out << csv.str();
      log << "chosen v = " << res.command.v << ", omega = " << res.command.omega
          << (res.recovery ? " (recovery: no feasible candidate)" : "") << "\n";
      if (p_out) {
        binary::write_text(*p_out, csv.str());
        if (p_map) run.inputs["map"] = *p_map;
        if (p_occ) run.inputs["occupancy"] = *p_occ;
        run.config = cfg;
        run.write(*p_out + ".run.json");
      }
    } else if (sim_run->parsed()) {
      run.command = "sim run";
      const auto scenario = sim::load_scenario(s_scenario);
      const auto policy = sim::PolicySpec::parse(s_policy);
      if (policy.kind == sim::PolicyKind::Teleop) throw ConfigError("teleop runs live: use `serve`");
      const auto results = run_trials(cfg, scenario, policy, s_trials, s_out, io);
      std::size_t ok = 0;
      for (const auto& r : results) ok += r.status == sim::EpisodeStatus::ReachedGoal;
      out << scenario.id << " " << policy.name() << ": " << ok << "/" << results.size() << " reached the goal; results in "
          << (fs::path(s_out) / scenario.id / policy.name()).string() << "\n";
      run.inputs["scenario"] = s_scenario;
      if (policy.kind == sim::PolicyKind::Model) run.inputs["model"] = policy.model_path;
      run.config = cfg;
      run.config["policy"] = s_policy;
      run.config["trials"] = s_trials;
      run.write(fs::path(s_out) / scenario.id / policy.name() / "run.json");
    } else if (metrics_report->parsed()) {
      run.command = "metrics report";
      report(m_runs, m_refs ? std::optional<fs::path>(*m_refs) : std::nullopt,
             m_out ? std::optional<fs::path>(*m_out) : std::nullopt, io);
      if (m_out) {
        run.inputs["runs"] = m_runs;
        if (m_refs) run.inputs["refs"] = *m_refs;
        run.config = cfg;
        run.write(*m_out + ".run.json");
      }
    } else if (serve_cmd->parsed()) {
      run.command = "serve";
      if (v_recordings) cfg.serve.recordings = *v_recordings;
      const auto scenario = sim::load_scenario(v_scenario);
      const auto policy = sim::PolicySpec::parse(v_policy);
      run.inputs["scenario"] = v_scenario;
      run.config = cfg;
      run.config["policy"] = v_policy;
      run.write(fs::path(cfg.serve.recordings) / "run.json");
      serve(cfg, scenario, policy, v_port, io);
    } else if (demo->parsed()) {
      run.command = "pipeline demo";
      const fs::path root = e_out, scen_dir = e_scenarios;
      std::vector<sim::ScenarioSpec> scenarios;
      for (const char* name : {"scen1", "scen2", "scen3", "scen4"})
        scenarios.push_back(sim::load_scenario(scen_dir / (std::string(name) + ".json")));
      cfg.distill.steps = e_steps;

      log << "[1/4] annotate: " << e_count << " mock records per scenario\n";
      std::vector<dataset::Source> parts;
      for (const auto& s : scenarios) parts.push_back(scenario_replay(cfg, s, e_count, cfg.model.history));
      annotate::MockOracle oracle(cfg.mock_config());
      dataset::build_dataset(dataset::merge_sources(parts), oracle, build_config(cfg, e_count * scenarios.size()),
                             root / "dataset");

      log << "[2/4] distill: " << e_steps << " steps\n";
      const fs::path model_path = root / "model.vlad";
      const auto ds = distill_dataset(cfg, root / "dataset", model_path, io);

      log << "[3/4] sim run: " << e_trials << " trials per scenario and policy\n";
      for (const auto& s : scenarios)
        for (const auto& p : {std::string("goal_only"), std::string("synth:pretrained_like"),
                              std::string("synth:ground_truth_social"), "vilad:" + model_path.string()})
          run_trials(cfg, s, sim::PolicySpec::parse(p), e_trials, root / "runs", io);

      log << "[4/4] metrics report\n";
      report(root / "runs", scen_dir / "refs", root / "table.csv", io);

      run.inputs["scenarios"] = scen_dir;
      run.config = cfg;
      run.config["demo"] = {{"count", e_count}, {"steps", e_steps}, {"trials", e_trials}};
      run.extra = {{"records", ds.records}, {"first_loss", ds.first_loss}, {"final_loss", ds.final_loss},
                   {"outputs", content_hash(root)}};
      run.write(root / "run.json");
    }
    return 0;
  } catch (const ConfigError& e) {
    log << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace vilad::cli
