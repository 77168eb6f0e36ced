#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "vilad/metrics.hpp"
#include "vilad/server.hpp"
#include "ws_client.hpp"

using namespace vilad;
using namespace vilad::server;
using json = nlohmann::json;

namespace {

sim::ScenarioSpec open_field() {
  sim::ScenarioSpec s;
  s.id = "open";
  s.bounds = {{-2.0, -6.0}, {14.0, 6.0}};
  s.robot_start = {0.0, 0.0, 0.0};
  s.goal = {12.0, 0.0};
  s.time_limit = 60.0;
  return s;
}

ServeConfig teleop_config(const std::filesystem::path& recordings, sim::ScenarioSpec s = open_field()) {
  ServeConfig c;
  c.scenario = std::move(s);
  c.policy = sim::PolicySpec::parse("teleop");
  c.recordings = recordings;
  c.port = 0;
  return c;
}

sim::ScenarioSpec bundled(const std::string& name) {
  return sim::load_scenario(std::filesystem::path(VILAD_SCENARIO_DIR) / (name + ".json"));
}

/// Independent kinematics: midpoint-heading integration of each recorded command over the
/// recorded time step, 1000 substeps per step.
Pose2 integrate_recorded(const std::vector<TrajectorySample>& t) {
  double x = t.front().x, y = t.front().y, th = t.front().theta;
  for (std::size_t k = 1; k < t.size(); ++k) {
    const double h = (t[k].t - t[k - 1].t) / 1000.0;
    for (int i = 0; i < 1000; ++i) {
      const double mid = th + 0.5 * h * t[k].omega;
      x += h * t[k].v * std::cos(mid);
      y += h * t[k].v * std::sin(mid);
      th += h * t[k].omega;
    }
  }
  return {x, y, th};
}

}  // namespace

// ---------------------------------------------------------------------------
// Wire format

TEST(Protocol, ParsesClientMessagesAndIgnoresUnknownFields) {
  auto m = protocol::parse_client_message(R"({"type":"teleop","seq":4,"payload":{"v":0.5,"omega":-0.2,"extra":1},"x":2})");
  EXPECT_EQ(m.seq, 4u);
  const auto& t = std::get<protocol::Teleop>(m.body);
  EXPECT_EQ(t.v, 0.5);
  EXPECT_EQ(t.omega, -0.2);
  EXPECT_FALSE(t.client_time);
  m = protocol::parse_client_message(protocol::teleop_message(5, 1.0, 0.0, 12.5));
  EXPECT_EQ(*std::get<protocol::Teleop>(m.body).client_time, 12.5);
  for (const auto a : {protocol::ControlAction::RecordStart, protocol::ControlAction::RecordStop, protocol::ControlAction::Reset}) {
    m = protocol::parse_client_message(protocol::control_message(9, a));
    EXPECT_EQ(std::get<protocol::Control>(m.body).action, a);
  }
}

TEST(Protocol, MalformedMessagesAreRejectedWithTheirSeq) {
  struct Case {
    const char* text;
    std::optional<std::uint64_t> seq;
  };
  const std::vector<Case> cases{
      {"not json", std::nullopt},
      {"[1,2]", std::nullopt},
      {R"({"type":"teleop","payload":{"v":1,"omega":0}})", std::nullopt},
      {R"({"type":"teleop","seq":-1,"payload":{"v":1,"omega":0}})", std::nullopt},
      {R"({"type":7,"seq":1,"payload":{}})", 1},
      {R"({"type":"teleop","seq":2,"payload":[]})", 2},
      {R"({"type":"teleop","seq":3,"payload":{"v":"fast","omega":0}})", 3},
      {R"({"type":"teleop","seq":4,"payload":{"omega":0}})", 4},
      {R"({"type":"control","seq":5,"payload":{"action":"dance"}})", 5},
      {R"({"type":"snapshot","seq":6,"payload":{}})", 6},
      {R"({"type":"mystery","seq":7,"payload":{}})", 7},
  };
  for (const auto& c : cases) {
    try {
      protocol::parse_client_message(c.text);
      ADD_FAILURE() << "accepted: " << c.text;
    } catch (const protocol::ProtocolError& e) {
      EXPECT_EQ(e.seq(), c.seq) << c.text;
    }
  }
  EXPECT_THROW(protocol::parse_client_message(std::string(protocol::kMaxMessageBytes + 1, ' ')), protocol::ProtocolError);
}

// ---------------------------------------------------------------------------
// Episode side

TEST(LiveEpisodeTeleop, NoClientHoldsStillWhileTimeAdvances) {
  test::TempDir dir;
  LiveEpisode ep(teleop_config(dir.path()));
  for (int k = 0; k < 10; ++k) ep.tick(0.05 * k);
  EXPECT_NEAR(ep.state().time, 0.5, 1e-12);
  EXPECT_EQ(ep.state().robot.x, 0.0);
  EXPECT_EQ(ep.state().robot.y, 0.0);
  EXPECT_EQ(ep.state().status, sim::EpisodeStatus::Running);
}

TEST(LiveEpisodeTeleop, StaleCommandsDecayToStop) {
  test::TempDir dir;
  LiveEpisode ep(teleop_config(dir.path()));
  ep.submit({0.5, 0.1, std::nullopt}, 10.0);
  EXPECT_EQ(ep.teleop_command(10.0).v, 0.5);
  EXPECT_EQ(ep.teleop_command(10.5).v, 0.5);
  EXPECT_EQ(ep.teleop_command(10.5001).v, 0.0);
  EXPECT_EQ(ep.teleop_command(10.5001).omega, 0.0);
  ep.tick(10.2);
  const double x = ep.state().robot.x;
  EXPECT_GT(x, 0.0);
  ep.tick(10.6);
  EXPECT_EQ(ep.state().command.v, 0.0);
  EXPECT_EQ(ep.state().robot.x, x);
}

TEST(LiveEpisodeTeleop, LatestCommandWinsAndIsClamped) {
  test::TempDir dir;
  LiveEpisode ep(teleop_config(dir.path()));
  const auto& lim = ep.config().episode.planner;
  ep.submit({0.2, 0.0, std::nullopt}, 0.0);
  ep.submit({5.0, -9.0, std::nullopt}, 0.01);
  auto c = ep.teleop_command(0.02);
  EXPECT_EQ(c.v, lim.v_max);
  EXPECT_EQ(c.omega, -lim.omega_max);
  ep.submit({-1.0, 0.3, std::nullopt}, 0.03);
  c = ep.teleop_command(0.04);
  EXPECT_EQ(c.v, 0.0);
  EXPECT_EQ(c.omega, 0.3);
}

TEST(LiveEpisodeTeleop, FixedCommandForFourSecondsMatchesKinematics) {
  test::TempDir dir;
  LiveEpisode ep(teleop_config(dir.path()));
  ep.control(protocol::ControlAction::RecordStart);
  for (int k = 0; k < 80; ++k) {
    const double now = 0.05 * k;
    ep.submit({0.5, 0.0, now}, now);
    ep.tick(now);
  }
  EXPECT_NEAR(ep.state().robot.x, 2.0, 1e-3);
  EXPECT_NEAR(ep.state().robot.y, 0.0, 1e-3);
  const auto ack = ep.control(protocol::ControlAction::RecordStop);
  EXPECT_EQ(ack.at("samples").get<std::size_t>(), 81u);
  const auto rec = read_trajectory(ack.at("path").get<std::string>());
  ASSERT_EQ(rec.size(), 81u);
  EXPECT_NEAR(rec.back().x, 2.0, 1e-3);
  EXPECT_NEAR(rec.back().y, 0.0, 1e-3);
  EXPECT_EQ(metrics::trajectory_frechet(rec, rec), 0.0);
  metrics::ReferenceTrajectory ref{rec, metrics::ReferenceProvenance::TeleopRecording};
  EXPECT_NO_THROW(ref.validate());
}

TEST(LiveEpisodeTeleop, RecordingControlRules) {
  test::TempDir dir;
  LiveEpisode ep(teleop_config(dir.path()));
  EXPECT_THROW(ep.control(protocol::ControlAction::RecordStop), StateError);
  std::vector<std::string> files;
  for (int r = 0; r < 2; ++r) {
    ep.control(protocol::ControlAction::RecordStart);
    EXPECT_THROW(ep.control(protocol::ControlAction::RecordStart), StateError);
    for (int k = 0; k < 5; ++k) {
      ep.submit({0.3, 0.2, std::nullopt}, 0.0);
      ep.tick(0.0);
    }
    files.push_back(ep.control(protocol::ControlAction::RecordStop).at("path").get<std::string>());
  }
  EXPECT_NE(files[0], files[1]);
  for (const auto& f : files) {
    EXPECT_TRUE(std::filesystem::exists(f));
    EXPECT_EQ(std::filesystem::path(f).parent_path().filename(), "open");
    EXPECT_EQ(read_trajectory(f).size(), 6u);
  }
  // Recordings are picked up as references under the scenario id.
  const auto refs = metrics::load_references(dir.path());
  ASSERT_EQ(refs.count("open"), 1u);
  EXPECT_EQ(refs.at("open").provenance, metrics::ReferenceProvenance::TeleopRecording);
  EXPECT_EQ(refs.at("open").samples, read_trajectory(std::max(files[0], files[1])));

  ep.control(protocol::ControlAction::RecordStart);
  EXPECT_THROW(ep.control(protocol::ControlAction::RecordStop), StateError);  // one sample only

  ServeConfig planner_cfg = teleop_config(dir.path());
  planner_cfg.policy = sim::PolicySpec::parse("goal_only");
  LiveEpisode auto_ep(planner_cfg);
  EXPECT_THROW(auto_ep.control(protocol::ControlAction::RecordStart), StateError);
}

TEST(LiveEpisodePlanner, ReproducesTheBatchEpisode) {
  test::TempDir dir;
  ServeConfig c = teleop_config(dir.path(), bundled("scen1"));
  c.policy = sim::PolicySpec::parse("synth:ground_truth_social");
  c.trial_seed = 3;
  LiveEpisode ep(c);
  std::vector<TrajectorySample> live{sim::sample_of(ep.state())};
  for (int k = 0; k < 5000 && ep.state().status == sim::EpisodeStatus::Running; ++k) {
    ep.tick(0.0);
    live.push_back(sim::sample_of(ep.state()));
  }
  const auto batch = sim::run_trial(c.scenario, c.policy, c.episode, 3);
  EXPECT_EQ(ep.state().status, batch.status);
  EXPECT_EQ(live, batch.trajectory);
  // Reset starts over from the same initial state.
  ep.control(protocol::ControlAction::Reset);
  EXPECT_EQ(sim::sample_of(ep.state()), batch.trajectory.front());
}

TEST(Snapshot, ContentsAndSizeBound) {
  test::TempDir dir;
  ServeConfig c = teleop_config(dir.path(), bundled("scen3"));
  c.policy = sim::PolicySpec::parse("synth:ground_truth_social");
  LiveEpisode ep(c);
  json snap;
  for (int k = 0; k < 1200 && ep.state().status == sim::EpisodeStatus::Running; ++k) snap = ep.tick(0.0);
  snap = ep.tick(0.0);
  EXPECT_LT(snap.dump().size(), protocol::kMaxMessageBytes);
  EXPECT_LE(snap.at("path").size(), 1001u);
  EXPECT_EQ(snap.at("scenario"), "scen3");
  EXPECT_EQ(snap.at("pedestrians").size(), 3u);
  EXPECT_EQ(snap.at("scene").at("segments").size(), 4u);

  // Mid-episode snapshot: decoded attention map and ranked candidates.
  LiveEpisode fresh(c);
  for (int k = 0; k < 40; ++k) snap = fresh.tick(0.0);
  const auto& att = snap.at("attention");
  ASSERT_TRUE(att.is_object());
  const auto bytes = base64_decode(att.at("agrid_base64").get<std::string>());
  const auto map = decode_grid(bytes);
  EXPECT_EQ(map.width(), att.at("width").get<std::size_t>());
  EXPECT_EQ(map.height(), 24u);
  const auto& plan = snap.at("plan");
  ASSERT_TRUE(plan.is_object());
  const auto& cands = plan.at("candidates");
  ASSERT_FALSE(cands.empty());
  EXPECT_LE(cands.size(), 15u);
  for (std::size_t k = 1; k < cands.size(); ++k) EXPECT_LE(cands[k - 1].at("J"), cands[k].at("J"));
  EXPECT_EQ(plan.at("chosen").at("v"), snap.at("command").at("v"));
  if (!plan.at("recovery").get<bool>()) {
    EXPECT_EQ(cands[0].at("v"), plan.at("chosen").at("v"));
    EXPECT_EQ(cands[0].at("omega"), plan.at("chosen").at("omega"));
  }
  // Teleop snapshots carry neither.
  LiveEpisode tele(teleop_config(dir.path()));
  snap = tele.tick(0.0);
  EXPECT_TRUE(snap.at("attention").is_null());
  EXPECT_TRUE(snap.at("plan").is_null());
}

// ---------------------------------------------------------------------------
// Network

TEST(Network, ScriptedClientDrivesAndRecords) {
  test::TempDir dir;
  Server server(teleop_config(dir.path()));
  server.start();
  test::WsClient client(server.port());

  const auto t0 = std::chrono::steady_clock::now();
  ASSERT_TRUE(client.wait_type("snapshot", std::chrono::milliseconds(1000)));
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(1));

  // Malformed input gets an error reply; the connection stays up.
  client.send("{oops");
  client.send(R"({"type":"control","seq":41,"payload":{"action":"record_stop"}})");
  auto err = client.wait_type("error");
  ASSERT_TRUE(err);
  EXPECT_TRUE(err->at("payload").at("ref_seq").is_null());
  err = client.wait_type("error");
  ASSERT_TRUE(err);
  EXPECT_EQ(err->at("payload").at("ref_seq"), 41);

  std::uint64_t seq = 100;
  client.send(protocol::control_message(seq++, protocol::ControlAction::RecordStart));
  auto ack = client.wait_type("control");
  ASSERT_TRUE(ack);
  EXPECT_EQ(ack->at("payload").at("action"), "record_start");
  EXPECT_TRUE(ack->at("payload").at("recording").get<bool>());

  // Hold forward for 4 s at 20 Hz.
  const auto start = std::chrono::steady_clock::now();
  auto next = start;
  while (std::chrono::steady_clock::now() - start < std::chrono::seconds(4)) {
    client.send(protocol::teleop_message(seq++, 0.5, 0.0));
    next += std::chrono::milliseconds(50);
    std::this_thread::sleep_until(next);
  }
  client.send(protocol::teleop_message(seq++, 0.0, 0.0));
  std::this_thread::sleep_for(std::chrono::milliseconds(150));
  client.send(protocol::control_message(seq++, protocol::ControlAction::RecordStop));
  ack = client.wait_type("control");
  ASSERT_TRUE(ack);
  EXPECT_EQ(ack->at("payload").at("action"), "record_stop");
  const auto rec = read_trajectory(ack->at("payload").at("path").get<std::string>());
  ASSERT_GE(rec.size(), 60u);

  const Pose2 oracle = integrate_recorded(rec);
  EXPECT_NEAR(rec.back().x, oracle.x, 1e-3);
  EXPECT_NEAR(rec.back().y, oracle.y, 1e-3);
  // Roughly 4 s at 0.5 m/s; wall-clock pacing makes the exact tick count vary.
  EXPECT_NEAR(rec.back().x, 2.0, 0.35);
  EXPECT_EQ(metrics::trajectory_frechet(rec, rec), 0.0);

  // Snapshot sequence numbers increase; the last one is stopped.
  const auto snap = client.wait_type("snapshot");
  ASSERT_TRUE(snap);
  EXPECT_EQ(snap->at("payload").at("command").at("v"), 0.0);
  client.close();
  server.stop();
  EXPECT_GT(server.ticks(), 80u);
}

TEST(Network, SequenceNumbersIncreasePerConnection) {
  test::TempDir dir;
  Server server(teleop_config(dir.path()));
  server.start();
  test::WsClient client(server.port());
  for (int k = 0; k < 10; ++k) ASSERT_TRUE(client.wait_type("snapshot"));
  client.close();
  server.stop();
  std::int64_t last = -1;
  for (const auto& m : client.messages()) {
    const auto j = json::parse(m);
    EXPECT_GT(j.at("seq").get<std::int64_t>(), last);
    last = j.at("seq").get<std::int64_t>();
  }
}

TEST(Network, TeleopIsRefusedOutsideTeleopMode) {
  test::TempDir dir;
  ServeConfig c = teleop_config(dir.path());
  c.policy = sim::PolicySpec::parse("goal_only");
  Server server(c);
  server.start();
  test::WsClient client(server.port());
  client.send(protocol::teleop_message(3, 1.0, 0.0));
  const auto err = client.wait_type("error");
  ASSERT_TRUE(err);
  EXPECT_EQ(err->at("payload").at("ref_seq"), 3);
  EXPECT_TRUE(client.wait_type("snapshot"));
  client.close();
  server.stop();
}

TEST(Network, BusyPortIsAStartupError) {
  test::TempDir dir;
  Server first(teleop_config(dir.path()));
  ServeConfig c = teleop_config(dir.path());
  c.port = first.port();
  EXPECT_THROW(Server second(c), TransportError);
}

TEST(Network, EpisodeAdvancesWithoutClients) {
  test::TempDir dir;
  ServeConfig c = teleop_config(dir.path());
  c.realtime = false;
  Server server(c);
  server.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  EXPECT_GT(server.ticks(), 10u);
}
