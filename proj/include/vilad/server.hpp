#pragma once

#include <atomic>
#include <chrono>
#include <ctime>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "vilad/errors.hpp"
#include "vilad/protocol.hpp"
#include "vilad/sim.hpp"
#include "vilad/trajectory_io.hpp"

namespace vilad::server {

struct ServeConfig {
  sim::ScenarioSpec scenario;
  sim::PolicySpec policy;
  sim::EpisodeConfig episode;
  std::shared_ptr<const distill::AttentionModel> model;  // for vilad:<model> policies
  std::uint64_t trial_seed = 0;
  std::filesystem::path recordings = "recordings";
  double staleness_s = 0.5;
  std::size_t top_k = 15;
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  bool realtime = true;        // pace ticks at dt of wall time; false runs flat out (tests)
};

/// Single-slot, latest-wins teleop command buffer. Written by the network side, read by
/// the episode loop; a read does not consume (zero-order hold).
class CommandMailbox {
 public:
  struct Entry {
    protocol::Teleop command;
    double received_at = 0.0;
  };

  void put(const protocol::Teleop& c, double received_at) {
    std::lock_guard lock(mutex_);
    slot_ = Entry{c, received_at};
  }
  [[nodiscard]] std::optional<Entry> peek() const {
    std::lock_guard lock(mutex_);
    return slot_;
  }
  void clear() {
    std::lock_guard lock(mutex_);
    slot_.reset();
  }

 private:
  mutable std::mutex mutex_;
  std::optional<Entry> slot_;
};

/// Teleop reference recording. Files land in `<dir>/<scenario>/<UTC timestamp>.csv`, in the
/// simulator's trajectory format, so `metrics` picks them up under the scenario id.
class Recorder {
 public:
  Recorder(std::filesystem::path dir, std::string scenario_id)
      : dir_(std::move(dir)), scenario_(std::move(scenario_id)) {}

  [[nodiscard]] bool active() const { return active_; }
  [[nodiscard]] std::size_t size() const { return samples_.size(); }

  void start(const TrajectorySample& first) {
    if (active_) throw StateError("already recording");
    active_ = true;
    samples_ = {first};
  }

  void add(const TrajectorySample& s) {
    if (active_ && s.t > samples_.back().t) samples_.push_back(s);
  }

  std::filesystem::path stop() {
    if (!active_) throw StateError("stop without start: no recording in progress");
    if (samples_.size() < 2) throw StateError("recording has fewer than 2 samples; drive before stopping");
    const auto dir = dir_ / scenario_;
    std::filesystem::create_directories(dir);
    auto path = dir / (timestamp() + ".csv");
    for (int k = 1; std::filesystem::exists(path); ++k) path = dir / (timestamp() + "-" + std::to_string(k) + ".csv");
    write_trajectory(path, samples_);
    active_ = false;
    samples_.clear();
    return path;
  }

  void abandon() {
    active_ = false;
    samples_.clear();
  }

 private:
  static std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%S", &tm);
    char out[40];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
  }

  std::filesystem::path dir_;
  std::string scenario_;
  bool active_ = false;
  std::vector<TrajectorySample> samples_;
};

/// The episode side of the server: owns the world, applies teleop or planner commands one
/// control period per tick, records, and builds snapshots. Not thread-safe except submit().
class LiveEpisode {
 public:
  explicit LiveEpisode(ServeConfig cfg)
      : cfg_(std::move(cfg)),
        world_(sim::instantiate(cfg_.scenario, cfg_.trial_seed), cfg_.episode.sim),
        recorder_(cfg_.recordings, cfg_.scenario.id) {
    cfg_.episode.trial_seed = cfg_.trial_seed;
    if (!teleop()) controller_ = std::make_unique<sim::PlannerController>(cfg_.policy, cfg_.episode, cfg_.model);
    reset_state();
  }

  [[nodiscard]] bool teleop() const { return cfg_.policy.kind == sim::PolicyKind::Teleop; }
  [[nodiscard]] const sim::WorldState& state() const { return state_; }
  [[nodiscard]] const ServeConfig& config() const { return cfg_; }
  [[nodiscard]] bool recording() const { return recorder_.active(); }

  void submit(const protocol::Teleop& c, double now) { mailbox_.put(c, now); }

  /// Command a teleop episode applies at wall time `now`: the latest one unless stale.
  [[nodiscard]] planner::VelocityCommand teleop_command(double now) const {
    const auto e = mailbox_.peek();
    if (!e || now - e->received_at > cfg_.staleness_s) return {0.0, 0.0};
    const sim::TeleopController clamp({}, cfg_.episode.planner);
    return clamp.clamp({e->command.v, e->command.omega});
  }

  /// One control period. Terminal episodes are not stepped; the snapshot is still built.
  protocol::json tick(double now) {
    if (state_.status == sim::EpisodeStatus::Running) {
      if (teleop()) {
        applied_ = teleop_command(now);
        attention_.reset();
        plan_.reset();
      } else {
        auto d = controller_->decide(world_, state_);
        applied_ = d.command;
        attention_ = std::move(d.attention);
        plan_ = std::move(d.plan);
      }
      state_ = world_.step(state_, applied_, cfg_.episode.planner.dt);
      path_.push_back(sim::sample_of(state_));
      recorder_.add(sim::sample_of(state_));
      if (const auto c = world_.pedestrian_clearance(state_); c && (!min_clearance_ || *c < *min_clearance_))
        min_clearance_ = c;
    }
    return snapshot();
  }

  [[nodiscard]] protocol::json snapshot() const {
    protocol::SnapshotInputs in;
    in.world = &world_;
    in.state = &state_;
    in.mode = cfg_.policy.name();
    in.config = &cfg_.episode;
    in.path = &path_;
    in.attention = &attention_;
    in.plan = &plan_;
    in.applied = applied_;
    in.recording = recorder_.active();
    in.min_clearance = min_clearance_;
    in.top_k = cfg_.top_k;
    return protocol::snapshot_payload(in);
  }

  /// Executes a control action; the returned payload acknowledges it.
  protocol::json control(protocol::ControlAction a) {
    protocol::json reply{{"action", protocol::to_string(a)}};
    switch (a) {
      case protocol::ControlAction::RecordStart:
        if (!teleop()) throw StateError("recording needs teleop mode");
        if (state_.status != sim::EpisodeStatus::Running) throw StateError("episode has ended; reset first");
        recorder_.start(sim::sample_of(state_));
        break;
      case protocol::ControlAction::RecordStop: {
        const std::size_t n = recorder_.size();
        reply["path"] = recorder_.stop().string();
        reply["samples"] = n;
        break;
      }
      case protocol::ControlAction::Reset:
        recorder_.abandon();
        reset_state();
        break;
    }
    reply["recording"] = recorder_.active();
    return reply;
  }

 private:
  void reset_state() {
    state_ = world_.initial_state();
    path_ = {sim::sample_of(state_)};
    min_clearance_ = world_.pedestrian_clearance(state_);
    applied_ = {};
    attention_.reset();
    plan_.reset();
    mailbox_.clear();
    if (!teleop()) controller_ = std::make_unique<sim::PlannerController>(cfg_.policy, cfg_.episode, cfg_.model);
  }

  ServeConfig cfg_;
  sim::World world_;
  std::unique_ptr<sim::PlannerController> controller_;
  CommandMailbox mailbox_;
  Recorder recorder_;
  sim::WorldState state_;
  std::vector<TrajectorySample> path_;
  std::optional<double> min_clearance_;
  planner::VelocityCommand applied_;
  std::optional<AttentionMap> attention_;
  std::optional<planner::PlanResult> plan_;
};

// ---------------------------------------------------------------------------
// Network side

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;
using tcp = net::ip::tcp;

class Server;

/// One WebSocket client. Lives on the network thread only. Outgoing replies queue; an
/// unsent snapshot is replaced by a newer one.
class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, Server& server, std::uint64_t id) : ws_(std::move(socket)), server_(server), id_(id) {}

  void run();
  void send_snapshot(std::shared_ptr<const std::string> payload) {
    pending_snapshot_ = std::move(payload);
    flush();
  }
  void send(const std::string& type, const protocol::json& payload) {
    replies_.push_back(protocol::envelope(type, seq_++, payload));
    flush();
  }
  [[nodiscard]] std::uint64_t id() const { return id_; }

 private:
  void read();
  void flush() {
    if (writing_ || !open_) return;
    if (!replies_.empty()) {
      out_ = std::move(replies_.front());
      replies_.pop_front();
    } else if (pending_snapshot_) {
      out_ = protocol::envelope("snapshot", seq_++, *pending_snapshot_);
      pending_snapshot_.reset();
    } else {
      return;
    }
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(out_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->writing_ = false;
      if (ec) return self->close();
      self->flush();
    });
  }
  void close();

  websocket::stream<beast::tcp_stream> ws_;
  Server& server_;
  std::uint64_t id_;
  beast::flat_buffer buffer_;
  std::deque<std::string> replies_;
  std::shared_ptr<const std::string> pending_snapshot_;
  std::string out_;
  std::uint64_t seq_ = 0;
  bool writing_ = false;
  bool open_ = false;
};

/// Publishes a snapshot every control tick to every connected client and feeds teleop and
/// control messages back to the episode. The episode runs on its own thread; the network
/// thread reaches it only through the command mailbox and the control queue.
class Server {
 public:
  explicit Server(ServeConfig cfg) : episode_(cfg), acceptor_(io_) {
    beast::error_code ec;
    const auto addr = net::ip::make_address(cfg.address, ec);
    if (ec) throw ConfigError("bad listen address '" + cfg.address + "'");
    const tcp::endpoint ep(addr, cfg.port);
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw TransportError("cannot listen on " + cfg.address + ":" + std::to_string(cfg.port) + ": " + ec.message());
    port_ = acceptor_.local_endpoint().port();
  }

  ~Server() { stop(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  [[nodiscard]] unsigned short port() const { return port_; }
  [[nodiscard]] std::uint64_t ticks() const { return ticks_.load(); }

  /// Starts the network and episode threads and returns.
  void start() {
    if (started_.exchange(true)) return;
    start_time_ = std::chrono::steady_clock::now();
    accept();
    net_thread_ = std::thread([this] { io_.run(); });
    loop_thread_ = std::thread([this] { loop(); });
  }

  void stop() {
    if (!started_ || stopping_.exchange(true)) return;
    if (loop_thread_.joinable()) loop_thread_.join();
    net::post(io_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
      io_.stop();
    });
    if (net_thread_.joinable()) net_thread_.join();
  }

  /// Blocks until stop() is called from elsewhere (a signal handler, a test).
  void wait() {
    while (!stopping_) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }

  [[nodiscard]] double now() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time_).count();
  }

  // Called on the network thread by sessions.
  void joined(const std::shared_ptr<Session>& s) {
    sessions_[s->id()] = s;
    if (latest_) s->send_snapshot(latest_);
  }
  void left(std::uint64_t id) { sessions_.erase(id); }

  void received(const std::shared_ptr<Session>& s, const std::string& text) {
    try {
      const auto m = protocol::parse_client_message(text);
      if (const auto* t = std::get_if<protocol::Teleop>(&m.body)) {
        if (!episode_.teleop())
          return s->send("error", protocol::error_payload("teleop commands need teleop mode", m.seq));
        episode_.submit(*t, now());
      } else {
        std::lock_guard lock(control_mutex_);
        controls_.push_back({std::get<protocol::Control>(m.body).action, m.seq, s->id()});
      }
    } catch (const protocol::ProtocolError& e) {
      s->send("error", protocol::error_payload(e.what(), e.seq()));
    }
  }

 private:
  struct PendingControl {
    protocol::ControlAction action;
    std::uint64_t seq;
    std::uint64_t session;
  };

  void accept() {
    acceptor_.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      std::make_shared<Session>(std::move(socket), *this, next_session_++)->run();
      accept();
    });
  }

  void reply(std::uint64_t session, std::string type, protocol::json payload) {
    net::post(io_, [this, session, type = std::move(type), payload = std::move(payload)] {
      if (const auto it = sessions_.find(session); it != sessions_.end())
        if (auto s = it->second.lock()) s->send(type, payload);
    });
  }

  void loop() {
    const auto period = std::chrono::duration<double>(episode_.config().episode.planner.dt);
    auto next = std::chrono::steady_clock::now();
    while (!stopping_) {
      std::deque<PendingControl> controls;
      {
        std::lock_guard lock(control_mutex_);
        controls.swap(controls_);
      }
      for (const auto& c : controls) {
        try {
          auto ack = episode_.control(c.action);
          ack["ref_seq"] = c.seq;
          reply(c.session, "control", std::move(ack));
        } catch (const std::exception& e) {
          reply(c.session, "error", protocol::error_payload(e.what(), c.seq));
        }
      }
      auto text = std::make_shared<const std::string>(episode_.tick(now()).dump());
      net::post(io_, [this, text] {
        latest_ = text;
        for (auto it = sessions_.begin(); it != sessions_.end();) {
          if (auto s = it->second.lock()) {
            s->send_snapshot(text);
            ++it;
          } else {
            it = sessions_.erase(it);
          }
        }
      });
      ++ticks_;
      if (episode_.config().realtime) {
        next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
        const auto t = std::chrono::steady_clock::now();
        if (next < t - std::chrono::duration_cast<std::chrono::steady_clock::duration>(period)) next = t;  // no catch-up burst
        std::this_thread::sleep_until(next);
      } else {
        std::this_thread::yield();
      }
    }
  }

  LiveEpisode episode_;
  net::io_context io_;
  tcp::acceptor acceptor_;
  unsigned short port_ = 0;
  std::thread net_thread_, loop_thread_;
  std::atomic<bool> started_{false}, stopping_{false};
  std::atomic<std::uint64_t> ticks_{0};
  std::chrono::steady_clock::time_point start_time_ = std::chrono::steady_clock::now();
  std::mutex control_mutex_;
  std::deque<PendingControl> controls_;
  // Network thread only.
  std::map<std::uint64_t, std::weak_ptr<Session>> sessions_;
  std::shared_ptr<const std::string> latest_;
  std::uint64_t next_session_ = 0;
};

inline void Session::run() {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.read_message_max(protocol::kMaxMessageBytes);
  ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->open_ = true;
    self->server_.joined(self);
    self->read();
  });
}

inline void Session::read() {
  ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) return self->close();
    const std::string text = beast::buffers_to_string(self->buffer_.data());
    self->buffer_.consume(self->buffer_.size());
    self->server_.received(self, text);
    self->read();
  });
}

inline void Session::close() {
  if (!open_) return;
  open_ = false;
  server_.left(id_);
}

}  // namespace vilad::server
