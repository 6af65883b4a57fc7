#pragma once

// Line-oriented device bus between the controller and the sensing/actuation
// backend.
//
//   READ <channel>\n          -> OK <decimal>\n | ERR FAULT <channel>\n
//   SET <actuator> <decimal>\n -> OK\n | ERR BADVAL ...\n
//   PING\n                     -> OK\n
//   INFO\n                     -> OK <json>\n
//
// Malformed commands get ERR BADCMD, unknown names ERR BADCHAN. Lines are
// capped at 1024 bytes.

#include <cctype>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>

#include "farm/chamber.hpp"
#include "farm/telemetry.hpp"

namespace farm::bus {

inline constexpr std::size_t kMaxLine = 1024;

struct ReadCmd {
  Channel channel;
  friend bool operator==(const ReadCmd&, const ReadCmd&) = default;
};
struct SetCmd {
  Actuator actuator;
  double level;
  friend bool operator==(const SetCmd&, const SetCmd&) = default;
};
struct PingCmd {
  friend bool operator==(const PingCmd&, const PingCmd&) = default;
};
struct InfoCmd {
  friend bool operator==(const InfoCmd&, const InfoCmd&) = default;
};

using Command = std::variant<ReadCmd, SetCmd, PingCmd, InfoCmd>;

enum class ErrCode : std::uint8_t { BADCMD, BADCHAN, BADVAL, FAULT };

inline std::string_view to_string(ErrCode c) {
  switch (c) {
    case ErrCode::BADCMD: return "BADCMD";
    case ErrCode::BADCHAN: return "BADCHAN";
    case ErrCode::BADVAL: return "BADVAL";
    case ErrCode::FAULT: return "FAULT";
  }
  return "BADCMD";
}

inline std::optional<ErrCode> parse_err_code(std::string_view s) {
  for (ErrCode c : {ErrCode::BADCMD, ErrCode::BADCHAN, ErrCode::BADVAL, ErrCode::FAULT})
    if (to_string(c) == s) return c;
  return std::nullopt;
}

class ProtocolError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string encode_command(const Command& c) {
  struct Visitor {
    std::string operator()(const ReadCmd& r) const { return "READ " + std::string(farm::to_string(r.channel)) + "\n"; }
    std::string operator()(const SetCmd& s) const {
      if (!is_valid_level(s.actuator, s.level))
        throw ProtocolError("SET level out of bounds for " + std::string(farm::to_string(s.actuator)));
      return "SET " + std::string(farm::to_string(s.actuator)) + " " + format_decimal(s.level) + "\n";
    }
    std::string operator()(const PingCmd&) const { return "PING\n"; }
    std::string operator()(const InfoCmd&) const { return "INFO\n"; }
  };
  return std::visit(Visitor{}, c);
}

namespace detail {

inline std::string_view strip_eol(std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

inline std::vector<std::string_view> split_spaces(std::string_view s, std::size_t max_parts) {
  std::vector<std::string_view> parts;
  while (!s.empty()) {
    if (parts.size() + 1 == max_parts) {
      parts.push_back(s);
      break;
    }
    auto sp = s.find(' ');
    parts.push_back(s.substr(0, sp));
    if (sp == std::string_view::npos) break;
    s.remove_prefix(sp + 1);
  }
  return parts;
}

}  // namespace detail

struct Response {
  enum class Status : std::uint8_t { ok, remote_error, parse_error };

  Status status = Status::ok;
  std::optional<double> value;
  std::optional<std::string> payload;  // INFO json
  ErrCode code = ErrCode::BADCMD;
  std::string message;

  static Response ok() { return {}; }
  static Response ok(double v) {
    Response r;
    r.value = v;
    return r;
  }
  static Response ok_payload(std::string p) {
    Response r;
    r.payload = std::move(p);
    return r;
  }
  static Response err(ErrCode c, std::string msg) {
    Response r;
    r.status = Status::remote_error;
    r.code = c;
    r.message = std::move(msg);
    return r;
  }
  static Response local_error(std::string msg) {
    Response r;
    r.status = Status::parse_error;
    r.message = std::move(msg);
    return r;
  }

  bool is_ok() const { return status == Status::ok; }

  friend bool operator==(const Response&, const Response&) = default;
};

// Server side: a command line, or the error response to send back.
inline std::variant<Command, Response> parse_command(std::string_view line) {
  if (line.size() > kMaxLine) return Response::err(ErrCode::BADCMD, "line too long");
  line = detail::strip_eol(line);
  const auto parts = detail::split_spaces(line, 4);
  if (parts.empty()) return Response::err(ErrCode::BADCMD, "empty command");
  const auto verb = parts[0];
  if (verb == "PING" && parts.size() == 1) return PingCmd{};
  if (verb == "INFO" && parts.size() == 1) return InfoCmd{};
  if (verb == "READ" && parts.size() == 2) {
    auto c = parse_channel(parts[1]);
    if (!c) return Response::err(ErrCode::BADCHAN, "no such channel");
    return ReadCmd{*c};
  }
  if (verb == "SET" && parts.size() == 3) {
    auto a = parse_actuator(parts[1]);
    if (!a) return Response::err(ErrCode::BADCHAN, "no such actuator");
    auto v = parse_decimal(parts[2]);
    if (!v) return Response::err(ErrCode::BADVAL, "malformed level");
    if (!is_valid_level(*a, *v)) return Response::err(ErrCode::BADVAL, "level out of bounds");
    return SetCmd{*a, *v};
  }
  return Response::err(ErrCode::BADCMD, "unknown command");
}

inline std::string encode_response(const Response& r) {
  switch (r.status) {
    case Response::Status::ok:
      if (r.value) return "OK " + format_decimal(*r.value) + "\n";
      if (r.payload) return "OK " + *r.payload + "\n";
      return "OK\n";
    case Response::Status::remote_error:
      return "ERR " + std::string(to_string(r.code)) + (r.message.empty() ? "" : " " + r.message) + "\n";
    case Response::Status::parse_error:
      break;
  }
  throw ProtocolError("local errors are never sent on the wire");
}

// Client side.
inline Response parse_response(std::string_view line) {
  line = detail::strip_eol(line);
  if (line == "OK") return Response::ok();
  if (line.starts_with("OK ")) {
    auto rest = line.substr(3);
    if (!rest.empty() && rest.front() == '{') return Response::ok_payload(std::string(rest));
    auto v = parse_decimal(rest);
    if (!v) return Response::local_error("malformed decimal in response");
    return Response::ok(*v);
  }
  if (line.starts_with("ERR ")) {
    auto parts = detail::split_spaces(line.substr(4), 2);
    if (!parts.empty()) {
      if (auto code = parse_err_code(parts[0]))
        return Response::err(*code, parts.size() > 1 ? std::string(parts[1]) : std::string());
    }
  }
  return Response::err(ErrCode::BADCMD, "unparseable response");
}

// ---------------------------------------------------------------------------
// Backends

class DeviceBackend {
 public:
  virtual ~DeviceBackend() = default;
  // nullopt means the sensor is faulted.
  virtual std::optional<double> read(Channel c) = 0;
  virtual void set(Actuator a, double level) = 0;
  virtual json info() = 0;
};

// Chamber simulator behind the bus. Readings are sampled once per advance()
// so READ order does not perturb the noise stream.
class SimBackend final : public DeviceBackend {
 public:
  explicit SimBackend(ScenarioSpec spec) : spec_(std::move(spec)), rngs_(spec_.seed), state_(spec_.initial_state) {
    check_spec(spec_);
    resample();
  }

  std::optional<double> read(Channel c) override {
    std::lock_guard lock(mu_);
    if (faults_.contains(c)) return std::nullopt;
    return latest_[c].value;
  }

  void set(Actuator a, double level) override {
    if (!is_valid_level(a, level)) throw ProtocolError("level out of bounds");
    std::lock_guard lock(mu_);
    levels_[a] = level;
  }

  json info() override {
    std::lock_guard lock(mu_);
    json ch = json::array(), act = json::array();
    for (Channel c : kAllChannels) ch.push_back(farm::to_string(c));
    for (Actuator a : kAllActuators) act.push_back(farm::to_string(a));
    return {{"backend", "chamber_sim"}, {"channels", ch}, {"actuators", act}, {"levels", to_json(levels_)}, {"t", state_.clock.t}};
  }

  // Steps the chamber with the current actuator levels and takes a fresh sample.
  void advance(double dt) {
    std::lock_guard lock(mu_);
    auto amb = ambient_profile(state_.clock.t, spec_.ambient);
    state_ = step(state_, levels_, amb, stage_, dt, spec_.chamber, rngs_.process);
    resample_locked();
  }

  void set_fault(Channel c, bool faulted) {
    std::lock_guard lock(mu_);
    if (faulted) faults_.insert(c);
    else faults_.erase(c);
  }

  void set_stage(PlantStage s) {
    std::lock_guard lock(mu_);
    stage_ = s;
  }

  ChamberState state() const {
    std::lock_guard lock(mu_);
    return state_;
  }

  AmbientConditions ambient() const {
    std::lock_guard lock(mu_);
    return ambient_profile(state_.clock.t, spec_.ambient);
  }

  ActuatorCommandSet levels() const {
    std::lock_guard lock(mu_);
    return levels_;
  }

  ReadingSet latest() const {
    std::lock_guard lock(mu_);
    return latest_;
  }

 private:
  void resample() {
    std::lock_guard lock(mu_);
    resample_locked();
  }
  void resample_locked() { latest_ = sense(state_, spec_.sensor_params, ambient_profile(state_.clock.t, spec_.ambient), rngs_.sensor); }

  ScenarioSpec spec_;
  SimRngs rngs_;
  mutable std::mutex mu_;
  ChamberState state_;
  PlantStage stage_ = spec_.stage;
  ActuatorCommandSet levels_;
  ReadingSet latest_;
  std::set<Channel> faults_;
};

// Executes wire commands against a backend; one command at a time.
class Dispatcher {
 public:
  explicit Dispatcher(DeviceBackend& backend) : backend_(backend) {}

  Response execute(const Command& cmd) {
    std::lock_guard lock(mu_);
    if (const auto* r = std::get_if<ReadCmd>(&cmd)) {
      auto v = backend_.read(r->channel);
      if (!v || !std::isfinite(*v)) return Response::err(ErrCode::FAULT, std::string(farm::to_string(r->channel)));
      return Response::ok(*v);
    }
    if (const auto* s = std::get_if<SetCmd>(&cmd)) {
      try {
        backend_.set(s->actuator, s->level);
      } catch (const std::exception& e) {
        return Response::err(ErrCode::BADVAL, e.what());
      }
      return Response::ok();
    }
    if (std::holds_alternative<InfoCmd>(cmd)) return Response::ok_payload(backend_.info().dump());
    return Response::ok();
  }

  std::string handle_line(std::string_view line) {
    auto parsed = parse_command(line);
    if (auto* resp = std::get_if<Response>(&parsed)) return encode_response(*resp);
    return encode_response(execute(std::get<Command>(parsed)));
  }

 private:
  DeviceBackend& backend_;
  std::mutex mu_;
};

// Splits a byte stream into command lines, enforcing the length cap. An
// over-long line yields one empty-optional marker and is skipped up to the
// next newline.
class LineAssembler {
 public:
  template <typename Emit>
  void feed(std::string_view bytes, Emit&& emit) {
    for (char ch : bytes) {
      if (ch == '\n') {
        if (overflow_) overflow_ = false;
        else emit(std::optional<std::string>(std::move(buf_)));
        buf_.clear();
        continue;
      }
      if (overflow_) continue;
      buf_.push_back(ch);
      if (buf_.size() > kMaxLine) {
        overflow_ = true;
        buf_.clear();
        emit(std::optional<std::string>());
      }
    }
  }

 private:
  std::string buf_;
  bool overflow_ = false;
};

// ---------------------------------------------------------------------------
// Clients

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Client {
 public:
  virtual ~Client() = default;
  // One round trip; throws TransportError on timeout or disconnect.
  virtual Response transact(const Command& cmd) = 0;
};

// In-process client that still goes through the text protocol.
class LoopbackClient final : public Client {
 public:
  explicit LoopbackClient(Dispatcher& d) : dispatcher_(d) {}
  Response transact(const Command& cmd) override { return parse_response(dispatcher_.handle_line(encode_command(cmd))); }

 private:
  Dispatcher& dispatcher_;
};

inline ReadingSet poll_all(Client& client, std::int64_t timestamp) {
  ReadingSet rs;
  rs.timestamp = timestamp;
  for (Channel c : kAllChannels) {
    const Response resp = client.transact(ReadCmd{c});
    auto& r = rs[c];
    r.channel = c;
    r.timestamp = timestamp;
    if (resp.is_ok() && resp.value) {
      r.value = *resp.value;
      r.quality = Quality::raw;
    } else {
      r.value = 0.0;
      r.quality = Quality::fault;
    }
  }
  return rs;
}

// Returns the actuators whose SET was rejected.
inline std::vector<Actuator> apply_all(Client& client, const ActuatorCommandSet& cmd) {
  std::vector<Actuator> rejected;
  for (Actuator a : kAllActuators)
    if (!client.transact(SetCmd{a, cmd[a]}).is_ok()) rejected.push_back(a);
  return rejected;
}

}  // namespace farm::bus
