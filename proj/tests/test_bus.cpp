#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <thread>

#include "farm/bus_socket.hpp"
#include "farm/control.hpp"
#include "support.hpp"

using namespace farm;
using namespace farm::bus;
using namespace farm::testing;

namespace {

ScenarioSpec bus_scenario(std::uint64_t seed) {
  ScenarioSpec s;
  s.duration_s = 86400;
  s.seed = seed;
  s.ambient = {20.0, 5.0, 50.0, 420.0, 0.0};
  return s;
}

}  // namespace

TEST(BusProtocol, EncodeExamples) {
  EXPECT_EQ(encode_command(ReadCmd{Channel::co2}), "READ co2\n");
  EXPECT_EQ(encode_command(SetCmd{Actuator::led, 0.175}), "SET led 0.175\n");
  EXPECT_EQ(encode_command(PingCmd{}), "PING\n");
  EXPECT_EQ(encode_command(InfoCmd{}), "INFO\n");
  EXPECT_THROW(encode_command(SetCmd{Actuator::led, 1.5}), ProtocolError);
  EXPECT_THROW(encode_command(SetCmd{Actuator::fan, 0.5}), ProtocolError);
}

TEST(BusProtocol, ParseResponseExamples) {
  EXPECT_EQ(parse_response("OK 612.3\n"), Response::ok(612.3));
  EXPECT_EQ(parse_response("ERR BADCHAN no such channel\n"), Response::err(ErrCode::BADCHAN, "no such channel"));
  EXPECT_EQ(parse_response("OK 6.1e1\n"), Response::ok(61.0));
  EXPECT_EQ(parse_response("OK\n"), Response::ok());
  EXPECT_EQ(parse_response("OK 12abc\n").status, Response::Status::parse_error);
  EXPECT_EQ(parse_response("hello\n").code, ErrCode::BADCMD);
}

TEST(BusProtocol, ParseCommandErrors) {
  auto err = [](std::string_view line) { return std::get<Response>(parse_command(line)).code; };
  EXPECT_EQ(err("READ nitrogen\n"), ErrCode::BADCHAN);
  EXPECT_EQ(err("SET heater 1\n"), ErrCode::BADCHAN);
  EXPECT_EQ(err("SET led 1.5\n"), ErrCode::BADVAL);
  EXPECT_EQ(err("SET fan 0.5\n"), ErrCode::BADVAL);
  EXPECT_EQ(err("SET led nan\n"), ErrCode::BADVAL);
  EXPECT_EQ(err("read co2\n"), ErrCode::BADCMD);
  EXPECT_EQ(err("\n"), ErrCode::BADCMD);
  EXPECT_EQ(err("PING extra\n"), ErrCode::BADCMD);
  EXPECT_EQ(err(std::string(2000, 'A')), ErrCode::BADCMD);
}

TEST(BusProtocol, CommandRoundTripFuzz) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 100000; ++i) {
    const Command c = random_command(rng);
    const auto parsed = parse_command(encode_command(c));
    ASSERT_TRUE(std::holds_alternative<Command>(parsed)) << encode_command(c);
    ASSERT_EQ(std::get<Command>(parsed), c) << encode_command(c);
  }
}

TEST(BusProtocol, ResponseRoundTripFuzz) {
  std::mt19937_64 rng(2025);
  for (int i = 0; i < 100000; ++i) {
    const Response r = random_response(rng);
    ASSERT_EQ(parse_response(encode_response(r)), r) << encode_response(r);
  }
}

TEST(BusProtocol, ArbitraryBytesNeverCrash) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100000; ++i) {
    const std::string line = random_byte_line(rng);
    ASSERT_NO_THROW({
      auto cmd = parse_command(line);
      if (auto* resp = std::get_if<Response>(&cmd)) encode_response(*resp);
      parse_response(line);
    });
  }
}

TEST(BusProtocol, LineAssemblerCapsLength) {
  LineAssembler la;
  std::vector<std::optional<std::string>> out;
  auto emit = [&](std::optional<std::string> l) { out.push_back(std::move(l)); };
  la.feed("PI", emit);
  la.feed("NG\nREAD co2\n", emit);
  la.feed(std::string(3000, 'x') + "\nPING\n", emit);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[0], "PING");
  EXPECT_EQ(out[1], "READ co2");
  EXPECT_FALSE(out[2].has_value());
  EXPECT_EQ(out[3], "PING");
}

TEST(BusDevice, PingAndFault) {
  SimBackend backend(bus_scenario(1));
  Dispatcher d(backend);
  EXPECT_EQ(d.handle_line("PING\n"), "OK\n");
  backend.set_fault(Channel::ph, true);
  EXPECT_EQ(d.handle_line("READ ph\n"), "ERR FAULT ph\n");
  EXPECT_EQ(d.handle_line("SET led 0.175\n"), "OK\n");
  EXPECT_EQ(backend.levels()[Actuator::led], 0.175);
  const auto info = json::parse(parse_response(d.handle_line("INFO\n")).payload.value());
  EXPECT_EQ(info["levels"]["led"], 0.175);
}

TEST(BusDevice, IdealSensorsPassTruth) {
  ScenarioSpec spec = bus_scenario(3);
  spec.sensor_params = SensorParams::ideal();
  SimBackend backend(spec);
  Dispatcher d(backend);
  LoopbackClient client(d);
  backend.set(Actuator::air_heater, 1.0);
  backend.advance(1.0);
  const auto truth = backend.state();
  const auto rs = poll_all(client, truth.clock.seconds());
  for (Channel c : kAllChannels) EXPECT_EQ(rs[c].value, truth.truth(c)) << to_string(c);
}

TEST(BusDevice, PartialFault) {
  SimBackend backend(bus_scenario(3));
  Dispatcher d(backend);
  LoopbackClient client(d);
  backend.set_fault(Channel::co2, true);
  const auto rs = poll_all(client, 0);
  int faults = 0;
  for (const auto& r : rs.readings) faults += r.is_fault();
  EXPECT_EQ(faults, 1);
  EXPECT_TRUE(rs[Channel::co2].is_fault());
}

namespace {

// Closed loop over any client; returns every polled ReadingSet.
std::vector<ReadingSet> drive(Client& client, SimBackend& backend, int ticks) {
  const Recipe recipe = default_recipe();
  ControllerState st;
  std::vector<ReadingSet> seen;
  for (int i = 0; i < ticks; ++i) {
    const auto clock = backend.state().clock;
    auto rs = poll_all(client, clock.seconds());
    seen.push_back(rs);
    for (auto& r : rs.readings) r = validate_reading(r);
    auto res = tick(rs, recipe, st, clock);
    st = res.state;
    EXPECT_TRUE(apply_all(client, res.cmd).empty());
    backend.advance(1.0);
  }
  return seen;
}

}  // namespace

TEST(BusTransport, SocketMatchesInProcess) {
  SimBackend a(bus_scenario(42)), b(bus_scenario(42));
  Dispatcher da(a), db(b);
  LoopbackClient local(da);
  const auto path = std::filesystem::temp_directory_path() / ("farm-bus-" + std::to_string(::getpid()) + ".sock");
  Server server(db, parse_endpoint("unix:" + path.string()));
  server.start();
  SocketClient remote(server.endpoint(), std::chrono::milliseconds(2000));
  const auto x = drive(local, a, 600);
  const auto y = drive(remote, b, 600);
  EXPECT_EQ(x, y);
  EXPECT_EQ(a.state(), b.state());
  server.stop();
}

TEST(BusTransport, TcpPortZeroAndRawLines) {
  SimBackend backend(bus_scenario(1));
  Dispatcher d(backend);
  Server server(d, parse_endpoint("tcp://127.0.0.1:0"));
  server.start();
  ASSERT_GT(server.endpoint().port, 0);
  SocketClient c(server.endpoint());
  EXPECT_EQ(c.roundtrip("PING\n"), "OK\n");
  EXPECT_EQ(c.roundtrip(std::string(5000, 'z') + "\n"), "ERR BADCMD line too long\n");
  EXPECT_EQ(c.roundtrip("PING\r\n"), "OK\n");
  std::mt19937_64 rng(9);
  for (int i = 0; i < 2000; ++i) {
    std::string line;
    for (auto n = rng() % 80; n > 0; --n) {
      char ch = static_cast<char>(rng() & 0xFF);
      if (ch != '\n') line.push_back(ch);
    }
    const auto reply = c.roundtrip(line + "\n");
    ASSERT_TRUE(reply.starts_with("OK") || reply.starts_with("ERR ")) << reply;
  }
  server.stop();
}

TEST(BusTransport, ConcurrentWritersSerialize) {
  SimBackend backend(bus_scenario(1));
  Dispatcher d(backend);
  Server server(d, parse_endpoint("tcp://127.0.0.1:0"));
  server.start();
  auto writer = [&](double lo, double hi) {
    SocketClient c(server.endpoint(), std::chrono::milliseconds(2000));
    for (int i = 0; i < 1000; ++i) ASSERT_TRUE(c.transact(SetCmd{Actuator::led, i % 2 ? hi : lo}).is_ok());
  };
  std::thread t1(writer, 0.0, 0.25), t2(writer, 0.75, 1.0);
  t1.join();
  t2.join();
  SocketClient probe(server.endpoint());
  const auto info = json::parse(probe.transact(InfoCmd{}).payload.value());
  const double level = info["levels"]["led"].get<double>();
  // Each writer's last write was its `hi` value.
  EXPECT_TRUE(level == 0.25 || level == 1.0) << level;
  server.stop();
}

TEST(BusTransport, ParseEndpoint) {
  EXPECT_EQ(parse_endpoint("tcp://127.0.0.1:7700").port, 7700);
  EXPECT_EQ(parse_endpoint("unix:/tmp/x.sock").kind, Endpoint::Kind::unix_socket);
  EXPECT_THROW(parse_endpoint("tcp://127.0.0.1"), std::invalid_argument);
  EXPECT_THROW(parse_endpoint("tcp://127.0.0.1:99999"), std::invalid_argument);
}

TEST(BusTransport, ClientTimesOutOnSilentPeer) {
  // A listener that never answers.
  const auto path = std::filesystem::temp_directory_path() / ("farm-silent-" + std::to_string(::getpid()) + ".sock");
  auto ep = parse_endpoint("unix:" + path.string());
  auto listener = farm::bus::detail::open_socket(ep);
  auto addr = farm::bus::detail::unix_addr(ep);
  ::unlink(path.c_str());
  ASSERT_EQ(::bind(listener.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)), 0);
  ASSERT_EQ(::listen(listener.fd(), 1), 0);
  SocketClient c(ep, std::chrono::milliseconds(100));
  EXPECT_THROW(c.transact(PingCmd{}), TransportError);
  ::unlink(path.c_str());
}
