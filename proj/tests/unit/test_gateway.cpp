#include <doctest.h>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "gateway_probe.hpp"
#include "insitu/errors.hpp"
#include "insitu/gateway.hpp"
#include "insitu/gateway_link.hpp"

using namespace insitu;
using insitu::testing::closed_by_peer;
using insitu::testing::next_of_type;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

struct Fixture {
  explicit Fixture(int max_clients = 64) : server(config(max_clients)) { server.start_background(); }

  static GatewayConfig config(int max_clients) {
    GatewayConfig c;
    c.bind_address = "127.0.0.1";
    c.sim_port = 0;
    c.client_port = 0;
    c.max_clients = max_clients;
    return c;
  }

  LineSocket sim() { return LineSocket::connect("127.0.0.1", server.sim_port()); }
  LineSocket client() { return LineSocket::connect("127.0.0.1", server.client_port()); }

  GatewayServer server;
};

json registration(const std::string& name) {
  return {{"type", "register"},
          {"protocol", 1},
          {"name", name},
          {"ranks", 4},
          {"sources", {{{"name", "density"}, {"feature_dim", 1}}, {{"name", "velocity"}, {"feature_dim", 3}}}}};
}

std::int64_t register_sim(LineSocket& sim, const std::string& name) {
  sim.send_line(registration(name).dump());
  const json reply = next_of_type(sim, "registered").msg;
  REQUIRE(reply["session"].is_number_integer());
  return reply["session"].get<std::int64_t>();
}

void observe(LineSocket& client, std::int64_t session) {
  client.send_line(json{{"type", "observe"}, {"session", session}}.dump());
  const json reply = next_of_type(client, "observing").msg;
  REQUIRE(reply["session"] == session);
}

std::string frame_line(int step, std::size_t payload = 8) {
  return json{{"type", "frame"},
              {"step", step},
              {"image", {{"width", 2}, {"height", 1}, {"encoding", "raw_rgba8"}, {"data", std::string(payload, 'A')}}},
              {"metadata", {{"time", step * 0.5}}}}
      .dump();
}

template <typename Pred>
bool eventually(Pred pred, std::chrono::milliseconds timeout = 5s) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(5ms);
  }
  return pred();
}

}  // namespace

TEST_CASE("registration is acknowledged with an integer session id and listed") {
  Fixture f;
  LineSocket viewer = f.client();
  viewer.send_line(R"({"type":"list"})");
  CHECK(next_of_type(viewer, "sessions").msg["sessions"].empty());

  LineSocket sim = f.sim();
  const std::int64_t id = register_sim(sim, "shear");
  // Registration is pushed to connected clients without asking.
  const json pushed = next_of_type(viewer, "sessions").msg;
  REQUIRE(pushed["sessions"].size() == 1);
  CHECK(pushed["sessions"][0]["id"] == id);
  CHECK(pushed["sessions"][0]["name"] == "shear");
  CHECK(pushed["sessions"][0]["ranks"] == 4);
  CHECK(pushed["sessions"][0]["sources"][1] == json{{"name", "velocity"}, {"feature_dim", 3}});
  CHECK(f.server.stats().sessions == 1);

  LineSocket sim2 = f.sim();
  CHECK(register_sim(sim2, "other") != id);
  viewer.send_line(R"({"type":"list"})");
  CHECK(next_of_type(viewer, "sessions").msg["sessions"].size() == 2);
}

TEST_CASE("invalid registrations are rejected and the connection closed") {
  Fixture f;
  const std::vector<std::string> bad = {
      "not json",
      R"({"type":"frame","step":0})",
      R"({"type":"register","protocol":2,"name":"x","ranks":1,"sources":[]})",
      R"({"type":"register","protocol":1,"name":"","ranks":1,"sources":[]})",
      R"({"type":"register","protocol":1,"name":"x","ranks":0,"sources":[]})",
      R"({"type":"register","protocol":1,"name":"x","ranks":1})",
      R"({"type":"register","protocol":1,"name":"x","ranks":1,"sources":[{"name":"d","feature_dim":5}]})",
      R"({"type":"register","protocol":1,"name":"x","ranks":1,"sources":[{"feature_dim":1}]})",
  };
  for (const std::string& line : bad) {
    CAPTURE(line);
    LineSocket sim = f.sim();
    sim.send_line(line);
    CHECK(next_of_type(sim, "error").msg["message"].is_string());
    CHECK(closed_by_peer(sim));
  }
  CHECK(f.server.stats().sessions == 0);
}

TEST_CASE("a second register closes the simulation connection") {
  Fixture f;
  LineSocket sim = f.sim();
  register_sim(sim, "once");
  sim.send_line(registration("twice").dump());
  CHECK(next_of_type(sim, "error").msg["message"] == "already registered");
  CHECK(closed_by_peer(sim));
  CHECK(eventually([&] { return f.server.stats().sessions == 0; }));
}

TEST_CASE("frames reach every observer byte for byte and late joiners get the cached frame") {
  Fixture f;
  LineSocket sim = f.sim();
  const std::int64_t id = register_sim(sim, "relay");
  LineSocket a = f.client();
  LineSocket b = f.client();
  observe(a, id);
  observe(b, id);

  // Key order and spacing chosen so that any re-serialization would show.
  const std::string frame = R"({"type":"frame",  "step":3,"image":{"width":1,"height":1,"encoding":"raw_rgba8","data":"AAAAAA"},"metadata":{"z":1,"a":2.50}})";
  sim.send_line(frame);
  CHECK(next_of_type(a, "frame").line == frame);
  CHECK(next_of_type(b, "frame").line == frame);

  // Errors are relayed but do not replace the cache.
  const std::string error = R"({"type":"error","step":4,"message":"bad chain"})";
  sim.send_line(error);
  CHECK(next_of_type(a, "error").line == error);

  LineSocket late = f.client();
  observe(late, id);
  CHECK(next_of_type(late, "frame").line == frame);
  CHECK(f.server.stats().frames_received == 1);
}

TEST_CASE("observers only see their own session") {
  Fixture f;
  LineSocket s1 = f.sim();
  LineSocket s2 = f.sim();
  const std::int64_t id1 = register_sim(s1, "one");
  const std::int64_t id2 = register_sim(s2, "two");
  LineSocket c1 = f.client();
  LineSocket c2 = f.client();
  observe(c1, id1);
  observe(c2, id2);
  s2.send_line(frame_line(20));
  s1.send_line(frame_line(10));
  CHECK(next_of_type(c1, "frame").msg["step"] == 10);
  CHECK(next_of_type(c2, "frame").msg["step"] == 20);
  CHECK_THROWS(next_of_type(c1, "frame", 200ms));
  CHECK_THROWS(next_of_type(c2, "frame", 200ms));

  // Steering from c2 only reaches s2.
  c2.send_line(R"({"type":"steer","payload":{"action":"pause"}})");
  CHECK(next_of_type(s2, "steer").msg["payload"]["action"] == "pause");
  CHECK_THROWS(next_of_type(s1, "steer", 200ms));
}

TEST_CASE("steering is forwarded verbatim and requires observing") {
  Fixture f;
  LineSocket sim = f.sim();
  const std::int64_t id = register_sim(sim, "steer");
  LineSocket c = f.client();

  c.send_line(R"({"type":"steer","payload":{"action":"pause"}})");
  CHECK(next_of_type(c, "error").msg["message"].get<std::string>().find("observ") != std::string::npos);
  CHECK_THROWS(next_of_type(sim, "steer", 200ms));

  observe(c, id);
  const std::string steer = R"({"type":"steer", "payload":{"action":"set_period","period":7}})";
  c.send_line(steer);
  CHECK(next_of_type(sim, "steer").line == steer);
  CHECK(f.server.stats().steers_forwarded == 1);

  c.send_line(R"({"type":"steer","payload":3})");
  CHECK(next_of_type(c, "error").msg.contains("message"));

  c.send_line(R"({"type":"observe","session":999})");
  CHECK(next_of_type(c, "error").msg["message"] == "no such session");
}

TEST_CASE("malformed client lines get an error and the connection stays usable") {
  Fixture f;
  LineSocket c = f.client();
  c.send_line("{broken");
  CHECK(next_of_type(c, "error").msg.contains("message"));
  c.send_line(R"({"type":"dance"})");
  CHECK(next_of_type(c, "error").msg["message"].get<std::string>().find("dance") != std::string::npos);
  c.send_line(R"([1,2,3])");
  CHECK(next_of_type(c, "error").msg.contains("message"));
  c.send_line(R"({"type":"list"})");
  CHECK(next_of_type(c, "sessions").msg["sessions"].is_array());
}

TEST_CASE("client exit closes that client only") {
  Fixture f;
  LineSocket sim = f.sim();
  const std::int64_t id = register_sim(sim, "exit");
  LineSocket a = f.client();
  LineSocket b = f.client();
  observe(a, id);
  observe(b, id);
  a.send_line(R"({"type":"exit"})");
  CHECK(closed_by_peer(a));
  sim.send_line(frame_line(1));
  CHECK(next_of_type(b, "frame").msg["step"] == 1);
  CHECK(eventually([&] { return f.server.stats().clients == 1; }));
}

TEST_CASE("observers are told when their session ends") {
  Fixture f;
  auto sim = std::make_unique<LineSocket>(f.sim());
  const std::int64_t id = register_sim(*sim, "short");
  LineSocket c = f.client();
  observe(c, id);
  sim.reset();
  CHECK(next_of_type(c, "session_closed").msg["session"] == id);
  CHECK(next_of_type(c, "sessions").msg["sessions"].empty());
  c.send_line(R"({"type":"steer","payload":{"action":"pause"}})");
  CHECK(next_of_type(c, "error").msg.contains("message"));
}

TEST_CASE("client limit is enforced") {
  Fixture f(2);
  LineSocket a = f.client();
  LineSocket b = f.client();
  a.send_line(R"({"type":"list"})");
  b.send_line(R"({"type":"list"})");
  next_of_type(a, "sessions");
  next_of_type(b, "sessions");
  LineSocket c = f.client();
  CHECK(next_of_type(c, "error").msg["message"] == "too many clients");
  CHECK(closed_by_peer(c));
}

TEST_CASE("a client that stops reading does not stall the others") {
  Fixture f;
  LineSocket sim = f.sim();
  const std::int64_t id = register_sim(sim, "flood");
  LineSocket slow = f.client();
  LineSocket fast = f.client();
  observe(slow, id);
  observe(fast, id);

  // 1 MiB frames: a few fill the slow client's socket buffers.
  constexpr int kFrames = 60;
  std::jthread feeder([&] {
    for (int s = 0; s < kFrames; ++s) sim.send_line(frame_line(s, 1u << 20));
  });
  int last = -1;
  const auto deadline = std::chrono::steady_clock::now() + 30s;
  while (last != kFrames - 1 && std::chrono::steady_clock::now() < deadline) {
    const int step = next_of_type(fast, "frame", 30s).msg["step"].get<int>();
    CHECK(step > last);
    last = step;
  }
  CHECK(last == kFrames - 1);
  feeder.join();
  CHECK(f.server.stats().frames_received == kFrames);
  CHECK(eventually([&] { return f.server.stats().frames_dropped > 0; }));

  // The slow client still receives the newest frame once it drains.
  int slow_last = -1;
  try {
    while (slow_last != kFrames - 1) slow_last = next_of_type(slow, "frame", 5s).msg["step"].get<int>();
  } catch (const std::runtime_error&) {
  }
  CHECK(slow_last == kFrames - 1);
}

TEST_CASE("WebSocket clients share the client port") {
  namespace beast = boost::beast;
  namespace websocket = beast::websocket;
  using tcp = boost::asio::ip::tcp;

  Fixture f;
  LineSocket sim = f.sim();
  const std::int64_t id = register_sim(sim, "browser");

  boost::asio::io_context io;
  websocket::stream<tcp::socket> ws(io);
  ws.next_layer().connect(tcp::endpoint(boost::asio::ip::make_address("127.0.0.1"), f.server.client_port()));
  ws.handshake("127.0.0.1", "/");
  ws.text(true);

  const auto read_type = [&](const std::string& type) {
    for (;;) {
      beast::flat_buffer buf;
      ws.read(buf);
      const std::string text = beast::buffers_to_string(buf.data());
      const json msg = json::parse(text);
      if (msg.value("type", std::string()) == type) return std::make_pair(text, msg);
    }
  };

  ws.write(boost::asio::buffer(std::string(R"({"type":"list"})")));
  CHECK(read_type("sessions").second["sessions"][0]["id"] == id);
  ws.write(boost::asio::buffer(json{{"type", "observe"}, {"session", id}}.dump()));
  read_type("observing");

  const std::string frame = frame_line(5);
  sim.send_line(frame);
  CHECK(read_type("frame").first == frame);

  const std::string steer = R"({"type":"steer","payload":{"action":"resume"}})";
  ws.write(boost::asio::buffer(steer));
  CHECK(next_of_type(sim, "steer").line == steer);

  ws.close(websocket::close_code::normal);
  CHECK(eventually([&] { return f.server.stats().clients == 0; }));
}

TEST_CASE("ports in use are reported") {
  Fixture f;
  GatewayConfig c = Fixture::config(4);
  c.sim_port = f.server.sim_port();
  GatewayServer clash(c);
  CHECK_THROWS_AS(clash.open(), TransportError);
}
