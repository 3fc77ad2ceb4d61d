#include <gtest/gtest.h>

#include <cstring>

#include "dvdamp/bridge.hpp"
#include "dvdamp/denoisers.hpp"
#include "test_support.hpp"

using namespace dvdamp;
using namespace dvdamp::bridge;

namespace {

BandVector sds_ramp() {
  BandVector v;
  for (std::size_t s = 0; s < kNumBands; ++s) v[s] = 0.25f * float(s + 1);
  return v;
}

// Values exactly representable in float32 so the echo is lossless.
ImageGrid float_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  auto img = oracle::random_image(h, w, seed, true, 50.0);
  for (auto& v : img.values()) v = Complex(float(v.real()), float(v.imag()));
  return img;
}

std::vector<std::uint8_t> le32(float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  return {std::uint8_t(bits), std::uint8_t(bits >> 8), std::uint8_t(bits >> 16), std::uint8_t(bits >> 24)};
}

std::vector<std::uint8_t> raw_frame(const std::string& payload) {
  std::vector<std::uint8_t> out;
  for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(payload.size() >> (8 * i)));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::string socket_path(const std::string& name) { return (oracle::temp_dir("bridge-" + name) / "s.sock").string(); }

void expect_bit_exact_echo(const std::string& endpoint) {
  BridgeDenoiser d(endpoint, std::chrono::seconds(5));
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto img = float_image(48, 48, seed);
    const auto out = d.denoise(img, sds_ramp());
    ASSERT_TRUE(out.same_shape(img));
    EXPECT_EQ(std::memcmp(out.values().data(), img.values().data(), img.size() * sizeof(Complex)), 0)
        << endpoint;
  }
}

}  // namespace

TEST(Wire, FrameBytesMatchHandBuiltLayout) {
  ImageGrid img(1, 2);
  img[0] = Complex(1.0, -2.0);
  img[1] = Complex(0.5, 3.0);
  BandVector sds;
  sds.fill(0.0);
  sds[12] = 7.0;
  const auto frame = encode_frame(make_request(img, sds));

  std::string header = R"({"h":1,"w":2,"bands":13,"dtype":"f32","kind":"denoise_request"})";
  header += '\n';
  std::vector<std::uint8_t> payload(header.begin(), header.end());
  for (float f : {1.0f, 0.5f, -2.0f, 3.0f}) {
    const auto b = le32(f);
    payload.insert(payload.end(), b.begin(), b.end());
  }
  for (std::size_t s = 0; s < kNumBands; ++s) {
    const auto b = le32(s == 12 ? 7.0f : 0.0f);
    payload.insert(payload.end(), b.begin(), b.end());
  }
  std::vector<std::uint8_t> expected;
  for (int i = 0; i < 8; ++i) expected.push_back(std::uint8_t(payload.size() >> (8 * i)));
  expected.insert(expected.end(), payload.begin(), payload.end());
  EXPECT_EQ(frame, expected);
}

TEST(Wire, PayloadRoundTripIsExact) {
  const auto img = float_image(16, 32, 3);
  const auto msg = make_request(img, sds_ramp());
  const auto back = decode_payload(encode_payload(msg));
  EXPECT_EQ(back.kind, MessageKind::denoise_request);
  EXPECT_EQ(back.height, 16u);
  EXPECT_EQ(back.width, 32u);
  EXPECT_EQ(back.real, msg.real);
  EXPECT_EQ(back.imag, msg.imag);
  EXPECT_EQ(back.band_sds, msg.band_sds);
  EXPECT_EQ(image_from_message(back), img);

  const auto err = decode_payload(encode_payload(error_message("boom")));
  EXPECT_EQ(err.kind, MessageKind::error);
  EXPECT_EQ(err.error_message, "boom");
}

TEST(Wire, MalformedPayloadsAreProtocolErrors) {
  auto bytes = [](const std::string& s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
  EXPECT_THROW(decode_payload(bytes("no newline here")), ProtocolError);
  EXPECT_THROW(decode_payload(bytes("{not json\n")), ProtocolError);
  EXPECT_THROW(decode_payload(bytes("[1,2]\n")), ProtocolError);
  EXPECT_THROW(decode_payload(bytes(R"({"h":1,"w":1,"bands":13,"dtype":"f32","kind":"hello"})" "\n")),
               ProtocolError);
  EXPECT_THROW(decode_payload(bytes(R"({"h":1,"w":1,"bands":13,"dtype":"f64","kind":"denoise_response"})" "\n")),
               ProtocolError);
  EXPECT_THROW(decode_payload(bytes(R"({"h":1,"w":1,"bands":12,"dtype":"f32","kind":"denoise_response"})" "\n")),
               ProtocolError);
  EXPECT_THROW(decode_payload(bytes(R"({"h":0,"w":1,"bands":13,"dtype":"f32","kind":"denoise_response"})" "\n")),
               ProtocolError);
  EXPECT_THROW(decode_payload(bytes(R"({"w":1,"bands":13,"dtype":"f32","kind":"denoise_response"})" "\n")),
               ProtocolError);
  // One float short of h*w + h*w.
  EXPECT_THROW(decode_payload(bytes(R"({"h":1,"w":1,"bands":13,"dtype":"f32","kind":"denoise_response"})" "\nabcd")),
               ProtocolError);
}

TEST(Loopback, UnixEchoIsBitExact) {
  Server server("unix:" + socket_path("unix"), echo_handler);
  expect_bit_exact_echo(server.endpoint());
}

TEST(Loopback, TcpEchoIsBitExact) {
  Server server("tcp:127.0.0.1:0", echo_handler);
  EXPECT_EQ(server.endpoint().rfind("tcp:127.0.0.1:", 0), 0u);
  expect_bit_exact_echo(server.endpoint());
}

TEST(Loopback, ExecEchoThroughCliIsBitExact) {
  expect_bit_exact_echo(std::string("exec:") + DVDAMP_CLI_PATH + " serve-echo --stdio");
}

TEST(Loopback, EchoBridgeActsAsIdentityUpToFloat32) {
  Server server("tcp:127.0.0.1:0", echo_handler);
  auto d = apply_imaginary_policy(BridgeDenoiser(server.endpoint()), ImaginaryPolicy{ImaginaryMode::passthrough, 0.1});
  const auto img = oracle::random_image(32, 32, 9);
  const auto out = d.denoise(img, sds_ramp());
  EXPECT_LT(oracle::rel_l2_diff(out.values(), img.values()), 1e-7);
}

TEST(ServerSide, BadRequestsGetErrorReplies) {
  Server server("unix:" + socket_path("server"), echo_handler);
  Channel ch = connect_endpoint(server.endpoint());
  const auto deadline = [] { return std::chrono::steady_clock::now() + std::chrono::seconds(5); };

  const std::string twelve = R"({"h":16,"w":16,"bands":12,"dtype":"f32","kind":"denoise_request"})" "\n";
  ch.write_all(raw_frame(twelve));
  auto reply = ch.receive_message(deadline());
  EXPECT_EQ(reply.kind, MessageKind::error);
  EXPECT_NE(reply.error_message.find("13"), std::string::npos);

  ch.send_message(make_request(ImageGrid(8, 24), sds_ramp()));
  reply = ch.receive_message(deadline());
  EXPECT_EQ(reply.kind, MessageKind::error);
  EXPECT_NE(reply.error_message.find("16"), std::string::npos);

  ch.write_all(raw_frame("garbage\n"));
  EXPECT_EQ(ch.receive_message(deadline()).kind, MessageKind::error);

  // The connection survives and still serves valid requests.
  const auto img = float_image(16, 16, 1);
  ch.send_message(make_request(img, sds_ramp()));
  reply = ch.receive_message(deadline());
  EXPECT_EQ(reply.kind, MessageKind::denoise_response);
  EXPECT_EQ(image_from_message(reply), img);
}

TEST(ClientErrors, NonMultipleOfSixteenIsRemoteError) {
  Server server("tcp:127.0.0.1:0", echo_handler);
  BridgeDenoiser d(server.endpoint(), std::chrono::seconds(5));
  EXPECT_THROW(d.denoise(ImageGrid(24, 24), sds_ramp()), RemoteError);
  EXPECT_NO_THROW(d.denoise(ImageGrid(16, 16), sds_ramp()));
}

TEST(ClientErrors, HandlerErrorIsRemoteError) {
  Server server("tcp:127.0.0.1:0", [](const Message&) -> Message { throw std::runtime_error("model exploded"); });
  BridgeDenoiser d(server.endpoint(), std::chrono::seconds(5));
  try {
    d.denoise(ImageGrid(16, 16), sds_ramp());
    FAIL() << "expected RemoteError";
  } catch (const RemoteError& e) {
    EXPECT_NE(std::string(e.what()).find("model exploded"), std::string::npos);
  }
}

TEST(ClientErrors, WrongResponseDimensionsAreDetected) {
  Server server("tcp:127.0.0.1:0", [](const Message& m) {
    Message r = echo_handler(m);
    r.height = m.height / 2;
    r.real.resize(r.height * r.width);
    r.imag.resize(r.height * r.width);
    return r;
  });
  BridgeDenoiser d(server.endpoint(), std::chrono::seconds(5));
  EXPECT_THROW(d.denoise(ImageGrid(32, 32), sds_ramp()), DimensionMismatchError);
}

TEST(ClientErrors, MalformedResponseHeaderIsProtocolError) {
  // Replies with a 5-byte payload that has no header line.
  BridgeDenoiser d(R"(exec:printf '\005\000\000\000\000\000\000\000abcde'; exec sleep 5)",
                   std::chrono::seconds(5));
  EXPECT_THROW(d.denoise(ImageGrid(16, 16), sds_ramp()), ProtocolError);
}

TEST(ClientErrors, SilentPeerTimesOut) {
  BridgeDenoiser d("exec:exec sleep 30", std::chrono::milliseconds(200));
  const auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(d.denoise(ImageGrid(16, 16), sds_ramp()), TimeoutError);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(3));
}

TEST(ClientErrors, UnreachableEndpointsAreConnectionErrors) {
  EXPECT_THROW(BridgeDenoiser("unix:" + socket_path("missing")).denoise(ImageGrid(16, 16), sds_ramp()),
               ConnectionError);
  int port;
  {
    Server probe("tcp:127.0.0.1:0", echo_handler);
    port = std::stoi(probe.endpoint().substr(probe.endpoint().rfind(':') + 1));
  }
  EXPECT_THROW(BridgeDenoiser("tcp:127.0.0.1:" + std::to_string(port)).denoise(ImageGrid(16, 16), sds_ramp()),
               ConnectionError);
  EXPECT_THROW(BridgeDenoiser("nonsense").denoise(ImageGrid(16, 16), sds_ramp()), ConnectionError);
  // A peer that exits before answering.
  EXPECT_THROW(BridgeDenoiser("exec:true").denoise(ImageGrid(16, 16), sds_ramp()), ConnectionError);
}

TEST(ClientErrors, ClientReconnectsAfterFailure) {
  int calls = 0;
  Server server("tcp:127.0.0.1:0", [&](const Message& m) {
    if (calls++ == 0) throw std::runtime_error("first call fails");
    return echo_handler(m);
  });
  BridgeDenoiser d(server.endpoint(), std::chrono::seconds(5));
  EXPECT_THROW(d.denoise(ImageGrid(16, 16), sds_ramp()), RemoteError);
  const auto img = float_image(16, 16, 2);
  EXPECT_EQ(d.denoise(img, sds_ramp()), img);
}
