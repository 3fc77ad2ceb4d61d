#pragma once

// Bridge protocol v1: every message is an 8-byte little-endian payload length
// followed by the payload. A payload is a one-line JSON header terminated by
// '\n', then little-endian float32 data:
//   denoise_request : h*w real, h*w imaginary, 13 band standard deviations
//   denoise_response: h*w real, h*w imaginary
//   error           : no float data; a JSON object {"message": ...} follows the header
// Transports: "unix:/path", "tcp:host:port" or "exec:shell command" (stdio of a child).

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dvdamp/core.hpp"
#include "dvdamp/denoisers.hpp"
#include "dvdamp/wavelet.hpp"

namespace dvdamp::bridge {

class BridgeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ConnectionError : public BridgeError {
 public:
  using BridgeError::BridgeError;
};
class TimeoutError : public BridgeError {
 public:
  using BridgeError::BridgeError;
};
class ProtocolError : public BridgeError {
 public:
  using BridgeError::BridgeError;
};
class DimensionMismatchError : public BridgeError {
 public:
  using BridgeError::BridgeError;
};
// The peer answered with kind "error".
class RemoteError : public BridgeError {
 public:
  using BridgeError::BridgeError;
};

inline constexpr std::uint64_t kMaxPayloadBytes = std::uint64_t{1} << 31;

enum class MessageKind { denoise_request, denoise_response, error };

inline std::string to_string(MessageKind k) {
  switch (k) {
    case MessageKind::denoise_request: return "denoise_request";
    case MessageKind::denoise_response: return "denoise_response";
    case MessageKind::error: return "error";
  }
  return "?";
}

struct Message {
  MessageKind kind = MessageKind::denoise_request;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> real;
  std::vector<float> imag;
  std::vector<float> band_sds;  // requests only
  std::string error_message;    // errors only
};

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

inline float get_f32(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t{p[i]} << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

// Payload bytes (without the length prefix).
inline std::vector<std::uint8_t> encode_payload(const Message& msg) {
  const nlohmann::ordered_json header = {{"h", msg.height},
                           {"w", msg.width},
                           {"bands", kNumBands},
                           {"dtype", "f32"},
                           {"kind", to_string(msg.kind)}};
  const std::string line = header.dump() + "\n";
  std::vector<std::uint8_t> out(line.begin(), line.end());
  if (msg.kind == MessageKind::error) {
    const std::string body = nlohmann::json{{"message", msg.error_message}}.dump();
    out.insert(out.end(), body.begin(), body.end());
    return out;
  }
  for (float v : msg.real) detail::put_f32(out, v);
  for (float v : msg.imag) detail::put_f32(out, v);
  if (msg.kind == MessageKind::denoise_request) {
    for (float v : msg.band_sds) detail::put_f32(out, v);
  }
  return out;
}

inline std::vector<std::uint8_t> encode_frame(const Message& msg) {
  const auto payload = encode_payload(msg);
  std::vector<std::uint8_t> frame;
  frame.reserve(payload.size() + 8);
  detail::put_u64(frame, payload.size());
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

inline Message decode_payload(std::span<const std::uint8_t> payload) {
  const auto* begin = payload.data();
  const auto* end = begin + payload.size();
  const auto* newline = std::find(begin, end, std::uint8_t{'\n'});
  if (newline == end) throw ProtocolError("payload has no header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(begin, newline);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed header: ") + e.what());
  }
  if (!header.is_object()) throw ProtocolError("header is not a JSON object");
  Message msg;
  try {
    const std::string kind = header.at("kind").get<std::string>();
    if (kind == "denoise_request") {
      msg.kind = MessageKind::denoise_request;
    } else if (kind == "denoise_response") {
      msg.kind = MessageKind::denoise_response;
    } else if (kind == "error") {
      msg.kind = MessageKind::error;
    } else {
      throw ProtocolError("unknown message kind '" + kind + "'");
    }
    if (msg.kind == MessageKind::error) {
      const std::string body(newline + 1, end);
      try {
        msg.error_message = nlohmann::json::parse(body).at("message").get<std::string>();
      } catch (const nlohmann::json::exception&) {
        msg.error_message = body;
      }
      return msg;
    }
    if (header.at("dtype").get<std::string>() != "f32") throw ProtocolError("dtype must be f32");
    if (header.at("bands").get<int>() != kNumBands) {
      throw ProtocolError("bands must be " + std::to_string(kNumBands));
    }
    const auto h = header.at("h").get<std::int64_t>();
    const auto w = header.at("w").get<std::int64_t>();
    if (h <= 0 || w <= 0) throw ProtocolError("h and w must be positive");
    msg.height = static_cast<std::size_t>(h);
    msg.width = static_cast<std::size_t>(w);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("invalid header field: ") + e.what());
  }
  const std::size_t n = msg.height * msg.width;
  const std::size_t floats = 2 * n + (msg.kind == MessageKind::denoise_request ? kNumBands : 0);
  const auto* data = newline + 1;
  if (static_cast<std::size_t>(end - data) != 4 * floats) {
    throw ProtocolError("payload carries " + std::to_string(end - data) + " data bytes, expected " +
                        std::to_string(4 * floats));
  }
  msg.real.resize(n);
  msg.imag.resize(n);
  for (std::size_t i = 0; i < n; ++i) msg.real[i] = detail::get_f32(data + 4 * i);
  for (std::size_t i = 0; i < n; ++i) msg.imag[i] = detail::get_f32(data + 4 * (n + i));
  if (msg.kind == MessageKind::denoise_request) {
    msg.band_sds.resize(kNumBands);
    for (std::size_t s = 0; s < kNumBands; ++s) msg.band_sds[s] = detail::get_f32(data + 4 * (2 * n + s));
  }
  return msg;
}

inline Message make_request(const ImageGrid& image, const BandVector& band_sds) {
  Message msg;
  msg.kind = MessageKind::denoise_request;
  msg.height = image.height();
  msg.width = image.width();
  msg.real.resize(image.size());
  msg.imag.resize(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    msg.real[i] = static_cast<float>(image[i].real());
    msg.imag[i] = static_cast<float>(image[i].imag());
  }
  msg.band_sds.assign(band_sds.begin(), band_sds.end());
  return msg;
}

inline ImageGrid image_from_message(const Message& msg) {
  ImageGrid out(msg.height, msg.width);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Complex(msg.real[i], msg.imag[i]);
  return out;
}

// Owned file descriptors of a connected byte stream (socket or socketpair to a child).
class Channel {
 public:
  Channel() = default;
  explicit Channel(int fd, pid_t child = -1) : fd_(fd), child_(child) {}
  Channel(const Channel&) = delete;
  Channel& operator=(const Channel&) = delete;
  Channel(Channel&& o) noexcept : fd_(std::exchange(o.fd_, -1)), child_(std::exchange(o.child_, -1)) {}
  Channel& operator=(Channel&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
      child_ = std::exchange(o.child_, -1);
    }
    return *this;
  }
  ~Channel() { close(); }

  bool is_open() const { return fd_ >= 0; }
  int fd() const { return fd_; }

  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
    if (child_ > 0) {
      ::kill(child_, SIGTERM);
      int status = 0;
      ::waitpid(child_, &status, 0);
    }
    child_ = -1;
  }

  void write_all(std::span<const std::uint8_t> bytes) {
    std::size_t done = 0;
    while (done < bytes.size()) {
      const ssize_t k = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
      if (k < 0) {
        if (errno == EINTR) continue;
        throw ConnectionError(std::string("bridge write failed: ") + std::strerror(errno));
      }
      done += static_cast<std::size_t>(k);
    }
  }

  // Reads exactly out.size() bytes before the deadline.
  void read_exact(std::span<std::uint8_t> out, std::chrono::steady_clock::time_point deadline) {
    std::size_t done = 0;
    while (done < out.size()) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw TimeoutError("bridge response timed out");
      pollfd p{fd_, POLLIN, 0};
      const int ready = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw ConnectionError(std::string("bridge poll failed: ") + std::strerror(errno));
      }
      if (ready == 0) throw TimeoutError("bridge response timed out");
      const ssize_t k = ::recv(fd_, out.data() + done, out.size() - done, 0);
      if (k == 0) throw ConnectionError("bridge peer closed the connection");
      if (k < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw ConnectionError(std::string("bridge read failed: ") + std::strerror(errno));
      }
      done += static_cast<std::size_t>(k);
    }
  }

  void send_message(const Message& msg) { write_all(encode_frame(msg)); }

  Message receive_message(std::chrono::steady_clock::time_point deadline) {
    std::uint8_t prefix[8];
    read_exact(prefix, deadline);
    const std::uint64_t length = detail::get_u64(prefix);
    if (length > kMaxPayloadBytes) {
      throw ProtocolError("payload length " + std::to_string(length) + " exceeds the limit");
    }
    std::vector<std::uint8_t> payload(length);
    read_exact(payload, deadline);
    return decode_payload(payload);
  }

 private:
  int fd_ = -1;
  pid_t child_ = -1;
};

inline Channel connect_unix(const std::string& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path)) throw ConnectionError("unix socket path too long");
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw ConnectionError(std::string("socket: ") + std::strerror(errno));
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const int err = errno;
    ::close(fd);
    throw ConnectionError("cannot connect to unix:" + path + ": " + std::strerror(err));
  }
  return Channel(fd);
}

inline Channel connect_tcp(const std::string& host, const std::string& port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw ConnectionError("cannot resolve " + host + ":" + port + ": " + ::gai_strerror(rc));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
  for (auto* ai = res; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) return Channel(fd);
    ::close(fd);
  }
  throw ConnectionError("cannot connect to tcp:" + host + ":" + port);
}

// Spawns `sh -c command` with its stdin/stdout bound to one end of a socketpair.
inline Channel spawn_process(const std::string& command) {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
    throw ConnectionError(std::string("socketpair: ") + std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    throw ConnectionError(std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::dup2(fds[1], STDIN_FILENO);
    ::dup2(fds[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(fds[1]);
  return Channel(fds[0], pid);
}

inline Channel connect_endpoint(const std::string& endpoint) {
  if (endpoint.rfind("unix:", 0) == 0) return connect_unix(endpoint.substr(5));
  if (endpoint.rfind("exec:", 0) == 0) return spawn_process(endpoint.substr(5));
  std::string rest = endpoint.rfind("tcp:", 0) == 0 ? endpoint.substr(4) : endpoint;
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos) {
    throw ConnectionError("endpoint '" + endpoint + "' is not unix:PATH, tcp:HOST:PORT or exec:CMD");
  }
  return connect_tcp(rest.substr(0, colon), rest.substr(colon + 1));
}

// Colored denoiser served by an external process over protocol v1. One request
// in flight at a time; the connection is opened lazily and reused.
class BridgeDenoiser {
 public:
  explicit BridgeDenoiser(std::string endpoint,
                          std::chrono::milliseconds timeout = std::chrono::seconds(60))
      : endpoint_(std::move(endpoint)), timeout_(timeout), channel_(std::make_shared<Channel>()) {}

  ImageGrid denoise(const ImageGrid& image, const BandVector& band_sds) {
    if (!channel_->is_open()) *channel_ = connect_endpoint(endpoint_);
    try {
      channel_->send_message(make_request(image, band_sds));
      const Message reply = channel_->receive_message(std::chrono::steady_clock::now() + timeout_);
      if (reply.kind == MessageKind::error) {
        throw RemoteError("bridge server error: " + reply.error_message);
      }
      if (reply.kind != MessageKind::denoise_response) {
        throw ProtocolError("expected denoise_response, got " + to_string(reply.kind));
      }
      if (reply.height != image.height() || reply.width != image.width()) {
        throw DimensionMismatchError(
            "bridge returned " + std::to_string(reply.height) + "x" + std::to_string(reply.width) +
            " for a " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
            " request");
      }
      return image_from_message(reply);
    } catch (const BridgeError&) {
      // The stream position is unknown after any failure.
      channel_->close();
      throw;
    }
  }

  DenoiserDescriptor descriptor() const { return {"bridge:" + endpoint_, {}}; }
  const std::string& endpoint() const { return endpoint_; }

 private:
  std::string endpoint_;
  std::chrono::milliseconds timeout_;
  std::shared_ptr<Channel> channel_;
};

// Request handler for servers: returns the response (or an error message).
using Handler = std::function<Message(const Message&)>;

inline Message error_message(std::string text) {
  Message m;
  m.kind = MessageKind::error;
  m.error_message = std::move(text);
  return m;
}

inline Message echo_handler(const Message& request) {
  Message reply = request;
  reply.kind = MessageKind::denoise_response;
  reply.band_sds.clear();
  return reply;
}

// Serves one connection until the peer disconnects. Undecodable requests are
// answered with kind "error" when the frame itself was intact.
inline void serve_channel(Channel& channel, const Handler& handler,
                          const std::function<bool()>& should_stop = [] { return false; }) {
  const auto forever = std::chrono::steady_clock::time_point::max();
  while (true) {
    pollfd p{channel.fd(), POLLIN, 0};
    const int ready = ::poll(&p, 1, 50);
    if (should_stop()) return;
    if (ready <= 0) continue;
    std::uint8_t prefix[8];
    try {
      channel.read_exact(prefix, forever);
    } catch (const ConnectionError&) {
      return;
    }
    const std::uint64_t length = detail::get_u64(prefix);
    if (length > kMaxPayloadBytes) {
      channel.send_message(error_message("payload too large"));
      return;
    }
    std::vector<std::uint8_t> payload(length);
    try {
      channel.read_exact(payload, forever);
    } catch (const ConnectionError&) {
      return;
    }
    Message reply;
    try {
      const Message request = decode_payload(payload);
      if (request.kind != MessageKind::denoise_request) {
        reply = error_message("expected denoise_request");
      } else if (request.height % kDimensionQuantum != 0 || request.width % kDimensionQuantum != 0) {
        reply = error_message("dimensions must be multiples of " + std::to_string(kDimensionQuantum));
      } else {
        reply = handler(request);
      }
    } catch (const std::exception& e) {
      reply = error_message(e.what());
    }
    try {
      channel.send_message(reply);
    } catch (const ConnectionError&) {
      return;
    }
  }
}

// Listens on a unix socket path or 127.0.0.1:port and serves connections
// sequentially on a background thread until destroyed.
class Server {
 public:
  Server(const std::string& endpoint, Handler handler) : handler_(std::move(handler)) {
    if (endpoint.rfind("unix:", 0) == 0) {
      path_ = endpoint.substr(5);
      ::unlink(path_.c_str());
      sockaddr_un addr{};
      addr.sun_family = AF_UNIX;
      if (path_.size() >= sizeof(addr.sun_path)) throw ConnectionError("unix socket path too long");
      std::memcpy(addr.sun_path, path_.c_str(), path_.size() + 1);
      listen_fd_ = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
      if (listen_fd_ < 0 || ::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        throw ConnectionError("cannot bind " + endpoint + ": " + std::strerror(errno));
      }
      endpoint_ = endpoint;
    } else {
      std::string rest = endpoint.rfind("tcp:", 0) == 0 ? endpoint.substr(4) : endpoint;
      const auto colon = rest.rfind(':');
      const int port = colon == std::string::npos ? 0 : std::stoi(rest.substr(colon + 1));
      listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
      const int one = 1;
      ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
      sockaddr_in addr{};
      addr.sin_family = AF_INET;
      addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
      addr.sin_port = htons(static_cast<std::uint16_t>(port));
      if (listen_fd_ < 0 || ::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        throw ConnectionError("cannot bind " + endpoint + ": " + std::strerror(errno));
      }
      socklen_t len = sizeof(addr);
      ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
      endpoint_ = "tcp:127.0.0.1:" + std::to_string(ntohs(addr.sin_port));
    }
    if (::listen(listen_fd_, 4) != 0) {
      throw ConnectionError(std::string("listen: ") + std::strerror(errno));
    }
    thread_ = std::thread([this] { run(); });
  }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  ~Server() {
    stop_ = true;
    ::shutdown(listen_fd_, SHUT_RDWR);
    if (thread_.joinable()) thread_.join();
    ::close(listen_fd_);
    if (!path_.empty()) ::unlink(path_.c_str());
  }

  // Connectable endpoint string (with the bound port for tcp).
  const std::string& endpoint() const { return endpoint_; }

 private:
  void run() {
    while (!stop_) {
      pollfd p{listen_fd_, POLLIN, 0};
      if (::poll(&p, 1, 50) <= 0) continue;
      const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) continue;
      Channel channel(fd);
      serve_channel(channel, handler_, [this] { return stop_.load(); });
    }
  }

  Handler handler_;
  int listen_fd_ = -1;
  std::string path_;
  std::string endpoint_;
  std::atomic<bool> stop_{false};
  std::thread thread_;
};

}  // namespace dvdamp::bridge
