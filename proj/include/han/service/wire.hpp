#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "han/core/error.hpp"

namespace han::service {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxMessageBytes = 16u << 20;

/// Transport failure: connection lost, oversized frame, timeout on the client side.
class WireError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- base64 (RFC 4648, padded) ---------------------------------------------------

inline std::string base64_encode(const std::vector<std::uint8_t>& in) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    out += kAlphabet[v >> 18];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < in.size()) {
    std::uint32_t v = in[i] << 16;
    if (i + 1 < in.size()) v |= in[i + 1] << 8;
    out += kAlphabet[v >> 18];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < in.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (in.size() % 4) throw FormatError("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      if (in[i + k] == '=' && i + 4 == in.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else if (pad || (v[k] = value(in[i + k])) < 0) {
        throw FormatError("invalid base64 character");
      }
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(w >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w));
  }
  return out;
}

// ---- framing: 4-byte big-endian length, then UTF-8 JSON ---------------------------

namespace detail {

inline void write_all(int fd, const void* data, std::size_t n) {
  const char* p = static_cast<const char*>(data);
  while (n) {
    const ssize_t k = ::send(fd, p, n, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      throw WireError(std::string("send failed: ") + std::strerror(errno));
    }
    p += k;
    n -= static_cast<std::size_t>(k);
  }
}

// false on orderly close before any byte was read
inline bool read_all(int fd, void* data, std::size_t n) {
  char* p = static_cast<char*>(data);
  std::size_t got = 0;
  while (got < n) {
    const ssize_t k = ::recv(fd, p + got, n - got, 0);
    if (k == 0) {
      if (got == 0) return false;
      throw WireError("connection closed mid-message");
    }
    if (k < 0) {
      if (errno == EINTR) continue;
      throw WireError(std::string("recv failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(k);
  }
  return true;
}

}  // namespace detail

inline void send_raw(int fd, const std::string& payload) {
  if (payload.size() > kMaxMessageBytes) throw WireError("message too large");
  const std::uint32_t len = htonl(static_cast<std::uint32_t>(payload.size()));
  detail::write_all(fd, &len, 4);
  detail::write_all(fd, payload.data(), payload.size());
}

inline void send_message(int fd, const nlohmann::json& j) { send_raw(fd, j.dump()); }

enum class RecvStatus { kMessage, kTimeout, kClosed };

/// Waits up to timeout_ms (negative: forever) for the next frame.
inline RecvStatus recv_raw(int fd, std::string& out, int timeout_ms) {
  pollfd p{fd, POLLIN, 0};
  int r;
  do r = ::poll(&p, 1, timeout_ms);
  while (r < 0 && errno == EINTR);
  if (r < 0) throw WireError(std::string("poll failed: ") + std::strerror(errno));
  if (r == 0) return RecvStatus::kTimeout;
  std::uint32_t len;
  if (!detail::read_all(fd, &len, 4)) return RecvStatus::kClosed;
  len = ntohl(len);
  if (len > kMaxMessageBytes) throw WireError("declared message length exceeds limit");
  out.assign(len, '\0');
  if (len && !detail::read_all(fd, out.data(), len)) throw WireError("connection closed mid-message");
  return RecvStatus::kMessage;
}

/// Blocking client used by tests, the CLI and scripted collection.
class Client {
 public:
  Client(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
      throw WireError("cannot resolve " + host);
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    const int rc = fd_ < 0 ? -1 : ::connect(fd_, res->ai_addr, res->ai_addrlen);
    ::freeaddrinfo(res);
    if (rc < 0) {
      if (fd_ >= 0) ::close(fd_);
      throw WireError("cannot connect to " + host + ":" + std::to_string(port));
    }
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  ~Client() {
    if (fd_ >= 0) ::close(fd_);
  }
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  void send(const nlohmann::json& j) { send_message(fd_, j); }
  void send_text(const std::string& s) { send_raw(fd_, s); }

  nlohmann::json recv(int timeout_ms = 30000) {
    std::string s;
    switch (recv_raw(fd_, s, timeout_ms)) {
      case RecvStatus::kTimeout:
        throw WireError("timed out waiting for server");
      case RecvStatus::kClosed:
        throw WireError("server closed the connection");
      default:
        return nlohmann::json::parse(s);
    }
  }

  /// Sends and returns the first reply.
  nlohmann::json request(const nlohmann::json& j, int timeout_ms = 30000) {
    send(j);
    return recv(timeout_ms);
  }

  int fd() const { return fd_; }

 private:
  int fd_ = -1;
};

}  // namespace han::service
