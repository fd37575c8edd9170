#pragma once

// TCP inference server and client. Each connection carries u32-length-prefixed
// protocol messages; responses come back in request order.

#include "bbt/inference.hpp"
#include "bbt/protocol.hpp"
#include "bbt/surrogate.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace bbt {

/// Largest frame either side accepts.
inline constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

struct ServerConfig {
  std::string listen_address = "127.0.0.1:7878";
  std::uint64_t model_seed = 1;
  std::optional<SubspaceContext> projection;  ///< enables SubspaceVec requests
  std::size_t max_batch = 1024;
  std::size_t max_connections = 64;
};

/// Pure request handler: decoded request in, response out.
proto::EvalResponse handle_request(const SurrogateModel& model, const SubspaceContext* projection,
                                   const proto::EvalRequest& request, std::size_t max_batch);

/// Decode, handle, encode. Malformed bytes yield a BadRequest response.
Bytes handle_request_bytes(const SurrogateModel& model, const SubspaceContext* projection,
                           std::span<const std::uint8_t> request, std::size_t max_batch);

struct HostPort {
  std::string host;
  std::uint16_t port = 0;
};
HostPort parse_host_port(const std::string& address);

class Server {
 public:
  Server(ServerConfig config, std::shared_ptr<const SurrogateModel> model);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts accepting. Throws std::runtime_error if the address is
  /// not bindable.
  void start();
  void stop();
  /// Port actually bound (useful with port 0).
  std::uint16_t port() const { return port_; }

  std::uint64_t requests_served() const { return served_.load(); }
  /// Request count of every connection seen so far, in accept order.
  std::vector<std::uint64_t> connection_counts() const;

 private:
  struct Connection;
  void accept_loop();
  void serve_connection(const std::shared_ptr<Connection>& conn);
  void reap_finished();

  ServerConfig config_;
  std::shared_ptr<const SurrogateModel> model_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> served_{0};
  std::thread acceptor_;
  mutable std::mutex mu_;
  std::vector<std::shared_ptr<Connection>> connections_;
};

/// Transport-level failure: connect refused, connection dropped, short read.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Server answered with a non-Ok status.
class RemoteError : public std::runtime_error {
 public:
  RemoteError(proto::Status status, const std::string& what) : std::runtime_error(what), status_(status) {}
  proto::Status status() const { return status_; }

 private:
  proto::Status status_;
};

/// One blocking client connection.
class ClientConnection {
 public:
  explicit ClientConnection(const std::string& address);
  ~ClientConnection();
  ClientConnection(const ClientConnection&) = delete;
  ClientConnection& operator=(const ClientConnection&) = delete;

  void send(std::span<const std::uint8_t> payload);
  Bytes receive();
  Bytes round_trip(std::span<const std::uint8_t> payload) {
    send(payload);
    return receive();
  }

 private:
  int fd_ = -1;
};

/// InferenceApi over the network. Thread-safe: concurrent callers each use
/// their own pooled connection. A transport failure is retried once on a
/// fresh connection; both attempts count as calls.
class RemoteInference final : public InferenceApi {
 public:
  /// SubspaceVec mode: only z is sent.
  RemoteInference(std::string address, std::uint8_t classes);
  /// FullPrompt mode: z is projected locally and the D-float prompt is sent.
  RemoteInference(std::string address, std::uint8_t classes, SubspaceContext local_projection);

  Logits query(std::span<const float> z, const EvalBatch& batch) override;
  std::uint64_t calls() const override { return calls_.load(); }
  proto::Mode mode() const { return mode_; }

  /// Sends an arbitrary request and returns the decoded response.
  proto::EvalResponse send(const proto::EvalRequest& request);

 private:
  std::unique_ptr<ClientConnection> acquire();
  void release(std::unique_ptr<ClientConnection> conn);
  Bytes exchange(const Bytes& payload);

  std::string address_;
  std::uint8_t classes_;
  proto::Mode mode_;
  std::optional<SubspaceContext> local_projection_;
  std::atomic<std::uint64_t> calls_{0};
  std::mutex pool_mu_;
  std::vector<std::unique_ptr<ClientConnection>> pool_;
};

}  // namespace bbt
