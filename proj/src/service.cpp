#include "bbt/service.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace bbt {

namespace {

proto::EvalResponse error_response(proto::Status status) {
  proto::EvalResponse r;
  r.status = status;
  return r;
}

bool read_exact(int fd, std::uint8_t* out, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, out + got, n - got, 0);
    if (r == 0) return false;
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

bool write_all(int fd, const std::uint8_t* data, std::size_t n) {
  std::size_t sent = 0;
  while (sent < n) {
    const ssize_t r = ::send(fd, data + sent, n - sent, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(r);
  }
  return true;
}

/// Reads one length-prefixed frame. nullopt on clean EOF or a broken stream.
std::optional<Bytes> read_frame(int fd) {
  std::uint8_t header[4];
  if (!read_exact(fd, header, sizeof header)) return std::nullopt;
  ByteReader r(header);
  const auto len = r.get<std::uint32_t>();
  if (len > kMaxFrameBytes) return std::nullopt;
  Bytes payload(len);
  if (len != 0 && !read_exact(fd, payload.data(), len)) return std::nullopt;
  return payload;
}

bool write_frame(int fd, std::span<const std::uint8_t> payload) {
  const Bytes framed = proto::frame(payload);
  return write_all(fd, framed.data(), framed.size());
}

}  // namespace

HostPort parse_host_port(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon + 1 == address.size()) {
    throw std::invalid_argument("address '" + address + "' is not host:port");
  }
  HostPort hp;
  hp.host = address.substr(0, colon);
  if (hp.host.empty()) hp.host = "0.0.0.0";
  const std::string port = address.substr(colon + 1);
  std::size_t used = 0;
  unsigned long value = 0;
  try {
    value = std::stoul(port, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != port.size() || value > 65535) throw std::invalid_argument("bad port in '" + address + "'");
  hp.port = static_cast<std::uint16_t>(value);
  return hp;
}

proto::EvalResponse handle_request(const SurrogateModel& model, const SubspaceContext* projection,
                                   const proto::EvalRequest& request, std::size_t max_batch) {
  using proto::Status;
  const EvalBatch& batch = request.batch;
  if (batch.batch == 0 || batch.batch > max_batch) return error_response(Status::BadRequest);
  if (request.classes != model.classes()) return error_response(Status::BadRequest);

  std::vector<float> prompt;
  try {
    if (request.mode == proto::Mode::SubspaceVec) {
      if (projection == nullptr) return error_response(Status::BadRequest);
      if (request.prompt.size() != projection->projection->sub_dim()) return error_response(Status::BadRequest);
      prompt = projection->prompt_for(request.prompt);
    } else {
      const std::size_t plen = request.prompt.size();
      if (projection != nullptr ? plen != projection->projection->full_dim()
                                : plen == 0 || plen % model.embed_dim() != 0) {
        return error_response(Status::BadRequest);
      }
      prompt = request.prompt;
    }
  } catch (const std::invalid_argument&) {
    return error_response(Status::BadRequest);
  }

  try {
    proto::EvalResponse response;
    response.logits = model.forward(prompt, batch);
    return response;
  } catch (const ModelInputError&) {
    return error_response(Status::ModelError);
  } catch (const std::invalid_argument&) {
    return error_response(Status::BadRequest);
  }
}

Bytes handle_request_bytes(const SurrogateModel& model, const SubspaceContext* projection,
                           std::span<const std::uint8_t> request, std::size_t max_batch) {
  proto::EvalResponse response;
  try {
    response = handle_request(model, projection, proto::decode_request(request), max_batch);
  } catch (const proto::DecodeError&) {
    response = error_response(proto::Status::BadRequest);
  }
  return proto::encode_response(response);
}

struct Server::Connection {
  int fd = -1;
  std::thread worker;
  std::atomic<bool> done{false};
  std::atomic<std::uint64_t> requests{0};
};

Server::Server(ServerConfig config, std::shared_ptr<const SurrogateModel> model)
    : config_(std::move(config)), model_(std::move(model)) {
  if (!model_) throw std::invalid_argument("server needs a model");
  if (config_.max_batch == 0 || config_.max_connections == 0) {
    throw std::invalid_argument("server limits must be positive");
  }
}

Server::~Server() { stop(); }

void Server::start() {
  const HostPort hp = parse_host_port(config_.listen_address);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(hp.port);
  if (const int rc = ::getaddrinfo(hp.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw std::runtime_error("cannot resolve " + config_.listen_address + ": " + ::gai_strerror(rc));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);

  listen_fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (listen_fd_ < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(listen_fd_, res->ai_addr, res->ai_addrlen) != 0 || ::listen(listen_fd_, 128) != 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::runtime_error("cannot bind " + config_.listen_address + ": " + err);
  }
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Server::accept_loop() {
  while (!stopping_) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, 100);
    if (ready <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    reap_finished();
    std::lock_guard lock(mu_);
    std::size_t live = 0;
    for (const auto& c : connections_) live += c->done ? 0 : 1;
    if (live >= config_.max_connections || stopping_) {
      ::close(fd);
      continue;
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    auto conn = std::make_shared<Connection>();
    conn->fd = fd;
    connections_.push_back(conn);
    conn->worker = std::thread([this, conn] { serve_connection(conn); });
  }
}

void Server::serve_connection(const std::shared_ptr<Connection>& conn) {
  const SubspaceContext* projection = config_.projection ? &*config_.projection : nullptr;
  while (!stopping_) {
    auto request = read_frame(conn->fd);
    if (!request) break;
    const Bytes response = handle_request_bytes(*model_, projection, *request, config_.max_batch);
    // Counted before the reply leaves so a client never observes a stale count.
    conn->requests.fetch_add(1);
    served_.fetch_add(1);
    if (!write_frame(conn->fd, response)) break;
  }
  ::shutdown(conn->fd, SHUT_RDWR);
  conn->done = true;
}

void Server::reap_finished() {
  std::lock_guard lock(mu_);
  for (auto& c : connections_) {
    if (c->done && c->worker.joinable()) {
      c->worker.join();
      ::close(c->fd);
      c->fd = -1;
    }
  }
}

void Server::stop() {
  if (stopping_.exchange(true)) return;
  if (acceptor_.joinable()) acceptor_.join();
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  std::lock_guard lock(mu_);
  for (auto& c : connections_) {
    if (c->fd >= 0) ::shutdown(c->fd, SHUT_RDWR);
  }
  for (auto& c : connections_) {
    if (c->worker.joinable()) c->worker.join();
    if (c->fd >= 0) {
      ::close(c->fd);
      c->fd = -1;
    }
  }
}

std::vector<std::uint64_t> Server::connection_counts() const {
  std::lock_guard lock(mu_);
  std::vector<std::uint64_t> out;
  out.reserve(connections_.size());
  for (const auto& c : connections_) out.push_back(c->requests.load());
  return out;
}

// ---------------------------------------------------------------------------
// Client

ClientConnection::ClientConnection(const std::string& address) {
  const HostPort hp = parse_host_port(address);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(hp.port);
  if (const int rc = ::getaddrinfo(hp.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw TransportError("cannot resolve " + address + ": " + ::gai_strerror(rc));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
  fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd_ < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
  if (::connect(fd_, res->ai_addr, res->ai_addrlen) != 0) {
    const std::string err = std::strerror(errno);
    ::close(fd_);
    fd_ = -1;
    throw TransportError("cannot connect to " + address + ": " + err);
  }
  const int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

ClientConnection::~ClientConnection() {
  if (fd_ >= 0) ::close(fd_);
}

void ClientConnection::send(std::span<const std::uint8_t> payload) {
  if (!write_frame(fd_, payload)) throw TransportError("connection closed while sending");
}

Bytes ClientConnection::receive() {
  auto frame = read_frame(fd_);
  if (!frame) throw TransportError("connection closed while receiving");
  return std::move(*frame);
}

RemoteInference::RemoteInference(std::string address, std::uint8_t classes)
    : address_(std::move(address)), classes_(classes), mode_(proto::Mode::SubspaceVec) {}

RemoteInference::RemoteInference(std::string address, std::uint8_t classes, SubspaceContext local_projection)
    : address_(std::move(address)),
      classes_(classes),
      mode_(proto::Mode::FullPrompt),
      local_projection_(std::move(local_projection)) {}

std::unique_ptr<ClientConnection> RemoteInference::acquire() {
  {
    std::lock_guard lock(pool_mu_);
    if (!pool_.empty()) {
      auto conn = std::move(pool_.back());
      pool_.pop_back();
      return conn;
    }
  }
  return std::make_unique<ClientConnection>(address_);
}

void RemoteInference::release(std::unique_ptr<ClientConnection> conn) {
  std::lock_guard lock(pool_mu_);
  pool_.push_back(std::move(conn));
}

Bytes RemoteInference::exchange(const Bytes& payload) {
  for (int attempt = 0;; ++attempt) {
    calls_.fetch_add(1);
    try {
      auto conn = acquire();
      Bytes reply = conn->round_trip(payload);
      release(std::move(conn));
      return reply;
    } catch (const TransportError&) {
      if (attempt >= 1) throw;
    }
  }
}

proto::EvalResponse RemoteInference::send(const proto::EvalRequest& request) {
  const Bytes reply = exchange(proto::encode_request(request));
  try {
    return proto::decode_response(reply);
  } catch (const proto::DecodeError& e) {
    throw TransportError(std::string("malformed response: ") + e.what());
  }
}

Logits RemoteInference::query(std::span<const float> z, const EvalBatch& batch) {
  proto::EvalRequest request;
  request.mode = mode_;
  request.classes = classes_;
  request.prompt = mode_ == proto::Mode::SubspaceVec ? std::vector<float>(z.begin(), z.end())
                                                     : local_projection_->prompt_for(z);
  request.batch = batch;
  request.batch.labels.clear();
  proto::EvalResponse response = send(request);
  if (response.status != proto::Status::Ok) {
    throw RemoteError(response.status, response.status == proto::Status::BadRequest
                                           ? "service rejected the request (BadRequest)"
                                           : "service failed to evaluate the request (ModelError)");
  }
  if (response.logits.rows != batch.batch || response.logits.cols != classes_) {
    throw TransportError("response shape does not match the request");
  }
  return std::move(response.logits);
}

}  // namespace bbt
