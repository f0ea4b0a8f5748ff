#pragma once

#include "brachy/registration.hpp"
#include "brachy/volume.hpp"

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace brachy::igtl {

inline constexpr std::size_t kHeaderSize = 58;
inline constexpr std::size_t kTypeNameSize = 12;
inline constexpr std::size_t kDeviceNameSize = 20;
inline constexpr std::size_t kStatusFixedSize = 30;
inline constexpr std::size_t kImageSubHeaderSize = 20;
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::uint16_t kDefaultPort = 18944;
inline constexpr std::uint64_t kDefaultMaxBody = 1ULL << 30;

/// BRACHY_IGTL_MAX_BODY when set to a positive integer, otherwise 1 GiB.
std::uint64_t max_body_from_env();

/// CRC-64/ECMA-182: polynomial 0x42F0E1EBA9EA3693, init 0, no reflection, no final xor.
std::uint64_t crc64(std::span<const std::uint8_t> bytes);

struct Header {
  std::uint16_t version = kVersion;
  std::string type_name;
  std::string device_name;
  std::uint64_t timestamp = 0;
  std::uint64_t body_size = 0;
  std::uint64_t body_crc = 0;

  bool operator==(const Header&) const = default;
};

std::array<std::uint8_t, kHeaderSize> encode_header(const Header& h);
/// Reads the fixed layout; name fields are returned up to their first NUL.
/// Throws ErrorCode::Format when a name has bytes after its first NUL or a
/// byte outside 7-bit ASCII.
Header decode_header(std::span<const std::uint8_t, kHeaderSize> bytes);

/// Row-major 3x4 [R | t].
struct TransformBody {
  std::array<float, 12> matrix{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};

  static TransformBody from(const RigidTransform& t);
  RigidTransform to_rigid() const;
  bool operator==(const TransformBody&) const = default;
};

struct StatusBody {
  std::uint16_t code = 1;
  std::int64_t subcode = 0;
  std::string error_name;
  std::string message;

  bool operator==(const StatusBody&) const = default;
};

/// Simplified IMAGE body: dims (3 x u16), spacing (3 x f32), dtype (u8), one
/// pad byte, then the big-endian voxel payload in x-fastest order.
struct ImageBody {
  std::array<std::uint16_t, 3> dims{1, 1, 1};
  std::array<float, 3> spacing{1, 1, 1};
  VoxelType dtype = VoxelType::Float32;
  std::vector<float> voxels;

  bool operator==(const ImageBody&) const = default;
};

struct UnknownBody {
  std::vector<std::uint8_t> raw;

  bool operator==(const UnknownBody&) const = default;
};

using Body = std::variant<TransformBody, StatusBody, ImageBody, UnknownBody>;

struct Message {
  /// Taken from the body variant for typed bodies; kept verbatim for unknown ones.
  std::string type_name;
  std::string device_name;
  std::uint64_t timestamp = 0;
  Body body;

  bool is_unknown() const { return std::holds_alternative<UnknownBody>(body); }
  bool operator==(const Message&) const = default;

  static Message transform(std::string device, const RigidTransform& t, std::uint64_t timestamp = 0);
  static Message status(std::string device, std::uint16_t code, std::string error_name, std::string text,
                        std::int64_t subcode = 0);
  static Message image(std::string device, ImageBody body, std::uint64_t timestamp = 0);
};

/// Header (body size and CRC computed here) followed by the body. Throws
/// ErrorCode::Encoding when a field does not fit its wire width.
std::vector<std::uint8_t> encode(const Message& msg);
std::vector<std::uint8_t> encode_body(const Message& msg);

enum class DecodeStatus {
  Ok,           // message decoded; unknown types arrive as UnknownBody
  NeedMore,     // incomplete header or body; nothing consumed
  CrcMismatch,  // body consumed, stream still framed
  Oversize,     // body_size above the limit; nothing consumed, stream unusable
  Malformed,    // header names or typed body invalid; message consumed
};

std::string_view to_string(DecodeStatus s);

struct DecodeResult {
  DecodeStatus status = DecodeStatus::NeedMore;
  std::size_t consumed = 0;
  std::optional<Message> message;
  std::string error;
};

/// Decodes at most one message from the front of `bytes`. Never throws and
/// never reads past the declared body.
DecodeResult decode(std::span<const std::uint8_t> bytes, std::uint64_t max_body = kDefaultMaxBody);

/// Accumulates a byte stream and yields decode results in order.
class StreamDecoder {
 public:
  explicit StreamDecoder(std::uint64_t max_body = kDefaultMaxBody) : max_body_(max_body) {}

  void feed(std::span<const std::uint8_t> bytes);
  /// Next result; NeedMore when the buffer holds no complete message. After
  /// Oversize the decoder is broken and keeps returning Oversize.
  DecodeResult next();
  bool broken() const { return broken_; }
  std::size_t buffered() const { return buffer_.size() - offset_; }

 private:
  std::uint64_t max_body_;
  std::vector<std::uint8_t> buffer_;
  std::size_t offset_ = 0;
  bool broken_ = false;
};

/// Volume geometry travels as a TRANSFORM (orientation | origin) with the
/// same device name, sent before the IMAGE. Values are carried as float32.
std::pair<Message, Message> volume_messages(const ScalarVolume& vol, const std::string& device_name,
                                            std::uint64_t timestamp = 0);

/// Pairs geometry TRANSFORMs with the next IMAGE of the same device.
class VolumeAssembler {
 public:
  /// Returns a volume when `msg` is an IMAGE; other messages only update state.
  std::optional<ScalarVolume> accept(const Message& msg);

 private:
  std::map<std::string, RigidTransform> geometry_;
};

// ---------------------------------------------------------------------------
// TCP

class Connection {
 public:
  Connection() = default;
  explicit Connection(int fd, std::uint64_t max_body = max_body_from_env()) : fd_(fd), decoder_(max_body) {}
  Connection(Connection&& other) noexcept;
  Connection& operator=(Connection&& other) noexcept;
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;
  ~Connection();

  static Connection connect(const std::string& host, std::uint16_t port, int timeout_ms = 5000);

  bool is_open() const { return fd_ >= 0; }
  void send(const Message& msg);
  void send_bytes(std::span<const std::uint8_t> bytes);
  /// Waits for the next complete decode result. Returns nullopt on orderly
  /// close with no complete message pending, or on timeout (negative = wait forever).
  std::optional<DecodeResult> receive(int timeout_ms = -1);
  void close();

 private:
  int fd_ = -1;
  StreamDecoder decoder_;
};

/// Sends the geometry TRANSFORM then the IMAGE. Throws ErrorCode::Range when
/// a dimension exceeds 65535.
void push_volume(Connection& conn, const ScalarVolume& vol, const std::string& device_name);

struct Peer {
  std::uint64_t id = 0;
  std::string address;
};

struct ServerOptions {
  std::string bind_address = "127.0.0.1";
  std::uint16_t port = kDefaultPort;  // 0 picks an ephemeral port
  std::uint64_t max_body = max_body_from_env();
};

/// Thread-per-connection listener. The handler runs on the connection's
/// thread, so messages from one peer arrive in order.
class Server {
 public:
  using Handler = std::function<void(const Peer&, const Message&)>;
  using ErrorHandler = std::function<void(const Peer&, const DecodeResult&)>;

  Server(ServerOptions options, Handler handler, ErrorHandler on_error = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts accepting. Throws ErrorCode::Io on bind failure.
  void start();
  /// Stops accepting, lets every connection deliver what it has already
  /// received, then joins all threads.
  void stop();
  std::uint16_t port() const { return port_; }
  std::size_t active_connections() const;
  std::uint64_t connections_closed_on_error() const { return closed_on_error_; }

 private:
  struct Worker {
    std::thread thread;
    std::atomic<bool> done{false};
  };
  void accept_loop();
  void serve_connection(int fd, Peer peer, Worker* self);
  void reap();

  ServerOptions options_;
  Handler handler_;
  ErrorHandler on_error_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> next_id_{1};
  std::atomic<std::uint64_t> closed_on_error_{0};
  std::thread acceptor_;
  mutable std::mutex workers_mutex_;
  std::list<Worker> workers_;
};

}  // namespace brachy::igtl
