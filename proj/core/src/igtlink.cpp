#include "brachy/igtlink.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>

namespace brachy::igtl {

namespace {

constexpr std::uint64_t kPoly = 0x42F0E1EBA9EA3693ULL;

constexpr std::array<std::uint64_t, 256> make_crc_table() {
  std::array<std::uint64_t, 256> t{};
  for (std::uint64_t i = 0; i < 256; ++i) {
    std::uint64_t c = i << 56;
    for (int b = 0; b < 8; ++b) c = (c & (1ULL << 63)) ? (c << 1) ^ kPoly : c << 1;
    t[i] = c;
  }
  return t;
}

constexpr auto kCrcTable = make_crc_table();

template <typename T>
void put_be(std::vector<std::uint8_t>& out, T v) {
  using U = std::make_unsigned_t<T>;
  const auto u = static_cast<U>(v);
  for (int s = static_cast<int>(sizeof(T)) - 1; s >= 0; --s) out.push_back(static_cast<std::uint8_t>(u >> (8 * s)));
}

template <typename T>
T get_be(const std::uint8_t* p) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u = static_cast<U>((u << 8) | p[i]);
  return static_cast<T>(u);
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_be(out, std::bit_cast<std::uint32_t>(f)); }
float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_be<std::uint32_t>(p)); }

bool valid_name_chars(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return u != 0 && u < 0x80;
  });
}

void put_name(std::vector<std::uint8_t>& out, std::string_view name, std::size_t width, const char* field) {
  if (name.size() > width) {
    fail(ErrorCode::Encoding, std::string(field) + " '" + std::string(name) + "' exceeds " + std::to_string(width) +
                                  " bytes");
  }
  if (!valid_name_chars(name)) fail(ErrorCode::Encoding, std::string(field) + " must be 7-bit ASCII without NUL");
  out.insert(out.end(), name.begin(), name.end());
  out.insert(out.end(), width - name.size(), 0);
}

// Empty optional when bytes follow the first NUL or a byte is outside ASCII.
std::optional<std::string> get_name(const std::uint8_t* p, std::size_t width) {
  std::size_t n = 0;
  while (n < width && p[n] != 0) ++n;
  for (std::size_t i = n; i < width; ++i) {
    if (p[i] != 0) return std::nullopt;
  }
  std::string s(reinterpret_cast<const char*>(p), n);
  if (!valid_name_chars(s)) return std::nullopt;
  return s;
}

std::string_view type_name_of(const Body& body) {
  if (std::holds_alternative<TransformBody>(body)) return "TRANSFORM";
  if (std::holds_alternative<StatusBody>(body)) return "STATUS";
  if (std::holds_alternative<ImageBody>(body)) return "IMAGE";
  return {};
}

std::size_t image_voxel_count(const std::array<std::uint16_t, 3>& dims) {
  return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
}

void encode_image(std::vector<std::uint8_t>& out, const ImageBody& img) {
  for (auto d : img.dims) {
    if (d == 0) fail(ErrorCode::Encoding, "IMAGE dims must be positive");
  }
  if (img.voxels.size() != image_voxel_count(img.dims)) {
    fail(ErrorCode::Encoding, "IMAGE voxel count does not match dims");
  }
  for (auto d : img.dims) put_be(out, d);
  for (auto s : img.spacing) put_f32(out, s);
  out.push_back(static_cast<std::uint8_t>(img.dtype));
  out.push_back(0);
  const std::size_t elem = element_size(img.dtype);
  out.reserve(out.size() + img.voxels.size() * elem);
  for (float v : img.voxels) {
    switch (img.dtype) {
      case VoxelType::UInt8:
        if (!(v >= 0.0f && v <= 255.0f) || v != std::floor(v)) fail(ErrorCode::Encoding, "voxel outside uint8");
        out.push_back(static_cast<std::uint8_t>(v));
        break;
      case VoxelType::Int16:
        if (!(v >= -32768.0f && v <= 32767.0f) || v != std::floor(v)) fail(ErrorCode::Encoding, "voxel outside int16");
        put_be(out, static_cast<std::int16_t>(v));
        break;
      case VoxelType::Float32: put_f32(out, v); break;
    }
  }
}

// Typed body parse; empty string on success, reason otherwise.
std::string decode_typed(const std::string& type, std::span<const std::uint8_t> b, Body& body) {
  if (type == "TRANSFORM") {
    if (b.size() != 48) return "TRANSFORM body must be 48 bytes, got " + std::to_string(b.size());
    TransformBody t;
    for (std::size_t i = 0; i < 12; ++i) t.matrix[i] = get_f32(b.data() + 4 * i);
    body = t;
    return {};
  }
  if (type == "STATUS") {
    if (b.size() < kStatusFixedSize) return "STATUS body shorter than 30 bytes";
    StatusBody s;
    s.code = get_be<std::uint16_t>(b.data());
    s.subcode = get_be<std::int64_t>(b.data() + 2);
    const std::uint8_t* en = b.data() + 10;
    std::size_t n = 0;
    while (n < 20 && en[n] != 0) ++n;
    s.error_name.assign(reinterpret_cast<const char*>(en), n);
    s.message.assign(reinterpret_cast<const char*>(b.data() + kStatusFixedSize), b.size() - kStatusFixedSize);
    body = std::move(s);
    return {};
  }
  if (type == "IMAGE") {
    if (b.size() < kImageSubHeaderSize) return "IMAGE body shorter than its sub-header";
    ImageBody img;
    for (int a = 0; a < 3; ++a) img.dims[a] = get_be<std::uint16_t>(b.data() + 2 * a);
    for (int a = 0; a < 3; ++a) img.spacing[a] = get_f32(b.data() + 6 + 4 * a);
    const std::uint8_t dt = b[18];
    if (dt < 1 || dt > 3) return "IMAGE dtype " + std::to_string(dt) + " unknown";
    img.dtype = static_cast<VoxelType>(dt);
    for (auto d : img.dims) {
      if (d == 0) return "IMAGE dims must be positive";
    }
    const std::size_t count = image_voxel_count(img.dims);
    const std::size_t elem = element_size(img.dtype);
    if (b.size() - kImageSubHeaderSize != count * elem) return "IMAGE payload size does not match dims and dtype";
    img.voxels.resize(count);
    const std::uint8_t* p = b.data() + kImageSubHeaderSize;
    for (std::size_t i = 0; i < count; ++i, p += elem) {
      switch (img.dtype) {
        case VoxelType::UInt8: img.voxels[i] = *p; break;
        case VoxelType::Int16: img.voxels[i] = get_be<std::int16_t>(p); break;
        case VoxelType::Float32: img.voxels[i] = get_f32(p); break;
      }
    }
    body = std::move(img);
    return {};
  }
  body = UnknownBody{std::vector<std::uint8_t>(b.begin(), b.end())};
  return {};
}

}  // namespace

std::uint64_t max_body_from_env() {
  const char* v = std::getenv("BRACHY_IGTL_MAX_BODY");
  if (!v || !*v) return kDefaultMaxBody;
  char* end = nullptr;
  const unsigned long long n = std::strtoull(v, &end, 10);
  if (*end != '\0' || n == 0) return kDefaultMaxBody;
  return n;
}

std::uint64_t crc64(std::span<const std::uint8_t> bytes) {
  std::uint64_t crc = 0;
  for (std::uint8_t b : bytes) crc = kCrcTable[((crc >> 56) ^ b) & 0xFF] ^ (crc << 8);
  return crc;
}

std::array<std::uint8_t, kHeaderSize> encode_header(const Header& h) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize);
  put_be(out, h.version);
  put_name(out, h.type_name, kTypeNameSize, "type_name");
  put_name(out, h.device_name, kDeviceNameSize, "device_name");
  put_be(out, h.timestamp);
  put_be(out, h.body_size);
  put_be(out, h.body_crc);
  if (out.size() != kHeaderSize) fail(ErrorCode::Encoding, "header is not 58 bytes");
  std::array<std::uint8_t, kHeaderSize> a{};
  std::copy(out.begin(), out.end(), a.begin());
  return a;
}

Header decode_header(std::span<const std::uint8_t, kHeaderSize> bytes) {
  const std::uint8_t* p = bytes.data();
  Header h;
  h.version = get_be<std::uint16_t>(p);
  auto type = get_name(p + 2, kTypeNameSize);
  if (!type) fail(ErrorCode::Format, "type_name has bytes after NUL or non-ASCII bytes");
  auto device = get_name(p + 14, kDeviceNameSize);
  if (!device) fail(ErrorCode::Format, "device_name has bytes after NUL or non-ASCII bytes");
  h.type_name = std::move(*type);
  h.device_name = std::move(*device);
  h.timestamp = get_be<std::uint64_t>(p + 34);
  h.body_size = get_be<std::uint64_t>(p + 42);
  h.body_crc = get_be<std::uint64_t>(p + 50);
  return h;
}

TransformBody TransformBody::from(const RigidTransform& t) {
  TransformBody b;
  const auto rm = t.to_row_major();
  for (std::size_t i = 0; i < 12; ++i) b.matrix[i] = static_cast<float>(rm[i]);
  return b;
}

RigidTransform TransformBody::to_rigid() const {
  std::array<double, 12> v{};
  for (std::size_t i = 0; i < 12; ++i) v[i] = matrix[i];
  RigidTransform t = RigidTransform::from_row_major(v);
  // float32 rotations are orthonormal only to ~1e-7
  try {
    t.validate();
  } catch (const Error&) {
    t.rotation = nearest_rotation(t.rotation);
  }
  return t;
}

Message Message::transform(std::string device, const RigidTransform& t, std::uint64_t timestamp) {
  return {"TRANSFORM", std::move(device), timestamp, TransformBody::from(t)};
}

Message Message::status(std::string device, std::uint16_t code, std::string error_name, std::string text,
                        std::int64_t subcode) {
  return {"STATUS", std::move(device), 0, StatusBody{code, subcode, std::move(error_name), std::move(text)}};
}

Message Message::image(std::string device, ImageBody body, std::uint64_t timestamp) {
  return {"IMAGE", std::move(device), timestamp, std::move(body)};
}

std::vector<std::uint8_t> encode_body(const Message& msg) {
  std::vector<std::uint8_t> out;
  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, TransformBody>) {
          for (float f : b.matrix) put_f32(out, f);
        } else if constexpr (std::is_same_v<T, StatusBody>) {
          put_be(out, b.code);
          put_be(out, b.subcode);
          if (b.error_name.size() > 20) fail(ErrorCode::Encoding, "STATUS error_name exceeds 20 bytes");
          if (b.error_name.find('\0') != std::string::npos) fail(ErrorCode::Encoding, "STATUS error_name has NUL");
          out.insert(out.end(), b.error_name.begin(), b.error_name.end());
          out.insert(out.end(), 20 - b.error_name.size(), 0);
          out.insert(out.end(), b.message.begin(), b.message.end());
        } else if constexpr (std::is_same_v<T, ImageBody>) {
          encode_image(out, b);
        } else {
          out = b.raw;
        }
      },
      msg.body);
  return out;
}

std::vector<std::uint8_t> encode(const Message& msg) {
  const std::string_view typed = type_name_of(msg.body);
  if (!typed.empty() && !msg.type_name.empty() && msg.type_name != typed) {
    fail(ErrorCode::Encoding, "type_name '" + msg.type_name + "' does not match body " + std::string(typed));
  }
  if (typed.empty() && (msg.type_name == "TRANSFORM" || msg.type_name == "STATUS" || msg.type_name == "IMAGE")) {
    fail(ErrorCode::Encoding, "raw body cannot carry typed name " + msg.type_name);
  }
  const std::vector<std::uint8_t> body = encode_body(msg);
  Header h;
  h.type_name = typed.empty() ? msg.type_name : std::string(typed);
  h.device_name = msg.device_name;
  h.timestamp = msg.timestamp;
  h.body_size = body.size();
  h.body_crc = crc64(body);
  const auto head = encode_header(h);
  std::vector<std::uint8_t> out(kHeaderSize + body.size());
  std::copy(head.begin(), head.end(), out.begin());
  std::copy(body.begin(), body.end(), out.begin() + kHeaderSize);
  return out;
}

std::string_view to_string(DecodeStatus s) {
  switch (s) {
    case DecodeStatus::Ok: return "ok";
    case DecodeStatus::NeedMore: return "need_more";
    case DecodeStatus::CrcMismatch: return "crc_mismatch";
    case DecodeStatus::Oversize: return "oversize";
    case DecodeStatus::Malformed: return "malformed";
  }
  return "?";
}

DecodeResult decode(std::span<const std::uint8_t> bytes, std::uint64_t max_body) {
  DecodeResult r;
  if (bytes.size() < kHeaderSize) return r;
  const std::uint8_t* p = bytes.data();
  const auto body_size = get_be<std::uint64_t>(p + 42);
  if (body_size > max_body) {
    r.status = DecodeStatus::Oversize;
    r.error = "body_size " + std::to_string(body_size) + " exceeds limit " + std::to_string(max_body);
    return r;
  }
  if (bytes.size() - kHeaderSize < body_size) return r;
  const std::size_t total = kHeaderSize + static_cast<std::size_t>(body_size);
  r.consumed = total;
  const auto body = bytes.subspan(kHeaderSize, static_cast<std::size_t>(body_size));

  Header h;
  try {
    h = decode_header(bytes.first<kHeaderSize>());
  } catch (const Error& e) {
    r.status = DecodeStatus::Malformed;
    r.error = e.what();
    return r;
  }
  if (crc64(body) != h.body_crc) {
    r.status = DecodeStatus::CrcMismatch;
    r.error = "body CRC mismatch on " + h.type_name + " from '" + h.device_name + "'";
    return r;
  }
  Message m;
  m.type_name = h.type_name;
  m.device_name = h.device_name;
  m.timestamp = h.timestamp;
  if (std::string reason = decode_typed(h.type_name, body, m.body); !reason.empty()) {
    r.status = DecodeStatus::Malformed;
    r.error = std::move(reason);
    return r;
  }
  r.status = DecodeStatus::Ok;
  r.message = std::move(m);
  return r;
}

void StreamDecoder::feed(std::span<const std::uint8_t> bytes) {
  if (offset_ > 0 && offset_ >= buffer_.size() / 2) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
    offset_ = 0;
  }
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

DecodeResult StreamDecoder::next() {
  if (broken_) {
    DecodeResult r;
    r.status = DecodeStatus::Oversize;
    r.error = "stream rejected after oversize body";
    return r;
  }
  DecodeResult r = decode(std::span(buffer_).subspan(offset_), max_body_);
  if (r.status == DecodeStatus::Oversize) broken_ = true;
  offset_ += r.consumed;
  if (offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  return r;
}

std::pair<Message, Message> volume_messages(const ScalarVolume& vol, const std::string& device_name,
                                            std::uint64_t timestamp) {
  vol.validate();
  ImageBody img;
  for (int a = 0; a < 3; ++a) {
    if (vol.grid.dims[a] > 65535) {
      fail(ErrorCode::Range, "dimension " + std::to_string(vol.grid.dims[a]) + " does not fit IMAGE u16 dims");
    }
    img.dims[a] = static_cast<std::uint16_t>(vol.grid.dims[a]);
    img.spacing[a] = static_cast<float>(vol.grid.spacing[a]);
  }
  img.dtype = vol.dtype;
  img.voxels = vol.voxels;
  RigidTransform geom;
  geom.rotation = vol.grid.orientation;
  geom.translation = vol.grid.origin;
  return {Message::transform(device_name, geom, timestamp), Message::image(device_name, std::move(img), timestamp)};
}

std::optional<ScalarVolume> VolumeAssembler::accept(const Message& msg) {
  if (const auto* t = std::get_if<TransformBody>(&msg.body)) {
    geometry_[msg.device_name] = t->to_rigid();
    return std::nullopt;
  }
  const auto* img = std::get_if<ImageBody>(&msg.body);
  if (!img) return std::nullopt;
  ScalarVolume vol;
  for (int a = 0; a < 3; ++a) {
    vol.grid.dims[a] = img->dims[a];
    vol.grid.spacing[a] = img->spacing[a];
  }
  if (auto it = geometry_.find(msg.device_name); it != geometry_.end()) {
    vol.grid.orientation = it->second.rotation;
    vol.grid.origin = it->second.translation;
  }
  vol.dtype = img->dtype;
  vol.voxels = img->voxels;
  return vol;
}

}  // namespace brachy::igtl
