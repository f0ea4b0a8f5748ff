#include "brachy/archive.hpp"

#include "brachy/file_io.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cstdio>

namespace brachy {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kIndexName = "index.json";
constexpr const char* kLockName = ".lock";

ArtifactEntry entry_from_json(const json& j) {
  ArtifactEntry e;
  e.ref.case_id = j.at("case_id").get<std::string>();
  e.ref.stage = parse_plan_stage(j.at("stage").get<std::string>());
  e.ref.kind = parse_artifact_kind(j.at("kind").get<std::string>());
  e.ref.version = j.at("version").get<int>();
  e.ref.hash = j.at("hash").get<std::string>();
  e.ref.filename = j.at("filename").get<std::string>();
  e.sequence = j.at("sequence").get<std::uint64_t>();
  e.stored_at = j.at("stored_at").get<std::string>();
  return e;
}

json entry_to_json(const ArtifactEntry& e) {
  return {{"sequence", e.sequence},
          {"case_id", e.ref.case_id},
          {"stage", to_string(e.ref.stage)},
          {"kind", to_string(e.ref.kind)},
          {"version", e.ref.version},
          {"hash", e.ref.hash},
          {"filename", e.ref.filename},
          {"stored_at", e.stored_at}};
}

void require_case_id(const std::string& id) {
  if (!valid_case_id(id)) fail(ErrorCode::InvalidArgument, "invalid case id '" + id + "'");
}

bool safe_relative(const fs::path& p) {
  if (p.empty() || p.is_absolute()) return false;
  return std::none_of(p.begin(), p.end(), [](const fs::path& part) { return part == ".."; });
}

}  // namespace

std::string_view to_string(ArtifactKind kind) {
  switch (kind) {
    case ArtifactKind::VOLUME: return "VOLUME";
    case ArtifactKind::LABELS: return "LABELS";
    case ArtifactKind::DEVICE: return "DEVICE";
    case ArtifactKind::TRANSFORM: return "TRANSFORM";
    case ArtifactKind::PLAN: return "PLAN";
    case ArtifactKind::DOSE: return "DOSE";
    case ArtifactKind::REPORT: return "REPORT";
  }
  return "?";
}

ArtifactKind parse_artifact_kind(std::string_view text) {
  for (auto k : {ArtifactKind::VOLUME, ArtifactKind::LABELS, ArtifactKind::DEVICE, ArtifactKind::TRANSFORM,
                 ArtifactKind::PLAN, ArtifactKind::DOSE, ArtifactKind::REPORT}) {
    if (to_string(k) == text) return k;
  }
  fail(ErrorCode::InvalidArgument, "unknown artifact kind '" + std::string(text) + "'");
}

std::string_view artifact_extension(ArtifactKind kind) {
  switch (kind) {
    case ArtifactKind::VOLUME:
    case ArtifactKind::LABELS:
    case ArtifactKind::DOSE: return "svol";
    default: return "json";
  }
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::Io, "SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

bool valid_case_id(std::string_view id) {
  if (id.empty() || id.size() > 64 || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' || c == '_' ||
           c == '-';
  });
}

std::vector<ArtifactRef> CaseRecord::refs(PlanStage stage) const {
  std::vector<ArtifactRef> out;
  for (const auto& e : artifacts) {
    if (e.ref.stage == stage) out.push_back(e.ref);
  }
  return out;
}

Archive::Archive(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_ / "cases", ec);
  if (ec) fail(ErrorCode::Io, "cannot create archive at " + root_.string() + ": " + ec.message());
}

fs::path Archive::case_dir(const std::string& case_id) const { return root_ / "cases" / case_id; }

std::recursive_mutex& Archive::case_mutex(const std::string& case_id) const {
  std::lock_guard lock(registry_mutex_);
  auto& m = case_mutexes_[case_id];
  if (!m) m = std::make_unique<std::recursive_mutex>();
  return *m;
}

Archive::CaseLock::CaseLock(const Archive& archive, const std::string& case_id)
    : archive_(archive), case_id_(case_id), mutex_(archive.case_mutex(case_id)) {
  mutex_.lock();
  int fd = -1;
  int depth = 0;
  {
    std::lock_guard lock(archive_.registry_mutex_);
    auto it = archive_.file_locks_.find(case_id_);
    if (it != archive_.file_locks_.end()) {
      ++it->second.second;
      return;
    }
  }
  const fs::path dir = archive_.case_dir(case_id_);
  if (fs::is_directory(dir)) {
    fd = ::open((dir / kLockName).c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0 || ::flock(fd, LOCK_EX) != 0) {
      if (fd >= 0) ::close(fd);
      mutex_.unlock();
      fail(ErrorCode::Io, "cannot lock case " + case_id_);
    }
  }
  depth = 1;
  std::lock_guard lock(archive_.registry_mutex_);
  archive_.file_locks_[case_id_] = {fd, depth};
}

Archive::CaseLock::~CaseLock() {
  {
    std::lock_guard lock(archive_.registry_mutex_);
    auto it = archive_.file_locks_.find(case_id_);
    if (it != archive_.file_locks_.end() && --it->second.second == 0) {
      if (it->second.first >= 0) {
        ::flock(it->second.first, LOCK_UN);
        ::close(it->second.first);
      }
      archive_.file_locks_.erase(it);
    }
  }
  mutex_.unlock();
}

CaseRecord Archive::read_index(const std::string& case_id) const {
  const fs::path path = case_dir(case_id) / kIndexName;
  if (!fs::exists(path)) fail(ErrorCode::NotFound, "no case '" + case_id + "'");
  try {
    const json j = json::parse(read_text_file(path));
    CaseRecord rec;
    rec.case_id = j.at("case_id").get<std::string>();
    rec.created = j.at("created").get<std::string>();
    rec.modified = j.at("modified").get<std::string>();
    for (const auto& a : j.at("artifacts")) rec.artifacts.push_back(entry_from_json(a));
    return rec;
  } catch (const json::exception& e) {
    fail(ErrorCode::Corruption, "index of case '" + case_id + "' unreadable: " + e.what());
  }
}

void Archive::write_index(const CaseRecord& rec) const {
  json arts = json::array();
  for (const auto& e : rec.artifacts) arts.push_back(entry_to_json(e));
  const json j = {{"schema", 1},
                  {"case_id", rec.case_id},
                  {"created", rec.created},
                  {"modified", rec.modified},
                  {"artifacts", std::move(arts)}};
  write_file_atomic(case_dir(rec.case_id) / kIndexName, j.dump(2) + "\n");
}

CaseRecord Archive::create_case(const std::string& case_id) {
  require_case_id(case_id);
  return with_case_lock(case_id, [&] {
    const fs::path dir = case_dir(case_id);
    if (fs::exists(dir / kIndexName)) fail(ErrorCode::Conflict, "case '" + case_id + "' already exists");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
    CaseRecord rec;
    rec.case_id = case_id;
    rec.created = utc_timestamp();
    rec.modified = rec.created;
    write_index(rec);
    return rec;
  });
}

bool Archive::has_case(const std::string& case_id) const {
  return valid_case_id(case_id) && fs::exists(case_dir(case_id) / kIndexName);
}

std::vector<std::string> Archive::case_ids() const {
  std::vector<std::string> out;
  for (const auto& d : fs::directory_iterator(root_ / "cases")) {
    const std::string id = d.path().filename().string();
    if (has_case(id)) out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

CaseRecord Archive::record(const std::string& case_id) const {
  require_case_id(case_id);
  return read_index(case_id);
}

ArtifactRef Archive::store(const std::string& case_id, PlanStage stage, ArtifactKind kind,
                           std::span<const std::uint8_t> bytes) {
  require_case_id(case_id);
  return with_case_lock(case_id, [&] {
    CaseRecord rec = read_index(case_id);
    const std::string hash = sha256_hex(bytes);
    int version = 0;
    const ArtifactEntry* same_bytes = nullptr;
    for (const auto& e : rec.artifacts) {
      if (e.ref.hash == hash && !same_bytes) same_bytes = &e;
      if (e.ref.stage != stage || e.ref.kind != kind) continue;
      if (e.ref.hash == hash) return e.ref;
      version = std::max(version, e.ref.version);
    }

    ArtifactEntry entry;
    entry.ref.case_id = case_id;
    entry.ref.stage = stage;
    entry.ref.kind = kind;
    entry.ref.version = version + 1;
    entry.ref.hash = hash;
    const fs::path rel = fs::path("cases") / case_id / std::string(to_string(stage)) / std::string(to_string(kind)) /
                         (std::to_string(entry.ref.version) + "_" + hash.substr(0, 8) + "." +
                          std::string(artifact_extension(kind)));
    entry.ref.filename = rel.generic_string();
    const fs::path target = root_ / rel;
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
    if (ec) fail(ErrorCode::Io, "cannot create " + target.parent_path().string() + ": " + ec.message());

    // one physical copy per content hash within the case
    bool linked = false;
    if (same_bytes) {
      fs::remove(target, ec);
      fs::create_hard_link(root_ / same_bytes->ref.filename, target, ec);
      linked = !ec;
    }
    if (!linked) write_file_atomic(target, bytes);

    entry.sequence = rec.artifacts.empty() ? 1 : rec.artifacts.back().sequence + 1;
    entry.stored_at = utc_timestamp();
    rec.modified = entry.stored_at;
    rec.artifacts.push_back(entry);
    write_index(rec);
    return entry.ref;
  });
}

ArtifactRef Archive::store(const std::string& case_id, PlanStage stage, ArtifactKind kind, const std::string& text) {
  return store(case_id, stage, kind,
               std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> Archive::fetch(const ArtifactRef& ref) const {
  const fs::path rel(ref.filename);
  if (!safe_relative(rel)) fail(ErrorCode::InvalidArgument, "artifact path '" + ref.filename + "' escapes the archive");
  const fs::path path = root_ / rel;
  if (!fs::exists(path)) fail(ErrorCode::NotFound, "artifact " + ref.filename + " missing");
  std::vector<std::uint8_t> bytes = read_file(path);
  if (sha256_hex(bytes) != ref.hash) {
    fail(ErrorCode::Corruption, "artifact " + ref.filename + " does not match its SHA-256");
  }
  return bytes;
}

std::vector<ArtifactRef> Archive::versions(const std::string& case_id, PlanStage stage, ArtifactKind kind) const {
  std::vector<ArtifactRef> out;
  for (const auto& e : record(case_id).artifacts) {
    if (e.ref.stage == stage && e.ref.kind == kind) out.push_back(e.ref);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.version < b.version; });
  return out;
}

std::optional<ArtifactRef> Archive::latest(const std::string& case_id, PlanStage stage, ArtifactKind kind) const {
  auto v = versions(case_id, stage, kind);
  if (v.empty()) return std::nullopt;
  return v.back();
}

std::optional<ArtifactRef> Archive::latest_any_stage(const std::string& case_id, ArtifactKind kind) const {
  const CaseRecord rec = record(case_id);
  for (auto it = rec.artifacts.rbegin(); it != rec.artifacts.rend(); ++it) {
    if (it->ref.kind == kind) return it->ref;
  }
  return std::nullopt;
}

FollowupOverlay Archive::followup_overlay(const std::string& case_id) const {
  FollowupOverlay o;
  o.volume = latest(case_id, PlanStage::POST, ArtifactKind::VOLUME);
  o.device = latest_any_stage(case_id, ArtifactKind::DEVICE);
  o.registration = latest_any_stage(case_id, ArtifactKind::TRANSFORM);
  if (!o.volume) o.missing.push_back("VOLUME@POST");
  if (!o.device) o.missing.push_back("DEVICE");
  if (!o.registration) o.missing.push_back("TRANSFORM");
  o.complete = o.missing.empty();
  return o;
}

void Archive::put_document(const std::string& case_id, const std::string& name, const std::string& text) {
  require_case_id(case_id);
  if (!valid_case_id(name) || name == kIndexName) fail(ErrorCode::InvalidArgument, "invalid document name '" + name + "'");
  with_case_lock(case_id, [&] {
    if (!has_case(case_id)) fail(ErrorCode::NotFound, "no case '" + case_id + "'");
    write_file_atomic(case_dir(case_id) / name, text);
    return 0;
  });
}

std::optional<std::string> Archive::get_document(const std::string& case_id, const std::string& name) const {
  require_case_id(case_id);
  if (!valid_case_id(name)) fail(ErrorCode::InvalidArgument, "invalid document name '" + name + "'");
  const fs::path path = case_dir(case_id) / name;
  if (!fs::exists(path)) return std::nullopt;
  return read_text_file(path);
}

}  // namespace brachy
