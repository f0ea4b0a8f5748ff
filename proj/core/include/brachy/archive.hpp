#pragma once

#include "brachy/common.hpp"
#include "brachy/planning.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace brachy {

enum class ArtifactKind { VOLUME, LABELS, DEVICE, TRANSFORM, PLAN, DOSE, REPORT };

std::string_view to_string(ArtifactKind kind);
ArtifactKind parse_artifact_kind(std::string_view text);
/// File extension used on disk: svol for grids, json for everything else.
std::string_view artifact_extension(ArtifactKind kind);

struct ArtifactRef {
  std::string case_id;
  PlanStage stage = PlanStage::PRE;
  ArtifactKind kind = ArtifactKind::VOLUME;
  int version = 0;
  /// Lowercase hex SHA-256 of the stored bytes.
  std::string hash;
  /// Relative to the archive root.
  std::string filename;

  bool operator==(const ArtifactRef&) const = default;
};

struct ArtifactEntry {
  ArtifactRef ref;
  /// Position in the case's store order, from 1.
  std::uint64_t sequence = 0;
  std::string stored_at;
};

struct CaseRecord {
  std::string case_id;
  std::string created;
  std::string modified;
  std::vector<ArtifactEntry> artifacts;

  std::vector<ArtifactRef> refs(PlanStage stage) const;
};

struct FollowupOverlay {
  bool complete = false;
  std::optional<ArtifactRef> volume;        // latest POST volume
  std::optional<ArtifactRef> device;        // latest device model, any stage
  std::optional<ArtifactRef> registration;  // latest transform, any stage
  /// "VOLUME@POST", "DEVICE", "TRANSFORM" for each missing piece.
  std::vector<std::string> missing;
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);

/// Case ids are 1..64 characters of [A-Za-z0-9._-], not "." or "..".
bool valid_case_id(std::string_view id);

/// Filesystem store: cases/<case_id>/<stage>/<kind>/<version>_<hash8>.<ext>
/// plus cases/<case_id>/index.json. Writers take a per-case lock (in-process
/// mutex plus an advisory file lock); the index is replaced atomically, so
/// readers never lock.
class Archive {
 public:
  explicit Archive(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  /// Creates the case directory and an empty index. Throws Conflict when it exists.
  CaseRecord create_case(const std::string& case_id);
  bool has_case(const std::string& case_id) const;
  std::vector<std::string> case_ids() const;
  /// Throws NotFound for an unknown case.
  CaseRecord record(const std::string& case_id) const;

  /// Content-addressed and append-only. Bytes identical to an existing
  /// artifact of the same stage and kind return that artifact's ref;
  /// otherwise the next dense version is written.
  ArtifactRef store(const std::string& case_id, PlanStage stage, ArtifactKind kind,
                    std::span<const std::uint8_t> bytes);
  ArtifactRef store(const std::string& case_id, PlanStage stage, ArtifactKind kind, const std::string& text);

  /// Hash-verified read. NotFound for a missing file, Corruption on a digest mismatch.
  std::vector<std::uint8_t> fetch(const ArtifactRef& ref) const;
  std::optional<ArtifactRef> latest(const std::string& case_id, PlanStage stage, ArtifactKind kind) const;
  /// Most recently stored artifact of `kind` in any stage.
  std::optional<ArtifactRef> latest_any_stage(const std::string& case_id, ArtifactKind kind) const;
  std::vector<ArtifactRef> versions(const std::string& case_id, PlanStage stage, ArtifactKind kind) const;

  FollowupOverlay followup_overlay(const std::string& case_id) const;

  /// Small mutable per-case documents (workflow state) kept beside the index.
  void put_document(const std::string& case_id, const std::string& name, const std::string& text);
  std::optional<std::string> get_document(const std::string& case_id, const std::string& name) const;

  /// Runs `fn` holding the case's writer lock. Re-entrant calls from `fn`
  /// into store/put_document on the same case are allowed.
  template <typename Fn>
  auto with_case_lock(const std::string& case_id, Fn&& fn) {
    CaseLock lock(*this, case_id);
    return fn();
  }

 private:
  class CaseLock {
   public:
    CaseLock(const Archive& archive, const std::string& case_id);
    ~CaseLock();
    CaseLock(const CaseLock&) = delete;
    CaseLock& operator=(const CaseLock&) = delete;

   private:
    const Archive& archive_;
    std::string case_id_;
    std::recursive_mutex& mutex_;
  };

  std::filesystem::path case_dir(const std::string& case_id) const;
  CaseRecord read_index(const std::string& case_id) const;
  void write_index(const CaseRecord& rec) const;
  std::recursive_mutex& case_mutex(const std::string& case_id) const;

  std::filesystem::path root_;
  mutable std::mutex registry_mutex_;
  mutable std::map<std::string, std::unique_ptr<std::recursive_mutex>> case_mutexes_;
  // case id -> (lock file descriptor, nesting depth); touched only by the
  // thread holding that case's mutex
  mutable std::map<std::string, std::pair<int, int>> file_locks_;
};

}  // namespace brachy
