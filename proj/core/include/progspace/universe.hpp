#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "progspace/digest.hpp"
#include "progspace/evaluator.hpp"
#include "progspace/grammar.hpp"

namespace progspace {

using ProgramId = std::uint64_t;

struct UniverseBuildOptions {
  int max_ops = 6;
  EvalDomain domain;
  std::uint64_t seed = 0;
  std::size_t signature_points = 64;
  ValidityOptions validity;
  /// Ranks handed to a worker at a time.
  std::size_t chunk_size = 16384;
  std::function<void(const std::string&)> progress;
};

/// Counters gathered while building, per operator count.
struct UniverseStats {
  std::vector<std::uint64_t> raw;    // enumerated candidates
  std::vector<std::uint64_t> valid;  // survivors of the validity filter
  std::uint64_t screened_out = 0;
  std::uint64_t hopeless = 0;
  std::uint64_t exhausted = 0;

  std::uint64_t raw_total() const;
  std::uint64_t valid_total() const;
};

/// The deduplicated program universe. Ids are dense and follow canonical enumeration order.
class Universe {
 public:
  std::size_t size() const { return op_counts_.size(); }
  std::string_view source(ProgramId id) const;
  Ast ast(ProgramId id) const { return parse(source(id)); }
  int op_count(ProgramId id) const { return op_counts_.at(id); }
  const Digest128& digest(ProgramId id) const { return digests_.at(id); }

  void append(std::string_view source, int op_count, const Digest128& digest);
  void set_digest(ProgramId id, const Digest128& digest) { digests_.at(id) = digest; }
  void reserve(std::size_t programs, std::size_t source_bytes);

  UniverseStats stats;
  int max_ops = 0;
  EvalDomain domain;
  std::uint64_t seed = 0;
  std::size_t signature_points = 0;
  std::string grammar_hash;

 private:
  std::string pool_;
  std::vector<std::uint64_t> offsets_{0};
  std::vector<std::uint8_t> op_counts_;
  std::vector<Digest128> digests_;
};

/// Enumerate, filter by validity, sign. Throws ErrorKind::count_mismatch if the number of
/// enumerated candidates per operator count disagrees with count_trees.
Universe build_universe(const UniverseBuildOptions& opts);

/// Recomputes every digest on an n-point signature grid.
void resign_universe(Universe& u, std::size_t signature_points);

/// Observational-equivalence classes keyed by signature digest.
struct EquivalenceClassing {
  std::vector<Digest128> keys;
  std::vector<std::uint64_t> offsets{0};  // class c owns members[offsets[c], offsets[c+1])
  std::vector<ProgramId> members;         // ascending within each class
  std::vector<ProgramId> representatives;

  std::size_t class_count() const { return keys.size(); }
  std::span<const ProgramId> members_of(std::size_t c) const {
    return {members.data() + offsets[c], offsets[c + 1] - offsets[c]};
  }
  /// Class index for every program id.
  std::vector<std::uint32_t> class_index(std::size_t universe_size) const;
};

/// Classes are ordered by their smallest member id.
EquivalenceClassing partition_equivalence(const Universe& u);

/// Member with the smallest canonical source, shorter strings first and ties broken lexicographically.
ProgramId canonical_representative(const Universe& u, std::span<const ProgramId> ids);

struct CollisionAudit {
  std::size_t grid_points = 0;
  std::size_t classes_checked = 0;
  std::size_t violations = 0;  // classes where some member differs from the representative
  double rate() const { return classes_checked == 0 ? 0.0 : static_cast<double>(violations) / static_cast<double>(classes_checked); }
};

/// Midpoints of `points` equal cells of the domain.
std::vector<float> audit_grid(const EvalDomain& domain, std::size_t points);
/// Re-verifies sampled multi-member classes on the audit grid.
CollisionAudit audit_collisions(const Universe& u, const EquivalenceClassing& classes, std::size_t sample_classes,
                                std::size_t grid_points, std::uint64_t seed);

/// Universe table ("PMUN") plus its id -> record offset sidecar ("PMIX").
void save_universe(const Universe& u, const std::filesystem::path& table, const std::filesystem::path& index);
/// Loads the table; build metadata is restored separately from the manifest.
Universe load_universe(const std::filesystem::path& table);

void save_classes(const EquivalenceClassing& classes, const std::filesystem::path& path);
EquivalenceClassing load_classes(const std::filesystem::path& path);

}  // namespace progspace
