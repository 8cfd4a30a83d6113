#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "sav/core.hpp"

namespace sav {

enum class TokenPosition : std::uint8_t { first = 0, middle = 1, last = 2 };

std::string to_string(TokenPosition p);
TokenPosition token_position_from_string(const std::string& s);

struct StoreHeader {
  static constexpr char kMagic[4] = {'S', 'A', 'V', 'F'};
  static constexpr std::uint32_t kVersion = 1;
  // magic + six u32 fields + token position byte
  static constexpr std::size_t kEncodedSize = 4 + 6 * 4 + 1;

  std::uint32_t version = kVersion;
  Shape shape;
  std::uint32_t num_examples = 0;
  std::uint32_t num_labels = 0;
  TokenPosition token_position = TokenPosition::last;

  bool operator==(const StoreHeader&) const = default;
};

// Sanity caps applied before any size-driven allocation.
inline constexpr std::uint64_t kMaxExtent = std::uint64_t{1} << 24;
inline constexpr std::uint64_t kMaxPayloadBytes = std::uint64_t{1} << 40;

/// N labeled examples with one vector per head. Logical equality compares
/// float payloads bitwise.
struct ActivationStore {
  StoreHeader header;
  LabelVocab labels;
  std::vector<ExampleActivations> examples;

  const Shape& shape() const { return header.shape; }
  std::size_t size() const { return examples.size(); }

  // Throws ValidationError (or DataError for non-finite payloads).
  void validate() const;

  // Example counts per class index.
  std::vector<std::size_t> class_counts() const;

  friend bool operator==(const ActivationStore& a, const ActivationStore& b);
};

/// Builds a store with a header derived from its contents, then validates it.
ActivationStore make_store(const Shape& shape, LabelVocab labels,
                           std::vector<ExampleActivations> examples,
                           TokenPosition token_position = TokenPosition::last);

/// Same labels/shape/token position as `like`, new example list. Validated.
ActivationStore with_examples(const ActivationStore& like, std::vector<ExampleActivations> examples);

/// Serializes to the SAVF layout. Returns the number of bytes written.
std::uint64_t write_store(const ActivationStore& store, std::ostream& sink);
ActivationStore read_store(std::istream& source);

void write_store_file(const ActivationStore& store, const std::filesystem::path& path);
ActivationStore read_store_file(const std::filesystem::path& path);

/// FNV-1a 64 over the serialized bytes, as 16 lowercase hex digits.
std::string store_digest(const ActivationStore& store);

/// Human-readable sidecar mirroring the header.
nlohmann::json store_manifest(const ActivationStore& store);

struct StoreSplit {
  ActivationStore support;
  ActivationStore query;
};

/// Per class: sort ids ascending, Fisher-Yates shuffle the whole list with a
/// single generator (classes visited in index order), take the first
/// `shots_per_label` as support. Both partitions keep the source order.
/// Supports for smaller shot counts are prefixes of larger ones.
StoreSplit split_store(const ActivationStore& store, std::uint32_t shots_per_label,
                       std::uint64_t seed);

}  // namespace sav
