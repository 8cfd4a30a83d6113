#include "sav/store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "sav/rng.hpp"

namespace sav {

std::string to_string(TokenPosition p) {
  switch (p) {
    case TokenPosition::first: return "first";
    case TokenPosition::middle: return "middle";
    case TokenPosition::last: return "last";
  }
  return "unknown";
}

TokenPosition token_position_from_string(const std::string& s) {
  if (s == "first") return TokenPosition::first;
  if (s == "middle") return TokenPosition::middle;
  if (s == "last") return TokenPosition::last;
  throw ConfigError("unknown token position '" + s + "'");
}

namespace {

void check_extent(const char* what, std::uint64_t v) {
  if (v < 1) throw ValidationError(std::string(what) + " must be >= 1");
  if (v > kMaxExtent) {
    throw ValidationError(std::string(what) + " = " + std::to_string(v) + " exceeds 2^24");
  }
}

void check_header(const StoreHeader& h) {
  check_extent("layers", h.shape.layers);
  check_extent("heads", h.shape.heads);
  check_extent("head_dim", h.shape.head_dim);
  check_extent("examples", h.num_examples);
  if (h.num_labels < 2) throw ValidationError("label count must be >= 2");
  if (h.num_labels > kMaxExtent) throw ValidationError("label count exceeds 2^24");
  if (static_cast<std::uint8_t>(h.token_position) > 2) {
    throw ValidationError("token position byte out of range");
  }
  // Checked factor by factor: three 2^24 extents would overflow 64 bits.
  std::uint64_t record_bytes = sizeof(float);
  for (std::uint64_t f : {std::uint64_t{h.shape.layers}, std::uint64_t{h.shape.heads},
                          std::uint64_t{h.shape.head_dim}, std::uint64_t{h.num_examples}}) {
    if (record_bytes > kMaxPayloadBytes / f) {
      throw ValidationError("declared payload exceeds 2^40 bytes");
    }
    record_bytes *= f;
  }
}

template <typename T>
void put_le(std::string& buf, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                  std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                                     std::uint8_t>>>;
  auto u = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf.push_back(static_cast<char>(u & 0xFF));
    if constexpr (sizeof(T) > 1) u = static_cast<U>(u >> 8);
  }
}

template <typename U>
U get_le(const unsigned char* p) {
  U u = 0;
  for (std::size_t i = sizeof(U); i-- > 0;) u = static_cast<U>((u << 8) | p[i]);
  return u;
}

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void flush_buffer(std::string& buf) {
    os_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os_) throw IoError("write failed at byte " + std::to_string(offset_));
    offset_ += buf.size();
    buf.clear();
  }
  std::uint64_t offset() const { return offset_; }

 private:
  std::ostream& os_;
  std::uint64_t offset_ = 0;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  void read(void* dst, std::size_t n, const char* what) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(is_.gcount());
    if (got != n) {
      throw CorruptionError(std::string("truncated ") + what + " (wanted " + std::to_string(n) +
                                " bytes, got " + std::to_string(got) + ")",
                            offset_ + got);
    }
    offset_ += n;
  }
  template <typename U>
  U read_le(const char* what) {
    std::array<unsigned char, sizeof(U)> b{};
    read(b.data(), b.size(), what);
    return get_le<U>(b.data());
  }
  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }
  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& is_;
  std::uint64_t offset_ = 0;
};

}  // namespace

void ActivationStore::validate() const {
  check_header(header);
  if (header.version != StoreHeader::kVersion) {
    throw ValidationError("version must be " + std::to_string(StoreHeader::kVersion));
  }
  if (labels.size() != header.num_labels) {
    throw ValidationError("label table has " + std::to_string(labels.size()) +
                          " entries, header declares " + std::to_string(header.num_labels));
  }
  if (examples.size() != header.num_examples) {
    throw ValidationError("store has " + std::to_string(examples.size()) +
                          " examples, header declares " + std::to_string(header.num_examples));
  }
  const std::size_t want = header.shape.payload_size();
  for (const auto& ex : examples) {
    if (ex.label >= header.num_labels) {
      throw ValidationError("example " + std::to_string(ex.example_id) + " has label index " +
                            std::to_string(ex.label) + " outside the vocabulary");
    }
    if (ex.payload.size() != want) {
      throw ValidationError("example " + std::to_string(ex.example_id) + " has " +
                            std::to_string(ex.payload.size()) + " components, expected " +
                            std::to_string(want));
    }
    for (float v : ex.payload) {
      if (!std::isfinite(v)) {
        throw DataError("example " + std::to_string(ex.example_id) + " has a non-finite component");
      }
    }
  }
}

std::vector<std::size_t> ActivationStore::class_counts() const {
  std::vector<std::size_t> counts(labels.size(), 0);
  for (const auto& ex : examples) ++counts.at(ex.label);
  return counts;
}

bool operator==(const ActivationStore& a, const ActivationStore& b) {
  if (!(a.header == b.header) || !(a.labels == b.labels)) return false;
  if (a.examples.size() != b.examples.size()) return false;
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    const auto& x = a.examples[i];
    const auto& y = b.examples[i];
    if (x.example_id != y.example_id || x.label != y.label) return false;
    if (x.payload.size() != y.payload.size()) return false;
    if (std::memcmp(x.payload.data(), y.payload.data(), x.payload.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

ActivationStore make_store(const Shape& shape, LabelVocab labels,
                           std::vector<ExampleActivations> examples, TokenPosition token_position) {
  ActivationStore s;
  s.header.shape = shape;
  s.header.num_examples = static_cast<std::uint32_t>(examples.size());
  s.header.num_labels = static_cast<std::uint32_t>(labels.size());
  s.header.token_position = token_position;
  s.labels = std::move(labels);
  s.examples = std::move(examples);
  s.validate();
  return s;
}

ActivationStore with_examples(const ActivationStore& like, std::vector<ExampleActivations> examples) {
  return make_store(like.shape(), like.labels, std::move(examples), like.header.token_position);
}

std::uint64_t write_store(const ActivationStore& store, std::ostream& sink) {
  store.validate();
  Writer w(sink);
  std::string buf;
  buf.append(StoreHeader::kMagic, 4);
  put_le(buf, store.header.version);
  put_le(buf, store.header.shape.layers);
  put_le(buf, store.header.shape.heads);
  put_le(buf, store.header.shape.head_dim);
  put_le(buf, store.header.num_examples);
  put_le(buf, store.header.num_labels);
  put_le(buf, static_cast<std::uint8_t>(store.header.token_position));
  for (const auto& name : store.labels.names()) {
    if (name.size() > 0xFFFF) throw ValidationError("label longer than 65535 bytes");
    put_le(buf, static_cast<std::uint16_t>(name.size()));
    buf.append(name);
  }
  w.flush_buffer(buf);
  for (const auto& ex : store.examples) {
    buf.reserve(12 + ex.payload.size() * sizeof(float));
    put_le(buf, ex.example_id);
    put_le(buf, ex.label);
    for (float v : ex.payload) put_le(buf, v);
    w.flush_buffer(buf);
  }
  return w.offset();
}

ActivationStore read_store(std::istream& source) {
  Reader r(source);
  std::array<char, 4> magic{};
  r.read(magic.data(), magic.size(), "magic");
  if (std::memcmp(magic.data(), StoreHeader::kMagic, 4) != 0) {
    throw FormatError("bad magic (expected \"SAVF\")");
  }
  StoreHeader h;
  h.version = r.read_le<std::uint32_t>("version");
  if (h.version != StoreHeader::kVersion) {
    throw UnsupportedVersionError("SAVF version " + std::to_string(h.version));
  }
  h.shape.layers = r.read_le<std::uint32_t>("header");
  h.shape.heads = r.read_le<std::uint32_t>("header");
  h.shape.head_dim = r.read_le<std::uint32_t>("header");
  h.num_examples = r.read_le<std::uint32_t>("header");
  h.num_labels = r.read_le<std::uint32_t>("header");
  const auto pos = r.read_le<std::uint8_t>("header");
  if (pos > 2) throw FormatError("token position byte " + std::to_string(pos));
  h.token_position = static_cast<TokenPosition>(pos);
  try {
    check_header(h);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("header rejected: ") + e.what());
  }

  std::vector<std::string> names;
  for (std::uint32_t c = 0; c < h.num_labels; ++c) {
    const auto len = r.read_le<std::uint16_t>("label length");
    std::string name(len, '\0');
    r.read(name.data(), len, "label text");
    names.push_back(std::move(name));
  }
  LabelVocab vocab;
  try {
    vocab = LabelVocab(std::move(names));
  } catch (const ValidationError& e) {
    throw FormatError(std::string("label table rejected: ") + e.what());
  }

  ActivationStore store;
  store.header = h;
  store.labels = std::move(vocab);
  const std::size_t width = h.shape.payload_size();
  // Payload is read in bounded chunks so a lying header cannot force one large
  // allocation before the bytes actually exist.
  constexpr std::size_t kChunkFloats = 1 << 14;
  std::array<unsigned char, kChunkFloats * sizeof(float)> raw{};
  for (std::uint32_t i = 0; i < h.num_examples; ++i) {
    ExampleActivations ex;
    ex.example_id = r.read_le<std::uint64_t>("record id");
    const std::uint64_t label_offset = r.offset();
    ex.label = r.read_le<std::uint32_t>("record label");
    if (ex.label >= h.num_labels) {
      throw CorruptionError("label index " + std::to_string(ex.label) + " out of range",
                            label_offset);
    }
    for (std::size_t done = 0; done < width;) {
      const std::size_t n = std::min(kChunkFloats, width - done);
      r.read(raw.data(), n * sizeof(float), "record payload");
      for (std::size_t k = 0; k < n; ++k) {
        ex.payload.push_back(std::bit_cast<float>(get_le<std::uint32_t>(raw.data() + k * sizeof(float))));
      }
      done += n;
    }
    store.examples.push_back(std::move(ex));
  }
  if (!r.at_end()) throw CorruptionError("trailing bytes after last record", r.offset());
  store.validate();
  return store;
}

void write_store_file(const ActivationStore& store, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  write_store(store, os);
  os.flush();
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

ActivationStore read_store_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return read_store(is);
}

std::string store_digest(const ActivationStore& store) {
  std::ostringstream os(std::ios::binary);
  write_store(store, os);
  const std::string bytes = os.str();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xF];
  return out;
}

nlohmann::json store_manifest(const ActivationStore& store) {
  return nlohmann::json{{"version", store.header.version},
                        {"layers", store.header.shape.layers},
                        {"heads", store.header.shape.heads},
                        {"head_dim", store.header.shape.head_dim},
                        {"examples", store.header.num_examples},
                        {"labels", store.labels.names()},
                        {"token_position", to_string(store.header.token_position)}};
}

StoreSplit split_store(const ActivationStore& store, std::uint32_t shots_per_label,
                       std::uint64_t seed) {
  if (shots_per_label < 1) throw PreconditionError("shots_per_label must be >= 1");
  const std::size_t num_classes = store.labels.size();
  std::vector<std::vector<std::uint64_t>> ids(num_classes);
  for (const auto& ex : store.examples) ids[ex.label].push_back(ex.example_id);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (ids[c].size() < std::size_t{shots_per_label} + 1) {
      throw PreconditionError("class '" + store.labels.name(c) + "' has " +
                              std::to_string(ids[c].size()) + " examples, needs at least " +
                              std::to_string(shots_per_label + 1) + " (shots + 1 query)");
    }
  }
  Lcg64 rng(seed);
  std::vector<std::uint64_t> chosen;
  for (auto& list : ids) {
    std::sort(list.begin(), list.end());
    if (std::adjacent_find(list.begin(), list.end()) != list.end()) {
      throw DataError("duplicate example_id in store; cannot partition by id");
    }
    fisher_yates(list, rng);
    chosen.insert(chosen.end(), list.begin(), list.begin() + shots_per_label);
  }
  std::sort(chosen.begin(), chosen.end());

  std::vector<ExampleActivations> support, query;
  for (const auto& ex : store.examples) {
    if (std::binary_search(chosen.begin(), chosen.end(), ex.example_id)) {
      support.push_back(ex);
    } else {
      query.push_back(ex);
    }
  }
  return {with_examples(store, std::move(support)), with_examples(store, std::move(query))};
}

}  // namespace sav
