#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sav {

// Coarse error classes; the CLI maps these onto its exit codes.
enum class ErrorClass {
  usage,     // bad arguments, precondition violations on user-chosen parameters
  data,      // malformed or inconsistent input data
  internal,  // everything else
};

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

struct PreconditionError : Error {
  explicit PreconditionError(const std::string& w) : Error(ErrorClass::usage, "precondition: " + w) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorClass::usage, "config: " + w) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorClass::data, "dimension: " + w) {}
};

struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorClass::data, "data: " + w) {}
};

struct LookupError : Error {
  explicit LookupError(const std::string& w) : Error(ErrorClass::data, "lookup: " + w) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& w) : Error(ErrorClass::data, "validation: " + w) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error(ErrorClass::data, "format: " + w) {}
};

struct UnsupportedVersionError : Error {
  explicit UnsupportedVersionError(const std::string& w)
      : Error(ErrorClass::data, "unsupported version: " + w) {}
};

struct CorruptionError : Error {
  CorruptionError(const std::string& w, std::uint64_t offset)
      : Error(ErrorClass::data, "corrupt at byte " + std::to_string(offset) + ": " + w),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

struct ModelFormatError : Error {
  explicit ModelFormatError(const std::string& w) : Error(ErrorClass::data, "model format: " + w) {}
};

struct StateError : Error {
  explicit StateError(const std::string& w) : Error(ErrorClass::usage, "state: " + w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorClass::data, "io: " + w) {}
};

}  // namespace sav
