#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace uniclin {

enum class ErrorKind {
  kShape,
  kNumeric,
  kUsage,
  kConfig,
  kCatalog,
  kPartition,
  kEncode,
  kAdapter,
  kTokenizer,
  kStructural,
  kIo,
  kSchema,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a machine-readable kind so the
// CLI can report it as JSON.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace uniclin
