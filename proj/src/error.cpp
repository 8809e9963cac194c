#include "uniclin/error.hpp"

namespace uniclin {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kCatalog: return "catalog";
    case ErrorKind::kPartition: return "partition";
    case ErrorKind::kEncode: return "encode";
    case ErrorKind::kAdapter: return "adapter";
    case ErrorKind::kTokenizer: return "tokenizer";
    case ErrorKind::kStructural: return "structural";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kSchema: return "schema";
  }
  return "unknown";
}

}  // namespace uniclin
