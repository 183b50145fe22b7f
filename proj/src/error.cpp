#include "hyper/error.hpp"

namespace hyper {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSyntax: return "SyntaxError";
    case ErrorCode::kValidation: return "ValidationError";
    case ErrorCode::kEmptyDomain: return "EmptyDomain";
    case ErrorCode::kBadRange: return "BadRange";
    case ErrorCode::kUnboundPlaceholder: return "UnboundPlaceholder";
    case ErrorCode::kNotFound: return "NotFound";
    case ErrorCode::kStoreUnavailable: return "StoreUnavailable";
    case ErrorCode::kInvalidKey: return "InvalidKey";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kCorruptManifest: return "CorruptManifest";
    case ErrorCode::kFileNotInManifest: return "FileNotInManifest";
    case ErrorCode::kChunkDigestMismatch: return "ChunkDigestMismatch";
    case ErrorCode::kDuplicateWorkflow: return "DuplicateWorkflow";
    case ErrorCode::kUnknownWorkflow: return "UnknownWorkflow";
    case ErrorCode::kUnknownAttempt: return "UnknownAttempt";
    case ErrorCode::kCorruptSnapshot: return "CorruptSnapshot";
    case ErrorCode::kProtocol: return "ProtocolError";
    case ErrorCode::kTransport: return "TransportError";
    case ErrorCode::kDuplicateNode: return "DuplicateNode";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

ErrorCode error_code_from_string(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::kInvalidArgument); ++i) {
    const auto code = static_cast<ErrorCode>(i);
    if (to_string(code) == name) return code;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown error code '" + std::string(name) + "'");
}

}  // namespace hyper
