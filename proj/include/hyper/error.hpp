#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hyper {

enum class ErrorCode {
  kSyntax,
  kValidation,
  kEmptyDomain,
  kBadRange,
  kUnboundPlaceholder,
  kNotFound,
  kStoreUnavailable,
  kInvalidKey,
  kIo,
  kCorruptManifest,
  kFileNotInManifest,
  kChunkDigestMismatch,
  kDuplicateWorkflow,
  kUnknownWorkflow,
  kUnknownAttempt,
  kCorruptSnapshot,
  kProtocol,
  kTransport,
  kDuplicateNode,
  kInvalidArgument,
};

std::string_view to_string(ErrorCode code);
// Throws InvalidArgument for an unknown name.
ErrorCode error_code_from_string(std::string_view name);

// All library failures are reported as hyper::Error. `path()` carries the
// recipe field path for validation errors and is empty otherwise.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string path = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message),
        path_(std::move(path)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& path() const noexcept { return path_; }
  // The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
  std::string path_;
};

}  // namespace hyper
