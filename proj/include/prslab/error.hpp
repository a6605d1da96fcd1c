#pragma once

#include <stdexcept>
#include <string>

namespace prslab {

// Error taxonomy shared by the library and the CLI. Each kind maps onto one
// of the process exit codes used by the CLI front-end:
//   validation-class errors -> 2, data-class errors -> 3, runtime -> 4.
enum class ErrorKind {
    dimension,    // shape mismatch in an op
    parameter,    // bad argument value
    contract,     // API precondition violated
    index,        // out-of-range index (labels, layers)
    format,       // malformed file content
    length,       // truncated / wrong-size file
    consistency,  // cross-file mismatch (e.g. image/label counts)
    data,         // dataset unusable for the requested operation
    geometry,     // degenerate geometric input (collinear anchors)
    degeneracy,   // statistically degenerate input (constant regressor)
    config,       // invalid experiment configuration
    io,           // filesystem failure
    internal      // should-not-happen
};

inline const char* error_class_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::dimension:   return "dimension-error";
        case ErrorKind::parameter:   return "parameter-error";
        case ErrorKind::contract:    return "contract-error";
        case ErrorKind::index:       return "index-error";
        case ErrorKind::format:      return "format-error";
        case ErrorKind::length:      return "length-error";
        case ErrorKind::consistency: return "consistency-error";
        case ErrorKind::data:        return "data-error";
        case ErrorKind::geometry:    return "geometry-error";
        case ErrorKind::degeneracy:  return "degeneracy-error";
        case ErrorKind::config:      return "config-error";
        case ErrorKind::io:          return "io-error";
        case ErrorKind::internal:    return "internal-error";
    }
    return "unknown-error";
}

// Exit code the CLI reports for a given error kind.
inline int error_exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::parameter:
        case ErrorKind::contract:
        case ErrorKind::dimension:
        case ErrorKind::index:
        case ErrorKind::geometry:
        case ErrorKind::degeneracy:
        case ErrorKind::config:
            return 2;
        case ErrorKind::format:
        case ErrorKind::length:
        case ErrorKind::consistency:
        case ErrorKind::data:
            return 3;
        default:
            return 4;
    }
}

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(error_class_name(kind)) + ": " + message),
          kind_(kind) {}

    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) raise(kind, message);
}

}  // namespace prslab
