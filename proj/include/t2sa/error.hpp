#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace t2sa {

// Error categories double as CLI exit codes.
enum class ErrorKind { usage = 1, data = 2, transport = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& message)
        : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& code() const noexcept { return code_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
    std::string code_;
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& message, std::string code = "usage")
        : Error(ErrorKind::usage, std::move(code), message) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& message, std::string code = "data")
        : Error(ErrorKind::data, std::move(code), message) {}
};

class NotFoundError : public DataError {
public:
    explicit NotFoundError(const std::string& message) : DataError(message, "not_found") {}
};

class ConflictError : public DataError {
public:
    explicit ConflictError(const std::string& message) : DataError(message, "conflict") {}
};

class TransportError : public Error {
public:
    explicit TransportError(const std::string& message, std::string code = "transport")
        : Error(ErrorKind::transport, std::move(code), message) {}
};

// The service answered, but not in the agreed shape.
class ProtocolError : public TransportError {
public:
    explicit ProtocolError(const std::string& message) : TransportError(message, "protocol") {}
};

class EmptyCompletionError : public ProtocolError {
public:
    explicit EmptyCompletionError(const std::string& message) : ProtocolError(message) {}
};

// Re-throws any t2sa::Error raised by fn with the stage name prefixed,
// keeping its kind so exit codes survive.
template <typename Fn>
decltype(auto) with_stage(const char* stage, Fn&& fn) {
    try {
        return std::forward<Fn>(fn)();
    } catch (const Error& e) {
        throw Error(e.kind(), e.code(), std::string("[") + stage + "] " + e.what());
    }
}

}  // namespace t2sa
