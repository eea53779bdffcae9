#ifndef TRACEAD_ERROR_HPP
#define TRACEAD_ERROR_HPP

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace tracead {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Errors caused by the data being processed (exit code 1 on the CLI).
class DataError : public Error {
public:
    using Error::Error;
};

/// Errors on the wire between services (exit code 2 on the CLI).
class ProtocolError : public Error {
public:
    using Error::Error;
};

class NetworkError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

class MalformedRecord : public DataError {
public:
    MalformedRecord(std::uint64_t position, std::string reason)
        : DataError("malformed record at " + std::to_string(position) + ": " + reason)
        , position_(position)
        , reason_(std::move(reason))
    {
    }

    std::uint64_t position() const noexcept { return position_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::uint64_t position_;
    std::string reason_;
};

class OrderingViolation : public DataError {
public:
    OrderingViolation(std::string stream, std::uint64_t t_prev, std::uint64_t t_now)
        : DataError("timestamp regression on stream " + stream + ": " + std::to_string(t_prev)
              + " -> " + std::to_string(t_now))
        , stream_(std::move(stream))
        , t_prev_(t_prev)
        , t_now_(t_now)
    {
    }

    const std::string& stream() const noexcept { return stream_; }
    std::uint64_t t_prev() const noexcept { return t_prev_; }
    std::uint64_t t_now() const noexcept { return t_now_; }

private:
    std::string stream_;
    std::uint64_t t_prev_;
    std::uint64_t t_now_;
};

class StackMismatch : public DataError {
public:
    // expected is empty when the EXIT arrived on an empty stack
    StackMismatch(std::optional<std::uint32_t> expected, std::uint32_t got)
        : DataError("EXIT of fid " + std::to_string(got) + " does not match stack top "
              + (expected ? std::to_string(*expected) : std::string("<empty>")))
        , expected_(expected)
        , got_(got)
    {
    }

    std::optional<std::uint32_t> expected() const noexcept { return expected_; }
    std::uint32_t got() const noexcept { return got_; }

private:
    std::optional<std::uint32_t> expected_;
    std::uint32_t got_;
};

class StorageError : public DataError {
public:
    using DataError::DataError;
};

class DuplicateRun : public DataError {
public:
    explicit DuplicateRun(const std::string& run_id)
        : DataError("run environment already recorded for run " + run_id)
    {
    }
};

class UnknownStep : public DataError {
public:
    using DataError::DataError;
};

class UnknownSpan : public DataError {
public:
    using DataError::DataError;
};

class UniverseMismatch : public DataError {
public:
    using DataError::DataError;
};

class NonPositiveBase : public DataError {
public:
    using DataError::DataError;
};

class InvalidConfig : public Error {
public:
    using Error::Error;
};

} // namespace tracead

#endif
