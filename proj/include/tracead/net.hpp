#ifndef TRACEAD_NET_HPP
#define TRACEAD_NET_HPP

// Minimal newline-framed TCP transport. One frame = one record line.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace tracead::net {

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    std::string to_string() const { return host + ":" + std::to_string(port); }
};

/// Parses "host:port" (also accepts "tcp://host:port" and ":port").
Endpoint parse_endpoint(std::string_view text);

/// Owning socket descriptor.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) noexcept : fd_(fd) { }
    Socket(Socket&& other) noexcept;
    Socket& operator=(Socket&& other) noexcept;
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket();

    int fd() const noexcept { return fd_; }
    bool valid() const noexcept { return fd_ >= 0; }
    void close() noexcept;
    /// Unblocks any thread waiting on this socket.
    void shutdown() noexcept;

private:
    int fd_ = -1;
};

/// A connected stream socket with buffered line reads.
class LineConnection {
public:
    LineConnection() = default;
    explicit LineConnection(Socket s) : socket_(std::move(s)) { }

    static LineConnection connect(const Endpoint& ep, std::chrono::milliseconds timeout);

    bool valid() const noexcept { return socket_.valid(); }
    Socket& socket() noexcept { return socket_; }

    /// Sends the line, appending '\n' if missing. Throws NetworkError.
    void send_line(std::string_view line);
    /// Sends raw bytes without framing (used to emulate partial frames).
    void send_raw(std::string_view bytes);
    /// Returns the next line without its newline, or nullopt on orderly EOF.
    /// A negative timeout waits forever. Throws NetworkError on timeout or failure.
    std::optional<std::string> recv_line(std::chrono::milliseconds timeout = std::chrono::milliseconds(-1));

    void close() noexcept { socket_.close(); }

private:
    Socket socket_;
    std::string buffer_;
    std::size_t start_ = 0;
};

class Listener {
public:
    /// Binds and listens; port 0 picks an ephemeral port.
    static Listener bind(const Endpoint& ep);

    std::uint16_t port() const noexcept { return port_; }
    /// Blocks until a client connects; returns nullopt once the listener is shut down.
    std::optional<LineConnection> accept();
    void shutdown() noexcept { socket_.shutdown(); }

private:
    Socket socket_;
    std::uint16_t port_ = 0;
};

} // namespace tracead::net

#endif
