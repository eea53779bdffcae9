#include "tracead/net.hpp"

#include "tracead/error.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

namespace tracead::net {

namespace {

[[noreturn]] void raise(const std::string& what)
{
    throw NetworkError(what + ": " + std::strerror(errno));
}

bool wait_fd(int fd, short events, std::chrono::milliseconds timeout)
{
    pollfd p{fd, events, 0};
    int ms = timeout.count() < 0 ? -1 : static_cast<int>(timeout.count());
    for (;;) {
        int rc = ::poll(&p, 1, ms);
        if (rc < 0 && errno == EINTR) {
            continue;
        }
        if (rc < 0) {
            raise("poll");
        }
        return rc > 0;
    }
}

} // namespace

Endpoint parse_endpoint(std::string_view text)
{
    if (text.starts_with("tcp://")) {
        text.remove_prefix(6);
    }
    auto colon = text.rfind(':');
    if (colon == std::string_view::npos) {
        throw InvalidConfig("endpoint '" + std::string(text) + "' is not host:port");
    }
    Endpoint ep;
    if (colon > 0) {
        ep.host = std::string(text.substr(0, colon));
    }
    auto port_text = text.substr(colon + 1);
    unsigned port = 0;
    auto [p, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc() || p != port_text.data() + port_text.size() || port > 65535) {
        throw InvalidConfig("bad port in endpoint '" + std::string(text) + "'");
    }
    ep.port = static_cast<std::uint16_t>(port);
    return ep;
}

Socket::Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }

Socket& Socket::operator=(Socket&& other) noexcept
{
    if (this != &other) {
        close();
        fd_ = other.fd_;
        other.fd_ = -1;
    }
    return *this;
}

Socket::~Socket() { close(); }

void Socket::close() noexcept
{
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

void Socket::shutdown() noexcept
{
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
    }
}

LineConnection LineConnection::connect(const Endpoint& ep, std::chrono::milliseconds timeout)
{
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    std::string port = std::to_string(ep.port);
    if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
        throw NetworkError("resolve " + ep.to_string() + ": " + ::gai_strerror(rc));
    }
    Socket s(::socket(res->ai_family, res->ai_socktype | SOCK_NONBLOCK | SOCK_CLOEXEC, 0));
    if (!s.valid()) {
        ::freeaddrinfo(res);
        raise("socket");
    }
    int rc = ::connect(s.fd(), res->ai_addr, res->ai_addrlen);
    ::freeaddrinfo(res);
    if (rc < 0 && errno != EINPROGRESS) {
        raise("connect " + ep.to_string());
    }
    if (rc < 0) {
        if (!wait_fd(s.fd(), POLLOUT, timeout)) {
            throw NetworkError("connect " + ep.to_string() + ": timed out");
        }
        int err = 0;
        socklen_t len = sizeof(err);
        ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) {
            errno = err;
            raise("connect " + ep.to_string());
        }
    }
    int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return LineConnection(std::move(s));
}

void LineConnection::send_raw(std::string_view bytes)
{
    while (!bytes.empty()) {
        ssize_t n = ::send(socket_.fd(), bytes.data(), bytes.size(), MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            if (errno == EAGAIN || errno == EWOULDBLOCK) {
                wait_fd(socket_.fd(), POLLOUT, std::chrono::milliseconds(-1));
                continue;
            }
            raise("send");
        }
        bytes.remove_prefix(static_cast<std::size_t>(n));
    }
}

void LineConnection::send_line(std::string_view line)
{
    if (!line.empty() && line.back() == '\n') {
        send_raw(line);
        return;
    }
    std::string framed;
    framed.reserve(line.size() + 1);
    framed.append(line);
    framed.push_back('\n');
    send_raw(framed);
}

std::optional<std::string> LineConnection::recv_line(std::chrono::milliseconds timeout)
{
    auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        auto nl = buffer_.find('\n', start_);
        if (nl != std::string::npos) {
            std::string line = buffer_.substr(start_, nl - start_);
            start_ = nl + 1;
            if (start_ > 65536) {
                buffer_.erase(0, start_);
                start_ = 0;
            }
            return line;
        }
        auto remaining = std::chrono::milliseconds(-1);
        if (timeout.count() >= 0) {
            remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
                deadline - std::chrono::steady_clock::now());
            if (remaining.count() < 0) {
                remaining = std::chrono::milliseconds(0);
            }
        }
        if (!wait_fd(socket_.fd(), POLLIN, remaining)) {
            throw NetworkError("receive timed out");
        }
        char buf[65536];
        ssize_t n = ::recv(socket_.fd(), buf, sizeof(buf), 0);
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) {
                continue;
            }
            raise("recv");
        }
        if (n == 0) {
            // trailing bytes without a newline are an incomplete frame and are dropped
            return std::nullopt;
        }
        buffer_.append(buf, static_cast<std::size_t>(n));
    }
}

Listener Listener::bind(const Endpoint& ep)
{
    Listener l;
    l.socket_ = Socket(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!l.socket_.valid()) {
        raise("socket");
    }
    int one = 1;
    ::setsockopt(l.socket_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port);
    std::string host = ep.host.empty() || ep.host == "localhost" ? "127.0.0.1" : ep.host;
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        throw InvalidConfig("listen address must be a numeric IPv4 address: " + ep.host);
    }
    if (::bind(l.socket_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
        raise("bind " + ep.to_string());
    }
    if (::listen(l.socket_.fd(), 256) < 0) {
        raise("listen");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(l.socket_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    l.port_ = ntohs(addr.sin_port);
    return l;
}

std::optional<LineConnection> Listener::accept()
{
    for (;;) {
        int fd = ::accept4(socket_.fd(), nullptr, nullptr, SOCK_NONBLOCK | SOCK_CLOEXEC);
        if (fd >= 0) {
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
            return LineConnection(Socket(fd));
        }
        if (errno == EINTR || errno == ECONNABORTED) {
            continue;
        }
        return std::nullopt;
    }
}

} // namespace tracead::net
