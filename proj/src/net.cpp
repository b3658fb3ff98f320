#include "lpf/net.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <netdb.h>
#include <vector>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace lpf::net {

namespace {

bool set_nonblocking(int fd) {
    int flags = fcntl(fd, F_GETFL, 0);
    return flags >= 0 && fcntl(fd, F_SETFL, flags | O_NONBLOCK) == 0;
}

bool resolve(const std::string& host, int port, sockaddr_in& out) {
    std::memset(&out, 0, sizeof(out));
    out.sin_family = AF_INET;
    out.sin_port = htons(static_cast<uint16_t>(port));
    if (host.empty() || host == "0.0.0.0") {
        out.sin_addr.s_addr = INADDR_ANY;
        return true;
    }
    if (inet_pton(AF_INET, host.c_str(), &out.sin_addr) == 1) return true;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) return false;
    out.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    freeaddrinfo(res);
    return true;
}

}  // namespace

int listen_tcp(const std::string& host, int port, std::string* err) {
    sockaddr_in addr{};
    if (!resolve(host, port, addr)) {
        if (err) *err = "cannot resolve " + host;
        return -1;
    }
    int fd = socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) {
        if (err) *err = std::strerror(errno);
        return -1;
    }
    int one = 1;
    setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || listen(fd, 128) != 0 ||
        !set_nonblocking(fd)) {
        if (err) *err = std::strerror(errno);
        close(fd);
        return -1;
    }
    return fd;
}

int accept_client(int listen_fd) {
    int fd = accept(listen_fd, nullptr, nullptr);
    if (fd < 0) return -1;
    set_nonblocking(fd);
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return fd;
}

int connect_tcp(const std::string& host, int port, int timeout_ms, std::string* err) {
    sockaddr_in addr{};
    if (!resolve(host, port, addr)) {
        if (err) *err = "cannot resolve " + host;
        return -1;
    }
    int fd = socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) {
        if (err) *err = std::strerror(errno);
        return -1;
    }
    set_nonblocking(fd);
    int rc = connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    if (rc != 0 && errno != EINPROGRESS) {
        if (err) *err = std::strerror(errno);
        close(fd);
        return -1;
    }
    if (rc != 0) {
        pollfd p{fd, POLLOUT, 0};
        int pr = poll(&p, 1, timeout_ms);
        if (pr <= 0) {
            if (err) *err = pr == 0 ? "connect timeout" : std::strerror(errno);
            close(fd);
            return -1;
        }
        int soerr = 0;
        socklen_t slen = sizeof(soerr);
        getsockopt(fd, SOL_SOCKET, SO_ERROR, &soerr, &slen);
        if (soerr != 0) {
            if (err) *err = std::strerror(soerr);
            close(fd);
            return -1;
        }
    }
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return fd;
}

long read_some(int fd, void* buf, size_t n) {
    while (true) {
        ssize_t r = recv(fd, buf, n, 0);
        if (r > 0) return r;
        if (r == 0) return -1;  // orderly shutdown
        if (errno == EINTR) continue;
        if (errno == EAGAIN || errno == EWOULDBLOCK) return 0;
        return -1;
    }
}

long write_some(int fd, const void* buf, size_t n) {
    while (true) {
        ssize_t r = send(fd, buf, n, MSG_NOSIGNAL);
        if (r >= 0) return r;
        if (errno == EINTR) continue;
        if (errno == EAGAIN || errno == EWOULDBLOCK) return 0;
        return -1;
    }
}

bool write_all(int fd, const void* buf, size_t n, int timeout_ms) {
    const uint8_t* p = static_cast<const uint8_t*>(buf);
    size_t off = 0;
    while (off < n) {
        long w = write_some(fd, p + off, n - off);
        if (w < 0) return false;
        if (w == 0) {
            pollfd pf{fd, POLLOUT, 0};
            if (poll(&pf, 1, timeout_ms) <= 0) return false;
            continue;
        }
        off += static_cast<size_t>(w);
    }
    return true;
}

bool wait_readable(int fd, int timeout_ms) {
    pollfd p{fd, POLLIN, 0};
    return poll(&p, 1, timeout_ms) > 0;
}

void poll_any(const int* fds, size_t n, int timeout_ms) {
    std::vector<pollfd> pfds;
    pfds.reserve(n);
    for (size_t i = 0; i < n; i++) pfds.push_back({fds[i], POLLIN, 0});
    poll(pfds.data(), static_cast<nfds_t>(pfds.size()), timeout_ms);
}

void close_fd(int fd) {
    if (fd >= 0) close(fd);
}

bool port_free(const std::string& host, int port) {
    std::string err;
    int fd = listen_tcp(host, port, &err);
    if (fd < 0) return false;
    close(fd);
    return true;
}

int pick_free_port(const std::string& host) {
    sockaddr_in addr{};
    resolve(host, 0, addr);
    int fd = socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return -1;
    if (bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        close(fd);
        return -1;
    }
    socklen_t slen = sizeof(addr);
    getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &slen);
    int port = ntohs(addr.sin_port);
    close(fd);
    return port;
}

}  // namespace lpf::net
