#pragma once

#include <cstddef>
#include <string>

namespace lpf::net {

/// Non-blocking TCP listener on host:port. Returns fd, or -1 with *err set.
int listen_tcp(const std::string& host, int port, std::string* err);

/// Accept one pending client as a non-blocking fd; -1 if none.
int accept_client(int listen_fd);

/// Connect with a bounded wait; -1 with *err on failure. The returned fd is
/// non-blocking.
int connect_tcp(const std::string& host, int port, int timeout_ms, std::string* err);

/// >0 bytes read; 0 nothing available; -1 peer closed or error.
long read_some(int fd, void* buf, size_t n);

/// <0 error; otherwise bytes accepted (may be short).
long write_some(int fd, const void* buf, size_t n);

/// Blocking write of the whole buffer with a deadline; false on failure.
bool write_all(int fd, const void* buf, size_t n, int timeout_ms);

/// Wait until fd is readable; false on timeout/error.
bool wait_readable(int fd, int timeout_ms);

/// Block until any of the fds is readable or the timeout elapses.
void poll_any(const int* fds, size_t n, int timeout_ms);

void close_fd(int fd);

bool port_free(const std::string& host, int port);
int pick_free_port(const std::string& host = "127.0.0.1");

}  // namespace lpf::net
