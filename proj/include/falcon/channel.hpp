#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include "falcon/common.hpp"

namespace falcon {

inline constexpr size_t kMaxFrameSize = 64u << 20;  // 64 MiB

enum class FrameType : u8 {
    Hello = 1,
    Params = 2,
    ModelMeta = 3,
    CtUp = 4,
    CtDown = 5,
    GcTables = 6,
    OtMsg = 7,
    ShareMsg = 8,
    Result = 9,
    Error = 10,
    Bye = 11,
};

inline const char* frame_type_name(FrameType t) {
    switch (t) {
        case FrameType::Hello: return "HELLO";
        case FrameType::Params: return "PARAMS";
        case FrameType::ModelMeta: return "MODEL_META";
        case FrameType::CtUp: return "CT_UP";
        case FrameType::CtDown: return "CT_DOWN";
        case FrameType::GcTables: return "GC_TABLES";
        case FrameType::OtMsg: return "OT_MSG";
        case FrameType::ShareMsg: return "SHARE_MSG";
        case FrameType::Result: return "RESULT";
        case FrameType::Error: return "ERROR";
        case FrameType::Bye: return "BYE";
    }
    return "?";
}

// Byte-oriented duplex channel. Framing sits on top.
class Channel {
public:
    virtual ~Channel() = default;
    virtual void send_bytes(const u8* data, size_t n) = 0;
    virtual void recv_bytes(u8* data, size_t n) = 0;

    u64 bytes_sent() const { return sent_; }
    u64 bytes_received() const { return received_; }

protected:
    std::atomic<u64> sent_{0}, received_{0};
};

struct Frame {
    FrameType type;
    std::vector<u8> payload;
};

// | length (4B LE, payload only) | type (1B) | payload |
inline void write_frame(Channel& ch, FrameType type, const std::vector<u8>& payload) {
    check(payload.size() <= kMaxFrameSize, ErrorCode::Capacity, "frame exceeds 64 MiB");
    std::vector<u8> hdr;
    put_u32(hdr, static_cast<u32>(payload.size()));
    hdr.push_back(static_cast<u8>(type));
    ch.send_bytes(hdr.data(), hdr.size());
    if (!payload.empty()) ch.send_bytes(payload.data(), payload.size());
}

inline Frame read_frame(Channel& ch) {
    u8 hdr[5];
    ch.recv_bytes(hdr, 5);
    u32 len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<u32>(hdr[i]) << (8 * i);
    check(len <= kMaxFrameSize, ErrorCode::Protocol, "frame length exceeds 64 MiB");
    u8 t = hdr[4];
    check(t >= 1 && t <= 11, ErrorCode::Protocol, "unknown frame type");
    Frame f;
    f.type = static_cast<FrameType>(t);
    f.payload.resize(len);
    if (len) ch.recv_bytes(f.payload.data(), len);
    return f;
}

// Reads a frame and demands a specific type; ERROR frames become exceptions.
inline std::vector<u8> expect_frame(Channel& ch, FrameType want) {
    Frame f = read_frame(ch);
    if (f.type == FrameType::Error) {
        std::string msg(f.payload.begin() + std::min<size_t>(1, f.payload.size()), f.payload.end());
        ErrorCode code = f.payload.empty() ? ErrorCode::Protocol : static_cast<ErrorCode>(f.payload[0]);
        throw Error(code, "peer error: " + msg);
    }
    check(f.type == want, ErrorCode::Protocol,
          std::string("expected ") + frame_type_name(want) + " frame, got " + frame_type_name(f.type));
    return std::move(f.payload);
}

inline void send_error(Channel& ch, ErrorCode code, const std::string& msg) {
    std::vector<u8> payload;
    payload.push_back(static_cast<u8>(code));
    payload.insert(payload.end(), msg.begin(), msg.end());
    write_frame(ch, FrameType::Error, payload);
}

// In-memory duplex pair for the loopback mode and tests.
class LoopbackChannel : public Channel {
public:
    static std::pair<std::shared_ptr<LoopbackChannel>, std::shared_ptr<LoopbackChannel>> make_pair() {
        auto shared = std::make_shared<Shared>();
        auto a = std::shared_ptr<LoopbackChannel>(new LoopbackChannel(shared, 0));
        auto b = std::shared_ptr<LoopbackChannel>(new LoopbackChannel(shared, 1));
        return {a, b};
    }

    void send_bytes(const u8* data, size_t n) override {
        std::lock_guard lk(shared_->mu);
        auto& q = shared_->queues[1 - side_];
        q.insert(q.end(), data, data + n);
        shared_->cv.notify_all();
        sent_ += n;
    }

    void recv_bytes(u8* data, size_t n) override {
        std::unique_lock lk(shared_->mu);
        auto& q = shared_->queues[side_];
        shared_->cv.wait(lk, [&] { return q.size() >= n || shared_->closed; });
        check(q.size() >= n, ErrorCode::Protocol, "channel closed mid-message");
        std::copy(q.begin(), q.begin() + n, data);
        q.erase(q.begin(), q.begin() + n);
        received_ += n;
    }

    void close() {
        std::lock_guard lk(shared_->mu);
        shared_->closed = true;
        shared_->cv.notify_all();
    }

private:
    struct Shared {
        std::mutex mu;
        std::condition_variable cv;
        std::deque<u8> queues[2];
        bool closed = false;
    };

    LoopbackChannel(std::shared_ptr<Shared> s, int side) : shared_(std::move(s)), side_(side) {}

    std::shared_ptr<Shared> shared_;
    int side_;
};

// Blocking TCP transport.
class TcpChannel : public Channel {
public:
    explicit TcpChannel(int fd) : fd_(fd) {
        int one = 1;
        setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }

    ~TcpChannel() override {
        if (fd_ >= 0) ::close(fd_);
    }

    static std::unique_ptr<TcpChannel> connect(const std::string& host, std::uint16_t port) {
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        check(fd >= 0, ErrorCode::Protocol, "socket() failed");
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        check(inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1, ErrorCode::BadArgument,
              "bad IPv4 address: " + host);
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
            ::close(fd);
            throw Error(ErrorCode::Protocol, "connect to " + host + " failed");
        }
        return std::make_unique<TcpChannel>(fd);
    }

    void send_bytes(const u8* data, size_t n) override {
        size_t off = 0;
        while (off < n) {
            ssize_t w = ::send(fd_, data + off, n - off, MSG_NOSIGNAL);
            check(w > 0, ErrorCode::Protocol, "send failed (connection lost)");
            off += static_cast<size_t>(w);
        }
        sent_ += n;
    }

    void recv_bytes(u8* data, size_t n) override {
        size_t off = 0;
        while (off < n) {
            ssize_t r = ::recv(fd_, data + off, n - off, 0);
            check(r > 0, ErrorCode::Protocol, "recv failed (connection closed)");
            off += static_cast<size_t>(r);
        }
        received_ += n;
    }

private:
    int fd_;
};

// Listening socket that yields TcpChannels.
class TcpListener {
public:
    explicit TcpListener(std::uint16_t port, const std::string& host = "0.0.0.0") {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        check(fd_ >= 0, ErrorCode::Protocol, "socket() failed");
        int one = 1;
        setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        check(inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1, ErrorCode::BadArgument,
              "bad IPv4 address: " + host);
        check(::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0, ErrorCode::Protocol,
              "bind failed");
        check(::listen(fd_, 8) == 0, ErrorCode::Protocol, "listen failed");
    }

    ~TcpListener() {
        if (fd_ >= 0) ::close(fd_);
    }

    std::uint16_t port() const {
        sockaddr_in addr{};
        socklen_t len = sizeof addr;
        getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        return ntohs(addr.sin_port);
    }

    std::unique_ptr<TcpChannel> accept() {
        int cfd = ::accept(fd_, nullptr, nullptr);
        check(cfd >= 0, ErrorCode::Protocol, "accept failed");
        return std::make_unique<TcpChannel>(cfd);
    }

    void shutdown() {
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_RDWR);
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
};

}  // namespace falcon
