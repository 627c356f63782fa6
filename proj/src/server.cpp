#include "fedrun/server.hpp"

#include <boost/asio.hpp>
#include <array>
#include <chrono>
#include <deque>
#include <exception>
#include <iostream>
#include <map>
#include <memory>
#include <vector>

#include "fedrun/checkpoint.hpp"
#include "fedrun/coordinator.hpp"
#include "fedrun/errors.hpp"

namespace fedrun {

namespace asio = boost::asio;
using asio::ip::tcp;

std::pair<std::string, unsigned short> split_address(const std::string& address) {
    const auto colon = address.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
        throw ConfigError("address '" + address + "' is not host:port");
    }
    const std::string port = address.substr(colon + 1);
    unsigned long value = 0;
    try {
        std::size_t used = 0;
        value = std::stoul(port, &used);
        if (used != port.size()) throw std::invalid_argument(port);
    } catch (const std::exception&) {
        throw ConfigError("address '" + address + "' has a bad port");
    }
    if (value > 65535) throw ConfigError("address '" + address + "' has a bad port");
    return {address.substr(0, colon), static_cast<unsigned short>(value)};
}

namespace {

class Server;

class Session : public std::enable_shared_from_this<Session> {
public:
    Session(tcp::socket socket, ConnId id, Server& server) : socket_(std::move(socket)), id_(id), server_(server) {}

    void start() { read(); }
    void send(const Bytes& frame);
    void close_after_flush();
    void close_now();
    bool idle() const { return writes_.empty(); }

private:
    void read();
    void write();

    tcp::socket socket_;
    ConnId id_;
    Server& server_;
    FrameDecoder decoder_;
    std::array<std::uint8_t, 64 * 1024> buf_{};
    std::deque<Bytes> writes_;
    bool closing_ = false;
    bool closed_ = false;
};

class Server {
public:
    Server(const FederationConfig& cfg, const ServerOptions& opts)
        : cfg_(cfg), opts_(opts), acceptor_(io_), timer_(io_), store_(cfg.checkpoint_path) {}

    ExperimentReport run() {
        std::optional<Checkpoint> resume;
        if (opts_.resume) {
            resume = resume_from_checkpoint(cfg_.checkpoint_path, config_hash(cfg_));
            std::cerr << "resuming after round " << resume->round << " from " << cfg_.checkpoint_path.string()
                      << "\n";
        }
        CoordinatorOptions copts;
        copts.clock = &clock_;
        copts.checkpoints = &store_;
        copts.on_aggregated = [](std::uint64_t round, const ParameterVector&) {
            std::cerr << "round " << round << " aggregated\n";
        };
        coordinator_ = std::make_unique<Coordinator>(cfg_, std::move(copts), std::move(resume));

        const auto [host, port] = split_address(opts_.listen);
        tcp::endpoint ep(asio::ip::make_address(host), port);
        try {
            acceptor_.open(ep.protocol());
            acceptor_.set_option(tcp::acceptor::reuse_address(true));
            acceptor_.bind(ep);
            acceptor_.listen();
        } catch (const boost::system::system_error& e) {
            throw IoError("cannot listen on " + opts_.listen + ": " + e.what());
        }
        const auto bound = acceptor_.local_endpoint().port();
        std::cerr << "listening on " << host << ":" << bound << "\n";
        if (opts_.on_listening) opts_.on_listening(bound);

        accept();
        tick();
        io_.run();
        if (failure_) std::rethrow_exception(failure_);
        return coordinator_->report();
    }

    // Coordinator entry points, all on the I/O thread.
    void connected(ConnId id, std::shared_ptr<Session> s) {
        sessions_[id] = std::move(s);
        drive([&] { coordinator_->on_connect(id); });
    }
    void message(ConnId id, const Message& msg) {
        drive([&] { coordinator_->on_message(id, msg); });
    }
    void disconnected(ConnId id) {
        sessions_.erase(id);
        drive([&] { coordinator_->on_disconnect(id); });
        maybe_stop();
    }
    void flushed() { maybe_stop(); }

private:
    template <typename Fn>
    void drive(Fn&& fn) {
        if (stopping_) return;
        try {
            fn();
        } catch (...) {
            failure_ = std::current_exception();
            io_.stop();
            return;
        }
        for (const auto& out : coordinator_->take_outbox()) {
            if (auto it = sessions_.find(out.conn); it != sessions_.end()) it->second->send(encode(out.msg));
        }
        for (ConnId c : coordinator_->take_closes()) {
            if (auto it = sessions_.find(c); it != sessions_.end()) {
                auto s = it->second;
                s->close_after_flush();
            }
        }
        if (coordinator_->finished()) begin_stop();
    }

    void accept() {
        acceptor_.async_accept([this](boost::system::error_code ec, tcp::socket socket) {
            if (ec) return;
            socket.set_option(tcp::no_delay(true));
            const ConnId id = next_id_++;
            auto s = std::make_shared<Session>(std::move(socket), id, *this);
            connected(id, s);
            s->start();
            if (!stopping_) accept();
        });
    }

    void tick() {
        timer_.expires_after(std::chrono::milliseconds(100));
        timer_.async_wait([this](boost::system::error_code ec) {
            if (ec) return;
            if (!stopping_) drive([&] { coordinator_->on_tick(); });
            if (stopping_ && std::chrono::steady_clock::now() > stop_deadline_) {
                io_.stop();
                return;
            }
            tick();
        });
    }

    void begin_stop() {
        if (stopping_) return;
        stopping_ = true;
        stop_deadline_ = std::chrono::steady_clock::now() + std::chrono::seconds(2);
        boost::system::error_code ignored;
        acceptor_.close(ignored);
        std::vector<std::shared_ptr<Session>> open;
        for (const auto& [id, s] : sessions_) open.push_back(s);
        for (const auto& s : open) s->close_after_flush();
        maybe_stop();
    }

    void maybe_stop() {
        if (!stopping_) return;
        for (const auto& [id, s] : sessions_) {
            if (!s->idle()) return;
        }
        io_.stop();
    }

    const FederationConfig& cfg_;
    const ServerOptions& opts_;
    asio::io_context io_;
    tcp::acceptor acceptor_;
    asio::steady_timer timer_;
    SteadyClock clock_;
    FileCheckpointStore store_;
    std::unique_ptr<Coordinator> coordinator_;
    std::map<ConnId, std::shared_ptr<Session>> sessions_;
    ConnId next_id_ = 1;
    bool stopping_ = false;
    std::chrono::steady_clock::time_point stop_deadline_;
    std::exception_ptr failure_;
};

void Session::read() {
    socket_.async_read_some(asio::buffer(buf_), [self = shared_from_this()](boost::system::error_code ec,
                                                                             std::size_t n) {
        if (ec) {
            self->close_now();
            return;
        }
        self->decoder_.feed(std::span<const std::uint8_t>(self->buf_.data(), n));
        try {
            while (auto msg = self->decoder_.next()) {
                if (self->closed_) return;
                self->server_.message(self->id_, *msg);
            }
        } catch (const Error& e) {
            std::cerr << "dropping connection " << self->id_ << ": " << e.what() << "\n";
            self->close_now();
            return;
        }
        if (!self->closed_) self->read();
    });
}

void Session::send(const Bytes& frame) {
    if (closed_ || closing_) return;
    writes_.push_back(frame);
    if (writes_.size() == 1) write();
}

void Session::write() {
    asio::async_write(socket_, asio::buffer(writes_.front()),
                      [self = shared_from_this()](boost::system::error_code ec, std::size_t) {
                          if (ec) {
                              self->writes_.clear();
                              self->close_now();
                              return;
                          }
                          self->writes_.pop_front();
                          if (!self->writes_.empty()) {
                              self->write();
                          } else if (self->closing_) {
                              self->close_now();
                          } else {
                              self->server_.flushed();
                          }
                      });
}

void Session::close_after_flush() {
    closing_ = true;
    if (writes_.empty()) close_now();
}

void Session::close_now() {
    if (closed_) return;
    closed_ = true;
    writes_.clear();
    boost::system::error_code ignored;
    socket_.shutdown(tcp::socket::shutdown_both, ignored);
    socket_.close(ignored);
    server_.disconnected(id_);
}

}  // namespace

ExperimentReport run_experiment(const FederationConfig& cfg, const ServerOptions& opts) {
    cfg.validate();
    Server server(cfg, opts);
    return server.run();
}

}  // namespace fedrun
