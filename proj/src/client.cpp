#include "fedrun/client.hpp"

#include <boost/asio.hpp>
#include <array>
#include <chrono>
#include <iostream>
#include <thread>

#include "fedrun/clock.hpp"
#include "fedrun/errors.hpp"
#include "fedrun/server.hpp"
#include "fedrun/site.hpp"

namespace fedrun {

namespace asio = boost::asio;
using asio::ip::tcp;

int exit_code(ClientOutcome o) {
    switch (o) {
        case ClientOutcome::done: return 0;
        case ClientOutcome::aborted: return 1;
        case ClientOutcome::rejected: return 2;
        case ClientOutcome::stopped: return 1;
    }
    return 1;
}

namespace {

bool stop_requested(const std::atomic<bool>* stop) { return stop && stop->load(); }

// Sleeps in short slices so a stop request is noticed promptly.
void pause(double seconds, const std::atomic<bool>* stop) {
    const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
    while (!stop_requested(stop) && std::chrono::steady_clock::now() < until) {
        std::this_thread::sleep_for(std::min(std::chrono::duration<double>(0.05),
                                             std::chrono::duration<double>(until - std::chrono::steady_clock::now())));
    }
}

void send(tcp::socket& socket, const Message& msg) { asio::write(socket, asio::buffer(encode(msg))); }

}  // namespace

ClientOutcome run_client(const ClientConfig& ccfg, const FederationConfig& cfg, const std::atomic<bool>* stop) {
    ccfg.validate();
    TimingModel timing;
    timing.mode = ccfg.timing;
    timing.compute_multiplier = ccfg.compute_multiplier;
    SiteRuntime site(cfg, ccfg.site_name, timing);
    Backoff backoff(ccfg.reconnect_backoff);
    const auto [host, port] = split_address(ccfg.server_address);

    asio::io_context io;
    tcp::resolver resolver(io);
    while (!stop_requested(stop)) {
        tcp::socket socket(io);
        boost::system::error_code ec;
        const auto endpoints = resolver.resolve(host, std::to_string(port), ec);
        if (!ec) asio::connect(socket, endpoints, ec);
        if (ec) {
            const double delay = backoff.next_delay();
            std::cerr << ccfg.site_name << ": connect to " << ccfg.server_address << " failed (" << ec.message()
                      << "), retrying in " << delay << " s\n";
            pause(delay, stop);
            continue;
        }
        backoff.reset();
        socket.set_option(tcp::no_delay(true));
        std::cerr << ccfg.site_name << ": connected to " << ccfg.server_address << "\n";

        try {
            send(socket, site.join_message());
            FrameDecoder decoder;
            std::array<std::uint8_t, 64 * 1024> buf{};
            while (!stop_requested(stop)) {
                const std::size_t n = socket.read_some(asio::buffer(buf));
                decoder.feed(std::span<const std::uint8_t>(buf.data(), n));
                while (auto msg = decoder.next()) {
                    SiteReaction r;
                    try {
                        r = site.on_message(*msg);
                    } catch (const ConfigError& e) {
                        std::cerr << ccfg.site_name << ": " << e.what() << "\n";
                        return ClientOutcome::rejected;
                    }
                    for (const auto& reply : r.replies) send(socket, reply);
                    if (msg->kind() == MessageKind::task_assignment) {
                        std::cerr << ccfg.site_name << ": round " << msg->round << " submitted\n";
                    }
                    if (r.done) {
                        std::cerr << ccfg.site_name << ": experiment done\n";
                        return ClientOutcome::done;
                    }
                    if (r.aborted) {
                        std::cerr << ccfg.site_name << ": experiment aborted: " << r.abort_reason << "\n";
                        return ClientOutcome::aborted;
                    }
                }
            }
        } catch (const boost::system::system_error& e) {
            std::cerr << ccfg.site_name << ": connection lost (" << e.code().message() << ")\n";
        } catch (const ProtocolError& e) {
            std::cerr << ccfg.site_name << ": " << e.what() << "; reconnecting\n";
        }
        pause(backoff.next_delay(), stop);
    }
    return ClientOutcome::stopped;
}

}  // namespace fedrun
