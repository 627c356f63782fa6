#ifndef FEDRUN_CLIENT_HPP_
#define FEDRUN_CLIENT_HPP_

#include <atomic>

#include "fedrun/config.hpp"

namespace fedrun {

enum class ClientOutcome { done, aborted, rejected, stopped };

int exit_code(ClientOutcome o);

/// Site loop: connect with capped exponential backoff (never giving up),
/// join, train on every task, submit, and re-enter the connect loop on any
/// connection loss. Returns once the aggregator sends experiment_done or
/// abort, rejects the join, or `stop` becomes true.
ClientOutcome run_client(const ClientConfig& ccfg, const FederationConfig& cfg,
                         const std::atomic<bool>* stop = nullptr);

}  // namespace fedrun

#endif  // FEDRUN_CLIENT_HPP_
