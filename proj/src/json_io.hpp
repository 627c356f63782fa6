// Internal JSON helpers shared by the protocol, config, checkpoint and report
// code. Not installed.
#ifndef FEDRUN_SRC_JSON_IO_HPP_
#define FEDRUN_SRC_JSON_IO_HPP_

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "fedrun/aggregation.hpp"
#include "fedrun/params.hpp"

namespace fedrun::detail {

using json = nlohmann::json;

/// Throws E naming the first key of `obj` that is not in `allowed`.
template <class E>
void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) ok = ok || it.key() == k;
        if (!ok) throw E("unknown key '" + it.key() + "' in " + where);
    }
}

template <class E>
const json& require(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object()) throw E(where + " must be an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw E("missing key '" + std::string(key) + "' in " + where);
    return *it;
}

template <class E>
double number(const json& v, const std::string& what) {
    if (!v.is_number()) throw E(what + " must be a number");
    return v.get<double>();
}

template <class E>
std::uint64_t unsigned_int(const json& v, const std::string& what) {
    if (!v.is_number_unsigned()) throw E(what + " must be a non-negative integer");
    return v.get<std::uint64_t>();
}

template <class E>
std::string string(const json& v, const std::string& what) {
    if (!v.is_string()) throw E(what + " must be a string");
    return v.get<std::string>();
}

template <class E>
bool boolean(const json& v, const std::string& what) {
    if (!v.is_boolean()) throw E(what + " must be a boolean");
    return v.get<bool>();
}

json params_to_json(const ParameterVector& p);

template <class E>
ParameterVector params_from_json(const json& v, const std::string& what) {
    if (!v.is_array() || v.empty()) throw E(what + " must be a non-empty number array");
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& x : v) out.push_back(number<E>(x, what + "[]"));
    try {
        return ParameterVector(std::move(out));
    } catch (const std::exception& e) {
        throw E(what + ": " + e.what());
    }
}

json algorithm_to_json(const AlgorithmConfig& a);

template <class E>
AlgorithmConfig algorithm_from_json(const json& v, const std::string& where) {
    reject_unknown_keys<E>(v, {"kind", "prox_mu", "ditto_lambda", "weighting"}, where);
    AlgorithmConfig a;
    try {
        a.kind = algorithm_from_string(string<E>(require<E>(v, "kind", where), where + ".kind"));
        if (v.contains("prox_mu")) a.prox_mu = number<E>(v["prox_mu"], where + ".prox_mu");
        if (v.contains("ditto_lambda")) a.ditto_lambda = number<E>(v["ditto_lambda"], where + ".ditto_lambda");
        if (v.contains("weighting")) {
            a.weighting = weighting_from_string(string<E>(v["weighting"], where + ".weighting"));
        }
        a.validate();
    } catch (const E&) {
        throw;
    } catch (const std::exception& e) {
        throw E(where + ": " + e.what());
    }
    return a;
}

json eval_to_json(const EvalScore& s);

template <class E>
EvalScore eval_from_json(const json& v, const std::string& where) {
    reject_unknown_keys<E>(v, {"mean", "std", "metric"}, where);
    EvalScore s;
    try {
        s.mean = number<E>(require<E>(v, "mean", where), where + ".mean");
        s.std = number<E>(require<E>(v, "std", where), where + ".std");
        s.metric = metric_from_string(string<E>(require<E>(v, "metric", where), where + ".metric"));
        s.validate();
    } catch (const E&) {
        throw;
    } catch (const std::exception& e) {
        throw E(where + ": " + e.what());
    }
    return s;
}

/// FNV-1a, 64 bit.
std::uint64_t fnv1a(const std::string& s);

}  // namespace fedrun::detail

#endif  // FEDRUN_SRC_JSON_IO_HPP_
