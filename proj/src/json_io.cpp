#include "json_io.hpp"

namespace fedrun::detail {

json params_to_json(const ParameterVector& p) {
    json arr = json::array();
    for (double v : p.values()) arr.push_back(v);
    return arr;
}

json algorithm_to_json(const AlgorithmConfig& a) {
    return json{{"kind", to_string(a.kind)},
                {"prox_mu", a.prox_mu},
                {"ditto_lambda", a.ditto_lambda},
                {"weighting", to_string(a.weighting)}};
}

json eval_to_json(const EvalScore& s) {
    return json{{"mean", s.mean}, {"std", s.std}, {"metric", to_string(s.metric)}};
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace fedrun::detail
