#include "apsim/domain.hpp"

#include <algorithm>
#include <cmath>

namespace apsim {

void Request::validate() const {
    if (prompt_len < 1) throw Error("request " + std::to_string(id) + ": prompt_len < 1");
    if (decode_len < 1) throw Error("request " + std::to_string(id) + ": decode_len < 1");
    if (predicted_decode < 1)
        throw Error("request " + std::to_string(id) + ": predicted_decode < 1");
    if (!(slo_tbt_ms > 0.0)) throw Error("request " + std::to_string(id) + ": slo_tbt <= 0");
}

TokenCount split_point(double phi, TokenCount len) {
    if (!(phi >= 0.0 && phi <= 1.0)) throw Error("split ratio outside [0, 1]");
    const double x = phi * static_cast<double>(len);
    const double nearest = std::round(x);
    // phi = k / len is rarely exact in binary; treat near-integers as integral.
    const double tol = 1e-9 * std::max<double>(1.0, static_cast<double>(len));
    const double s = std::abs(x - nearest) <= tol ? nearest : std::ceil(x);
    return std::clamp<TokenCount>(static_cast<TokenCount>(s), 0, len);
}

namespace {

MicroRequest make_micro(RequestId id, Role role, TokenSpan span, TokenCount prompt) {
    MicroRequest m;
    m.parent = id;
    m.role = role;
    m.span = span;
    const TokenCount prefill_end = std::min(span.end, prompt + 1);
    m.prefill_tokens = std::max<TokenCount>(0, prefill_end - span.begin);
    m.decode_tokens = span.size() - m.prefill_tokens;
    return m;
}

}  // namespace

std::pair<MicroRequest, MicroRequest> split_at(RequestId id, TokenCount prompt,
                                               TokenCount len, TokenCount s) {
    if (s < 0 || s > len) throw Error("split point outside [0, L]");
    MicroRequest alpha = make_micro(id, Role::kAlpha, {1, s + 1}, prompt);
    MicroRequest beta = make_micro(id, Role::kBeta, {s + 1, len + 1}, prompt);
    return {alpha, beta};
}

std::pair<MicroRequest, MicroRequest> split_request(const PlanningView& r, double phi) {
    const TokenCount len = r.total_len();
    return split_at(r.id, r.prompt_len, len, split_point(phi, len));
}

std::pair<MicroRequest, MicroRequest> split_request(const Request& r, double phi) {
    return split_request(r.planning(), phi);
}

std::string to_string(Role role) { return role == Role::kAlpha ? "alpha" : "beta"; }

}  // namespace apsim
