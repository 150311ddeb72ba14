#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace apsim {

using RequestId = std::uint64_t;
using InstanceId = std::uint32_t;
using TokenCount = std::int64_t;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// What a scheduler is allowed to see about a request. The actual decode
// length never appears here.
struct PlanningView {
    RequestId id = 0;
    double arrival_ms = 0.0;
    TokenCount prompt_len = 0;
    TokenCount predicted_decode = 0;
    double slo_tbt_ms = 100.0;

    TokenCount total_len() const { return prompt_len + predicted_decode; }
};

struct Request {
    RequestId id = 0;
    double arrival_ms = 0.0;
    TokenCount prompt_len = 1;
    TokenCount decode_len = 1;        // actual, hidden from schedulers
    TokenCount predicted_decode = 1;  // what schedulers plan with
    double slo_tbt_ms = 100.0;

    TokenCount planned_len() const { return prompt_len + predicted_decode; }
    TokenCount actual_len() const { return prompt_len + decode_len; }

    PlanningView planning() const {
        return {id, arrival_ms, prompt_len, predicted_decode, slo_tbt_ms};
    }

    // Throws Error when a field violates P >= 1, D >= 1, D^ >= 1 or slo > 0.
    void validate() const;
};

enum class Role : std::uint8_t { kAlpha, kBeta };

// Half-open token range [begin, end) over 1-based token positions, so the
// "tokens 1..s" is {1, s + 1}.
struct TokenSpan {
    TokenCount begin = 1;
    TokenCount end = 1;

    TokenCount size() const { return end - begin; }
    bool empty() const { return end <= begin; }
    friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct MicroRequest {
    RequestId parent = 0;
    Role role = Role::kAlpha;
    TokenSpan span;
    TokenCount prefill_tokens = 0;
    TokenCount decode_tokens = 0;
    std::optional<InstanceId> instance;

    bool empty() const { return span.empty(); }
    // Tokens of the request already resident before this span starts.
    TokenCount prefix_tokens() const { return span.begin - 1; }
};

struct SplitPlan {
    double phi = 0.0;
    TokenCount split = 0;  // s: alpha owns tokens 1..s
    InstanceId alpha_instance = 0;
    InstanceId beta_instance = 0;
};

// s = ceil(phi * len), with exactly integral products (up to rounding noise)
// mapped to themselves.
TokenCount split_point(double phi, TokenCount len);

// Split a request of prompt length `prompt` and total length `len` at s.
std::pair<MicroRequest, MicroRequest> split_at(RequestId id, TokenCount prompt,
                                               TokenCount len, TokenCount s);

// Planning-view split: uses P + D^.
std::pair<MicroRequest, MicroRequest> split_request(const PlanningView& r, double phi);
std::pair<MicroRequest, MicroRequest> split_request(const Request& r, double phi);

std::string to_string(Role role);

}  // namespace apsim
