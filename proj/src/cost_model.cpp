#include "apsim/cost_model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "apsim/rng.hpp"

namespace apsim {

void HardwareProfile::validate() const {
    const std::array<std::pair<const char*, double>, 8> rates{{
        {"flops_per_ms", flops_per_ms},
        {"mem_bw_bytes_per_ms", mem_bw_bytes_per_ms},
        {"weight_bytes", weight_bytes},
        {"kv_bytes_per_token", kv_bytes_per_token},
        {"link_bw_bytes_per_ms", link_bw_bytes_per_ms},
        {"c_lin", c_lin},
        {"c_attn", c_attn},
        {"hbm_capacity_tokens", static_cast<double>(hbm_capacity_tokens)},
    }};
    for (const auto& [name, v] : rates)
        if (!(v > 0.0)) throw Error(std::string("hardware.") + name + " must be > 0");
    if (link_latency_ms < 0.0) throw Error("hardware.link_latency_ms must be >= 0");
    if (fixed_overhead_ms < 0.0) throw Error("hardware.fixed_overhead_ms must be >= 0");
    if (noise_sigma < 0.0) throw Error("hardware.noise_sigma must be >= 0");
}

double compute_time_ms(const BatchShape& s, const HardwareProfile& hw) {
    const double plen = static_cast<double>(s.plen);
    const double tokens = plen + static_cast<double>(s.dnum);
    const double attn = s.prefill_ctx_sum + plen * plen / 2.0;
    return (hw.c_lin * tokens + hw.c_attn * attn) / hw.flops_per_ms;
}

double memory_time_ms(const BatchShape& s, const HardwareProfile& hw) {
    const double kv_tokens = static_cast<double>(s.dnum) * s.ctx + static_cast<double>(s.plen);
    return (hw.weight_bytes + hw.kv_bytes_per_token * kv_tokens) / hw.mem_bw_bytes_per_ms;
}

double batch_latency(const BatchShape& s, const HardwareProfile& hw) {
    return std::max(compute_time_ms(s, hw), memory_time_ms(s, hw)) + hw.fixed_overhead_ms;
}

double noisy_batch_latency(const BatchShape& s, const HardwareProfile& hw,
                           std::mt19937_64& rng) {
    const double base = batch_latency(s, hw);
    if (hw.noise_sigma <= 0.0) return base;
    const double z = standard_normal(rng);
    const double sigma = hw.noise_sigma;
    return base * std::exp(sigma * z - 0.5 * sigma * sigma);
}

double transfer_time(TokenCount tokens, const HardwareProfile& hw) {
    if (tokens <= 0) return 0.0;
    return hw.link_latency_ms +
           static_cast<double>(tokens) * hw.kv_bytes_per_token / hw.link_bw_bytes_per_ms;
}

namespace {

// Unknowns: a = c_lin/flops, b = c_attn/flops, w = weight/bw, k = kv/bw, o.
constexpr int kParams = 5;
constexpr std::array<const char*, kParams> kParamNames{
    "c_lin", "c_attn", "weight_bytes", "mem_bw_bytes_per_ms", "fixed_overhead_ms"};

Eigen::RowVectorXd design_row(const BatchShape& s, bool compute_regime) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(kParams);
    const double plen = static_cast<double>(s.plen);
    if (compute_regime) {
        row(0) = plen + static_cast<double>(s.dnum);
        row(1) = s.prefill_ctx_sum + plen * plen / 2.0;
    } else {
        row(2) = 1.0;
        row(3) = static_cast<double>(s.dnum) * s.ctx + plen;
    }
    row(4) = 1.0;
    return row;
}

}  // namespace

CalibrationResult calibrate(const std::vector<CalibrationTarget>& targets,
                            const HardwareProfile& base) {
    if (targets.size() < 4) throw Error("calibrate: need at least 4 targets");
    for (const auto& t : targets)
        if (t.shape.empty() || !(t.latency_ms > 0.0))
            throw Error("calibrate: degenerate target (empty shape or latency <= 0)");

    const auto n = static_cast<Eigen::Index>(targets.size());
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = targets[static_cast<size_t>(i)].latency_ms;

    // Initial regime guess under the base profile.
    std::vector<bool> compute(targets.size());
    for (size_t i = 0; i < targets.size(); ++i)
        compute[i] = compute_time_ms(targets[i].shape, base) >=
                     memory_time_ms(targets[i].shape, base);

    Eigen::VectorXd x = Eigen::VectorXd::Zero(kParams);
    int iterations = 0;
    for (; iterations < 50; ++iterations) {
        Eigen::MatrixXd a(n, kParams);
        for (Eigen::Index i = 0; i < n; ++i)
            a.row(i) = design_row(targets[static_cast<size_t>(i)].shape,
                                  compute[static_cast<size_t>(i)]);
        // Column scaling keeps the rank test meaningful across magnitudes.
        Eigen::VectorXd scale = a.colwise().norm().transpose();
        for (int j = 0; j < kParams; ++j)
            if (scale(j) == 0.0) scale(j) = 1.0;
        const Eigen::MatrixXd scaled = a * scale.cwiseInverse().asDiagonal();
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
        qr.setThreshold(1e-10);
        if (qr.rank() < kParams) {
            Eigen::FullPivLU<Eigen::MatrixXd> lu(scaled);
            lu.setThreshold(1e-10);
            const Eigen::MatrixXd null = lu.kernel();
            std::ostringstream msg;
            msg << "calibrate: singular fit; unidentifiable directions:";
            for (Eigen::Index c = 0; c < null.cols(); ++c) {
                msg << " {";
                bool first = true;
                for (int j = 0; j < kParams; ++j) {
                    if (std::abs(null(j, c)) > 1e-8) {
                        msg << (first ? "" : ", ") << kParamNames[static_cast<size_t>(j)];
                        first = false;
                    }
                }
                msg << "}";
            }
            throw Error(msg.str());
        }
        x = qr.solve(y).cwiseQuotient(scale);

        bool changed = false;
        for (size_t i = 0; i < targets.size(); ++i) {
            const auto& s = targets[i].shape;
            const double c = design_row(s, true).dot(x) - x(4);
            const double m = design_row(s, false).dot(x) - x(4);
            const bool now_compute = c >= m;
            if (now_compute != compute[i]) {
                compute[i] = now_compute;
                changed = true;
            }
        }
        if (!changed) break;
    }

    if (x(0) <= 0.0 || x(1) <= 0.0 || x(2) <= 0.0 || x(3) <= 0.0)
        throw Error("calibrate: fit produced non-positive rates; targets do not fit the roofline model");

    CalibrationResult out;
    out.iterations = iterations + 1;
    HardwareProfile p = base;
    p.c_lin = x(0) * base.flops_per_ms;
    p.c_attn = x(1) * base.flops_per_ms;
    p.mem_bw_bytes_per_ms = base.kv_bytes_per_token / x(3);
    p.weight_bytes = x(2) * p.mem_bw_bytes_per_ms;
    p.fixed_overhead_ms = std::max(0.0, x(4));
    out.profile = p;

    double sq = 0.0;
    for (const auto& t : targets) {
        const double r = batch_latency(t.shape, p) - t.latency_ms;
        out.residuals_ms.push_back(r);
        sq += r * r;
        out.max_abs_residual_ms = std::max(out.max_abs_residual_ms, std::abs(r));
    }
    out.rms_residual_ms = std::sqrt(sq / static_cast<double>(targets.size()));
    return out;
}

}  // namespace apsim
