#include "apsim/profile_table.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace apsim {

BucketEdges::BucketEdges(double factor, TokenCount max_value) : factor_(factor) {
    if (!(factor > 1.0)) throw Error("bucket factor must be > 1");
    edges_ = {0, 1};
    while (edges_.back() <= max_value) {
        const TokenCount e = edges_.back();
        const auto next = static_cast<TokenCount>(std::ceil(static_cast<double>(e) * factor));
        edges_.push_back(std::max(e + 1, next));
    }
    // The last edge only bounds the previous bucket.
    edges_.pop_back();
}

int BucketEdges::bucket(TokenCount x) const {
    if (x <= 0) return 0;
    const auto it = std::upper_bound(edges_.begin(), edges_.end(), x);
    return static_cast<int>(it - edges_.begin()) - 1;
}

TokenCount BucketEdges::upper(int b) const {
    if (b == 0) return 0;
    const auto next = static_cast<size_t>(b) + 1;
    if (next < edges_.size()) return edges_[next] - 1;
    const TokenCount e = edges_.back();
    return std::max(e, static_cast<TokenCount>(std::ceil(static_cast<double>(e) * factor_)) - 1);
}

ProfileTable::ProfileTable(ProfileTableOptions options)
    : options_(options),
      plen_edges_(options.bucket_factor, options.max_plen),
      ctx_edges_(options.bucket_factor, options.max_ctx),
      dnum_edges_(options.bucket_factor, options.max_dnum) {
    if (!(options_.ema_alpha > 0.0 && options_.ema_alpha <= 1.0))
        throw Error("profile_table.ema_alpha must be in (0, 1]");
    if (options_.default_budget < 0) throw Error("profile_table.default_budget must be >= 0");
    buckets_.resize(static_cast<size_t>(plen_edges_.count()) *
                    static_cast<size_t>(ctx_edges_.count()) *
                    static_cast<size_t>(dnum_edges_.count()));
}

ProfileTable::Key ProfileTable::key(TokenCount plen, double ctx, TokenCount dnum) const {
    return {plen_edges_.bucket(plen),
            ctx_edges_.bucket(static_cast<TokenCount>(std::floor(std::max(0.0, ctx)))),
            dnum_edges_.bucket(dnum)};
}

std::size_t ProfileTable::index(const Key& k) const {
    return (static_cast<size_t>(k.plen) * static_cast<size_t>(ctx_edges_.count()) +
            static_cast<size_t>(k.ctx)) *
               static_cast<size_t>(dnum_edges_.count()) +
           static_cast<size_t>(k.dnum);
}

ProfileTable::Bucket& ProfileTable::slot(const Key& k) { return buckets_[index(k)]; }

const ProfileTable::Bucket* ProfileTable::find(const Key& k) const {
    const Bucket& b = buckets_[index(k)];
    return b.count > 0 ? &b : nullptr;
}

void ProfileTable::record(TokenCount plen, double ctx, TokenCount dnum, double time_ms) {
    if (!(time_ms > 0.0)) throw Error("profile_table.record: time must be > 0");
    const Key k = key(plen, ctx, dnum);
    Bucket& b = slot(k);
    if (b.count == 0) {
        b.ema_ms = time_ms;
        b.rep_plen = static_cast<double>(plen);
        occupied_.push_back(index(k));
    } else {
        const double a = options_.ema_alpha;
        b.ema_ms = a * time_ms + (1.0 - a) * b.ema_ms;
        b.rep_plen = a * static_cast<double>(plen) + (1.0 - a) * b.rep_plen;
    }
    ++b.count;
    ++version_;
}

std::optional<double> ProfileTable::neighbour_estimate(const Key& k) const {
    std::optional<double> best;
    const auto nc = static_cast<size_t>(ctx_edges_.count());
    const auto nd = static_cast<size_t>(dnum_edges_.count());
    for (const std::size_t idx : occupied_) {
        const int pb = static_cast<int>(idx / (nc * nd));
        const int cb = static_cast<int>((idx / nd) % nc);
        const int db = static_cast<int>(idx % nd);
        if (pb > k.plen || cb < k.ctx || db < k.dnum) continue;
        const double scaled =
            buckets_[idx].ema_ms * std::pow(plen_edges_.factor(), k.plen - pb);
        if (!best || scaled > *best) best = scaled;
    }
    return best;
}

std::optional<double> ProfileTable::lookup(TokenCount plen, double ctx, TokenCount dnum) const {
    const Key k = key(plen, ctx, dnum);
    if (const Bucket* b = find(k)) return b->ema_ms;
    return neighbour_estimate(k);
}

TokenCount ProfileTable::max_prefill_allowed(double slo_ms, double ctx, TokenCount dnum) const {
    if (!(slo_ms > 0.0)) throw Error("max_prefill_allowed: slo must be > 0");
    struct Point {
        double plen;
        double ms;
    };
    Point points[64];
    int n = 0;
    Key k = key(0, ctx, dnum);
    // Without decodes the plen = 0 point is an empty batch, not a cost.
    for (int pb = dnum > 0 ? 0 : 1; pb < plen_edges_.count() && n < 64; ++pb) {
        k.plen = pb;
        if (const Bucket* b = find(k)) {
            points[n++] = {pb == 0 ? 0.0 : std::max(b->rep_plen, 1.0), b->ema_ms};
        } else if (auto est = neighbour_estimate(k)) {
            points[n++] = {static_cast<double>(plen_edges_.lower(pb)), *est};
        }
    }
    if (n == 0) return options_.default_budget;
    if (points[0].plen == 0.0 && points[0].ms > slo_ms) return 0;

    for (int i = n - 1; i >= 0; --i) {
        if (points[i].ms > slo_ms) continue;
        if (i == n - 1) return static_cast<TokenCount>(std::floor(points[i].plen));
        // Chord between the last admissible point and the first violating one.
        const Point lo = points[i];
        const Point hi = points[i + 1];
        double m = lo.plen;
        if (hi.ms > lo.ms && hi.plen > lo.plen)
            m = lo.plen + (slo_ms - lo.ms) / (hi.ms - lo.ms) * (hi.plen - lo.plen);
        m = std::min(m, hi.plen - 1.0);
        return std::max<TokenCount>(0, static_cast<TokenCount>(std::floor(m)));
    }
    return 0;
}

void ProfileTable::seed_from(const HardwareProfile& hw) {
    for (int pb = 0; pb < plen_edges_.count(); ++pb) {
        for (int cb = 0; cb < ctx_edges_.count(); ++cb) {
            for (int db = 0; db < dnum_edges_.count(); ++db) {
                BatchShape s;
                s.plen = plen_edges_.lower(pb);
                s.dnum = dnum_edges_.upper(db);
                s.ctx = s.dnum > 0 ? static_cast<double>(ctx_edges_.upper(cb)) : 0.0;
                if (s.empty()) continue;
                const Key k{pb, cb, db};
                Bucket& b = slot(k);
                if (b.count == 0) occupied_.push_back(index(k));
                b.ema_ms = batch_latency(s, hw);
                b.rep_plen = static_cast<double>(s.plen);
                b.count = 1;
            }
        }
    }
    ++version_;
}

void ProfileTable::dump_csv(std::ostream& out) const {
    out << "plen_bucket,ctx_bucket,dnum_bucket,ema_ms,rep_plen,count\n";
    std::vector<std::size_t> order = occupied_;
    std::sort(order.begin(), order.end());
    const auto nc = static_cast<size_t>(ctx_edges_.count());
    const auto nd = static_cast<size_t>(dnum_edges_.count());
    char buf[160];
    for (const std::size_t idx : order) {
        const Bucket& b = buckets_[idx];
        std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g,%.17g,%u\n", idx / (nc * nd),
                      (idx / nd) % nc, idx % nd, b.ema_ms, b.rep_plen, b.count);
        out << buf;
    }
}

void ProfileTable::load_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error("profile table csv: missing header");
    std::vector<Bucket> fresh(buckets_.size());
    std::vector<std::size_t> occ;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        Key k;
        Bucket b;
        char c1, c2, c3, c4, c5;
        if (!(row >> k.plen >> c1 >> k.ctx >> c2 >> k.dnum >> c3 >> b.ema_ms >> c4 >>
              b.rep_plen >> c5 >> b.count) ||
            c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',' || c5 != ',')
            throw Error("profile table csv: malformed row at line " + std::to_string(line_no));
        if (k.plen < 0 || k.plen >= plen_edges_.count() || k.ctx < 0 ||
            k.ctx >= ctx_edges_.count() || k.dnum < 0 || k.dnum >= dnum_edges_.count())
            throw Error("profile table csv: bucket out of range at line " +
                        std::to_string(line_no));
        if (!(b.ema_ms > 0.0) || b.count == 0)
            throw Error("profile table csv: non-positive latency or count at line " +
                        std::to_string(line_no));
        const std::size_t idx = index(k);
        if (fresh[idx].count == 0) occ.push_back(idx);
        fresh[idx] = b;
    }
    buckets_ = std::move(fresh);
    occupied_ = std::move(occ);
    ++version_;
}

}  // namespace apsim
