#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "apsim/cost_model.hpp"
#include "apsim/domain.hpp"

namespace apsim {

// Geometric bucket edges: bucket 0 holds exactly 0, bucket k >= 1 holds
// [edge(k), edge(k + 1)). With factor 2 the edges are 1, 2, 4, 8, ...
class BucketEdges {
public:
    BucketEdges(double factor, TokenCount max_value);

    int bucket(TokenCount x) const;
    TokenCount lower(int b) const { return edges_[static_cast<size_t>(b)]; }
    // Largest value that still maps to bucket b.
    TokenCount upper(int b) const;
    int count() const { return static_cast<int>(edges_.size()); }
    double factor() const { return factor_; }

private:
    double factor_;
    std::vector<TokenCount> edges_;  // edges_[0] == 0, edges_[1] == 1
};

struct ProfileTableOptions {
    double bucket_factor = 2.0;
    double ema_alpha = 0.3;
    TokenCount default_budget = 512;
    TokenCount max_plen = 32768;
    TokenCount max_ctx = 1 << 20;
    TokenCount max_dnum = 4096;
};

// Runtime latency table keyed by (plen, ctx, dnum) buckets. Each occupied
// bucket keeps an EMA of observed latency, an EMA of the observed prefill
// length (used as the bucket's representative plen when interpolating the
// prefill budget), and a sample count. Storage is a dense array; the table is
// owned by one instance and is not thread-safe.
class ProfileTable {
public:
    struct Bucket {
        double ema_ms = 0.0;
        double rep_plen = 0.0;
        std::uint32_t count = 0;
    };
    struct Key {
        int plen = 0;
        int ctx = 0;
        int dnum = 0;
        friend bool operator==(const Key&, const Key&) = default;
    };

    explicit ProfileTable(ProfileTableOptions options = {});

    void record(TokenCount plen, double ctx, TokenCount dnum, double time_ms);
    std::optional<double> lookup(TokenCount plen, double ctx, TokenCount dnum) const;
    TokenCount max_prefill_allowed(double slo_ms, double ctx, TokenCount dnum) const;

    // Fill every bucket from the cost model, evaluated at the bucket's lower
    // plen edge and its largest ctx and dnum (an upper bound on the bucket's
    // decode cost).
    void seed_from(const HardwareProfile& hw);

    Key key(TokenCount plen, double ctx, TokenCount dnum) const;
    const Bucket* find(const Key& k) const;
    // Conservative neighbour estimate for an unoccupied key (no exact hit).
    std::optional<double> neighbour_estimate(const Key& k) const;

    std::size_t occupied() const { return occupied_.size(); }
    std::uint64_t version() const { return version_; }
    const ProfileTableOptions& options() const { return options_; }
    const BucketEdges& plen_edges() const { return plen_edges_; }
    const BucketEdges& ctx_edges() const { return ctx_edges_; }
    const BucketEdges& dnum_edges() const { return dnum_edges_; }

    // CSV: plen_bucket,ctx_bucket,dnum_bucket,ema_ms,rep_plen,count
    void dump_csv(std::ostream& out) const;
    void load_csv(std::istream& in);

private:
    std::size_t index(const Key& k) const;
    Bucket& slot(const Key& k);

    ProfileTableOptions options_;
    BucketEdges plen_edges_;
    BucketEdges ctx_edges_;
    BucketEdges dnum_edges_;
    std::vector<Bucket> buckets_;
    std::vector<std::size_t> occupied_;
    std::uint64_t version_ = 0;
};

}  // namespace apsim
