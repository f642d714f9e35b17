#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "ntl/common.hpp"
#include "ntl/csv.hpp"

namespace ntl {

struct ScoredSample {
    std::string sample_id;
    std::string customer_id;
    double score = 0.0;  // probability of the NTL class
    bool truth_ntl = false;
};

struct Counts {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::int64_t total() const { return tp + fp + tn + fn; }
};

struct ClassMetrics {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct RocPoint {
    double threshold = 0.0, fpr = 0.0, tpr = 0.0;
};

struct MetricsReport {
    Counts counts;        // NTL treated as the positive class
    ClassMetrics ntl;
    ClassMetrics normal;
    std::vector<RocPoint> roc;
    double auc = 0.0;
    double threshold = 0.5;
};

// Predict NTL iff score > threshold (a score equal to the threshold counts
// as Normal).
inline Counts confusion(const std::vector<ScoredSample>& scored, double threshold = 0.5) {
    if (threshold < 0.0 || threshold > 1.0) throw config_error("threshold must lie in [0,1]");
    Counts c;
    for (const auto& s : scored) {
        const bool pred = s.score > threshold;
        if (pred && s.truth_ntl) ++c.tp;
        else if (pred && !s.truth_ntl) ++c.fp;
        else if (!pred && s.truth_ntl) ++c.fn;
        else ++c.tn;
    }
    return c;
}

// Precision/recall/F1 with every 0/0 ratio defined as 0.
inline ClassMetrics prf(const Counts& c) {
    ClassMetrics m;
    m.precision = (c.tp + c.fp) > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp)
                                    : 0.0;
    m.recall = (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn)
                                 : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                          : 0.0;
    return m;
}

inline Counts swap_classes(const Counts& c) { return Counts{c.tn, c.fn, c.tp, c.fp}; }

struct RocResult {
    std::vector<RocPoint> points;  // from (0,0) to (1,1), one per distinct score
    double auc = 0.0;
};

// Threshold sweep over every distinct score. Tied scores move together, so
// the trapezoidal area equals the rank statistic (ties counted 1/2).
inline RocResult roc_auc(const std::vector<ScoredSample>& scored) {
    std::int64_t pos = 0, neg = 0;
    for (const auto& s : scored) (s.truth_ntl ? pos : neg) += 1;
    if (pos == 0 || neg == 0)
        throw io_error("roc_auc needs at least one sample of each class");

    std::vector<std::pair<double, bool>> order(scored.size());
    for (std::size_t i = 0; i < scored.size(); ++i)
        order[i] = {scored[i].score, scored[i].truth_ntl};
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    RocResult out;
    out.points.push_back(RocPoint{order.front().first, 0.0, 0.0});
    std::int64_t tp = 0, fp = 0;
    double auc = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double score = order[i].first;
        std::int64_t dp = 0, dn = 0;
        while (i < order.size() && order[i].first == score) {
            (order[i].second ? dp : dn) += 1;
            ++i;
        }
        const double tpr0 = static_cast<double>(tp) / static_cast<double>(pos);
        const double fpr0 = static_cast<double>(fp) / static_cast<double>(neg);
        tp += dp;
        fp += dn;
        const double tpr1 = static_cast<double>(tp) / static_cast<double>(pos);
        const double fpr1 = static_cast<double>(fp) / static_cast<double>(neg);
        auc += (fpr1 - fpr0) * (tpr1 + tpr0) / 2.0;
        const double next_threshold = i < order.size() ? order[i].first : -1.0;
        out.points.push_back(RocPoint{next_threshold, fpr1, tpr1});
    }
    out.auc = auc;
    return out;
}

inline MetricsReport compute_metrics(const std::vector<ScoredSample>& scored,
                                     double threshold = 0.5) {
    MetricsReport r;
    r.threshold = threshold;
    r.counts = confusion(scored, threshold);
    r.ntl = prf(r.counts);
    r.normal = prf(swap_classes(r.counts));
    auto roc = roc_auc(scored);
    r.roc = std::move(roc.points);
    r.auc = roc.auc;
    return r;
}

// Majority vote over each customer's windows; ties predict NTL.
inline Counts per_customer_confusion(const std::vector<ScoredSample>& scored,
                                     double threshold = 0.5) {
    struct Tally {
        std::int64_t pred_ntl = 0, pred_normal = 0;
        bool truth_ntl = false;
    };
    std::map<std::string, Tally> tallies;
    for (const auto& s : scored) {
        auto& t = tallies[s.customer_id];
        (s.score > threshold ? t.pred_ntl : t.pred_normal) += 1;
        t.truth_ntl = s.truth_ntl;
    }
    Counts c;
    for (const auto& [id, t] : tallies) {
        const bool pred = t.pred_ntl >= t.pred_normal;
        if (pred && t.truth_ntl) ++c.tp;
        else if (pred && !t.truth_ntl) ++c.fp;
        else if (!pred && t.truth_ntl) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline constexpr const char* kRocCsvHeader = "threshold,fpr,tpr";

inline void write_roc_csv(const std::vector<RocPoint>& points, std::ostream& out) {
    out << kRocCsvHeader << '\n';
    for (const auto& p : points)
        out << format_double(p.threshold) << ',' << format_double(p.fpr) << ','
            << format_double(p.tpr) << '\n';
}

}  // namespace ntl
