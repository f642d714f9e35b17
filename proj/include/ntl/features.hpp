#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string_view>
#include <vector>

#include "ntl/common.hpp"
#include "ntl/ingest.hpp"

namespace ntl {

// Per-timestamp derived features. Any field may be missing when its inputs are.
struct FeatureRow {
    std::int64_t timestamp = 0;
    double load_rate = missing_value();          // apparent power / contracted power
    double voltage_deviation = missing_value();  // max relative shortfall below rated
    double voltage_ud = missing_value();         // unbalance degree over phase voltages
    double current_ud = missing_value();         // unbalance degree over phase currents
    double power_factor = missing_value();       // reported by the meter
    double p_norm = missing_value();             // active power / contracted power
    double calc_pf = missing_value();            // p_norm / load_rate, clamped to [0,1]
};

enum class Feature : std::uint8_t {
    LoadRate = 0,
    VoltageDeviation,
    VoltageUd,
    CurrentUd,
    PowerFactor,
    PNorm,
    CalcPf,
};

inline double feature_value(const FeatureRow& r, Feature f) {
    switch (f) {
        case Feature::LoadRate: return r.load_rate;
        case Feature::VoltageDeviation: return r.voltage_deviation;
        case Feature::VoltageUd: return r.voltage_ud;
        case Feature::CurrentUd: return r.current_ud;
        case Feature::PowerFactor: return r.power_factor;
        case Feature::PNorm: return r.p_norm;
        case Feature::CalcPf: return r.calc_pf;
    }
    return missing_value();
}

inline std::string_view feature_name(Feature f) {
    switch (f) {
        case Feature::LoadRate: return "load_rate";
        case Feature::VoltageDeviation: return "vd";
        case Feature::VoltageUd: return "v_ud";
        case Feature::CurrentUd: return "i_ud";
        case Feature::PowerFactor: return "pf";
        case Feature::PNorm: return "p_norm";
        case Feature::CalcPf: return "calc_pf";
    }
    return "?";
}

// Maximum relative shortfall of any present phase voltage below the rated
// voltage. Phases at or above rated contribute 0. Missing when all three
// phases are missing.
inline double voltage_deviation(double ua, double ub, double uc, double rated) {
    double best = missing_value();
    for (double v : {ua, ub, uc}) {
        if (is_missing(v)) continue;
        const double vd = v < rated ? (rated - v) / rated : 0.0;
        if (is_missing(best) || vd > best) best = vd;
    }
    return best;
}

// Mean absolute deviation of the three phase values from their mean,
// normalized by the mean. Missing when any phase is missing or the feed is
// fully dead (mean 0 carries no balance information).
inline double unbalance_degree(double sa, double sb, double sc) {
    if (is_missing(sa) || is_missing(sb) || is_missing(sc)) return missing_value();
    if (sa == sb && sb == sc) return sa > 0.0 ? 0.0 : missing_value();  // exactly balanced
    const double avg = (sa + sb + sc) / 3.0;
    if (!(avg > 0.0)) return missing_value();
    const double dev = (std::fabs(sa - avg) + std::fabs(sb - avg) + std::fabs(sc - avg)) / 3.0;
    return dev / avg;
}

// Three-phase apparent power sum over the contracted power (in VA).
inline double load_rate(const MeterReading& r, const CustomerMeta& meta) {
    if (is_missing(r.ua) || is_missing(r.ub) || is_missing(r.uc) || is_missing(r.ia) ||
        is_missing(r.ib) || is_missing(r.ic))
        return missing_value();
    return (r.ua * r.ia + r.ub * r.ib + r.uc * r.ic) / (meta.contracted_power * 1000.0);
}

inline FeatureRow featurize_reading(const MeterReading& r, const CustomerMeta& meta) {
    FeatureRow f;
    f.timestamp = r.timestamp;
    f.load_rate = load_rate(r, meta);
    f.voltage_deviation = voltage_deviation(r.ua, r.ub, r.uc, meta.rated_voltage);
    f.voltage_ud = unbalance_degree(r.ua, r.ub, r.uc);
    f.current_ud = unbalance_degree(r.ia, r.ib, r.ic);
    f.power_factor = r.power_factor;
    f.p_norm = is_missing(r.active_power) ? missing_value()
                                          : r.active_power / meta.contracted_power;
    if (!is_missing(f.p_norm) && !is_missing(f.load_rate) && f.load_rate >= 1e-6)
        f.calc_pf = clamp01(f.p_norm / f.load_rate);
    return f;
}

// One FeatureRow per reading; no row is ever dropped.
inline std::vector<FeatureRow> featurize_window(const Window& window, const CustomerMeta& meta) {
    std::vector<FeatureRow> rows;
    rows.reserve(window.readings.size());
    for (const auto& r : window.readings) rows.push_back(featurize_reading(r, meta));
    return rows;
}

inline constexpr const char* kFeatureDumpHeader =
    "customer_id,timestamp,load_rate,vd,v_ud,i_ud,pf,p_norm,calc_pf";

inline void dump_features(const std::string& customer_id, const std::vector<FeatureRow>& rows,
                          std::ostream& out) {
    for (const auto& f : rows) {
        out << customer_id << ',' << format_iso8601_utc(f.timestamp) << ','
            << format_double(f.load_rate) << ',' << format_double(f.voltage_deviation) << ','
            << format_double(f.voltage_ud) << ',' << format_double(f.current_ud) << ','
            << format_double(f.power_factor) << ',' << format_double(f.p_norm) << ','
            << format_double(f.calc_pf) << '\n';
    }
}

}  // namespace ntl
