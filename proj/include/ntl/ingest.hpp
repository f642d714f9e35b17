#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ntl/common.hpp"
#include "ntl/csv.hpp"

namespace ntl {

inline constexpr std::int64_t kSecondsPerHour = 3600;
inline constexpr std::int64_t kSecondsPerDay = 86400;

// One smart-meter report. Any field other than the timestamp may be missing.
struct MeterReading {
    std::int64_t timestamp = 0;  // UTC seconds, snapped to the hour at ingest
    double ua = missing_value();
    double ub = missing_value();
    double uc = missing_value();
    double ia = missing_value();
    double ib = missing_value();
    double ic = missing_value();
    double active_power = missing_value();  // kW
    double power_factor = missing_value();  // [0,1]
};

struct CustomerMeta {
    std::string customer_id;
    double rated_voltage = 0.0;     // volts
    double contracted_power = 0.0;  // kVA
    Label label = Label::Unlabeled;
};

struct CustomerSeries {
    CustomerMeta meta;
    std::vector<MeterReading> readings;  // strictly increasing timestamps
};

struct Window {
    std::string customer_id;
    std::int64_t start = 0;
    std::int64_t end = 0;  // exclusive; end - start == window length
    std::span<const MeterReading> readings;
    int expected_count = 0;  // window length in hours
};

struct Fleet {
    std::vector<CustomerSeries> series;  // sorted by customer_id
    std::vector<std::string> diagnostics;
};

inline Label parse_label(std::string_view s) {
    std::string low;
    low.reserve(s.size());
    for (char c : s) low.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c));
    if (low == "normal") return Label::Normal;
    if (low == "ntl") return Label::Ntl;
    if (low == "unlabeled") return Label::Unlabeled;
    throw io_error("unknown label '" + std::string(s) + "' (expected normal|ntl|unlabeled)");
}

inline constexpr const char* kTelemetryHeader =
    "customer_id,timestamp,ua,ub,uc,ia,ib,ic,active_power,power_factor";
inline constexpr const char* kMetaHeader = "customer_id,rated_voltage,contracted_power,label";

namespace detail {

inline void check_header(std::istream& in, const char* expected, const char* what) {
    std::string line;
    if (!read_line(in, line)) throw io_error(std::string(what) + ": empty stream");
    auto fields = split_csv(line);
    auto want = split_csv(expected);
    if (fields != want)
        throw io_error(std::string(what) + ": bad header '" + line + "' (expected '" + expected +
                       "')");
}

// Parses a measurement cell. Values that violate the stated bound are treated
// like malformed cells: the field goes missing and a diagnostic is recorded.
inline double measurement_cell(std::string_view cell, bool nonneg, bool unit_interval,
                               const char* field, std::size_t row, std::vector<std::string>& diag) {
    if (cell.empty()) return missing_value();
    auto v = parse_double(cell);
    if (!v) {
        diag.push_back("row " + std::to_string(row) + ": malformed " + field + " '" +
                       std::string(cell) + "' treated as missing");
        return missing_value();
    }
    if ((nonneg && *v < 0.0) || (unit_interval && (*v < 0.0 || *v > 1.0))) {
        diag.push_back("row " + std::to_string(row) + ": out-of-range " + field + " '" +
                       std::string(cell) + "' treated as missing");
        return missing_value();
    }
    return *v;
}

}  // namespace detail

// Parses customer metadata and telemetry. Telemetry is normalized to an hourly
// cadence: within each customer and hour bucket the last row wins, and the
// reading is timestamped at the start of the hour. Rows for customers absent
// from the metadata are rejected with a diagnostic. Timestamps within a
// customer must be non-decreasing.
inline Fleet parse_fleet(std::istream& telemetry_csv, std::istream& meta_csv) {
    Fleet fleet;
    detail::check_header(meta_csv, kMetaHeader, "meta CSV");

    std::map<std::string, CustomerMeta, std::less<>> metas;
    std::string line;
    std::size_t row = 1;
    while (read_line(meta_csv, line)) {
        ++row;
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (f.size() != 4)
            throw io_error("meta CSV row " + std::to_string(row) + ": expected 4 fields, got " +
                           std::to_string(f.size()));
        CustomerMeta m;
        m.customer_id = std::string(f[0]);
        if (m.customer_id.empty()) throw io_error("meta CSV row " + std::to_string(row) + ": empty customer_id");
        auto rv = parse_double(f[1]);
        auto cp = parse_double(f[2]);
        if (!rv || *rv <= 0.0)
            throw io_error("meta CSV row " + std::to_string(row) + ": rated_voltage must be > 0");
        if (!cp || *cp <= 0.0)
            throw io_error("meta CSV row " + std::to_string(row) +
                           ": contracted_power must be > 0");
        m.rated_voltage = *rv;
        m.contracted_power = *cp;
        m.label = parse_label(f[3]);
        if (!metas.emplace(m.customer_id, m).second)
            throw io_error("meta CSV row " + std::to_string(row) + ": duplicate customer_id '" +
                           m.customer_id + "'");
    }
    if (metas.empty()) throw io_error("meta CSV has no customers");

    // hour bucket -> reading, per customer; std::map keeps buckets ordered
    std::map<std::string, std::map<std::int64_t, MeterReading>, std::less<>> buckets;
    std::map<std::string, std::int64_t, std::less<>> last_ts;

    detail::check_header(telemetry_csv, kTelemetryHeader, "telemetry CSV");
    row = 1;
    std::size_t unknown_rows = 0;
    while (read_line(telemetry_csv, line)) {
        ++row;
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (f.size() != 10) {
            fleet.diagnostics.push_back("telemetry row " + std::to_string(row) +
                                        ": expected 10 fields, got " + std::to_string(f.size()) +
                                        "; row skipped");
            continue;
        }
        auto it = metas.find(f[0]);
        if (it == metas.end()) {
            if (++unknown_rows <= 5)
                fleet.diagnostics.push_back("telemetry row " + std::to_string(row) +
                                            ": unknown customer '" + std::string(f[0]) +
                                            "'; row rejected");
            continue;
        }
        auto ts = parse_iso8601_utc(f[1]);
        if (!ts) {
            fleet.diagnostics.push_back("telemetry row " + std::to_string(row) +
                                        ": bad timestamp '" + std::string(f[1]) + "'; row skipped");
            continue;
        }
        auto [lit, inserted] = last_ts.emplace(it->first, *ts);
        if (!inserted) {
            if (*ts < lit->second)
                throw io_error("telemetry row " + std::to_string(row) + ": customer '" +
                               std::string(f[0]) + "' timestamps go backwards");
            lit->second = *ts;
        }

        MeterReading r;
        std::int64_t hour = *ts >= 0 ? *ts / kSecondsPerHour : (*ts - kSecondsPerHour + 1) / kSecondsPerHour;
        r.timestamp = hour * kSecondsPerHour;
        auto& d = fleet.diagnostics;
        r.ua = detail::measurement_cell(f[2], true, false, "ua", row, d);
        r.ub = detail::measurement_cell(f[3], true, false, "ub", row, d);
        r.uc = detail::measurement_cell(f[4], true, false, "uc", row, d);
        r.ia = detail::measurement_cell(f[5], true, false, "ia", row, d);
        r.ib = detail::measurement_cell(f[6], true, false, "ib", row, d);
        r.ic = detail::measurement_cell(f[7], true, false, "ic", row, d);
        r.active_power = detail::measurement_cell(f[8], false, false, "active_power", row, d);
        r.power_factor = detail::measurement_cell(f[9], false, true, "power_factor", row, d);
        buckets[it->first][hour] = r;  // last reading in the hour wins
    }
    if (unknown_rows > 5)
        fleet.diagnostics.push_back(std::to_string(unknown_rows - 5) +
                                    " further rows for unknown customers rejected");

    fleet.series.reserve(metas.size());
    for (auto& [id, meta] : metas) {
        CustomerSeries s;
        s.meta = meta;
        auto bit = buckets.find(id);
        if (bit != buckets.end()) {
            s.readings.reserve(bit->second.size());
            for (auto& [hour, reading] : bit->second) s.readings.push_back(reading);
        }
        fleet.series.push_back(std::move(s));
    }
    return fleet;
}

// Writes one series in the telemetry CSV format (no header). Numeric cells use
// shortest round-trip formatting, so parse -> serialize is lossless.
inline void serialize_series(const CustomerSeries& s, std::ostream& out) {
    for (const auto& r : s.readings) {
        out << s.meta.customer_id << ',' << format_iso8601_utc(r.timestamp) << ','
            << format_double(r.ua) << ',' << format_double(r.ub) << ',' << format_double(r.uc)
            << ',' << format_double(r.ia) << ',' << format_double(r.ib) << ','
            << format_double(r.ic) << ',' << format_double(r.active_power) << ','
            << format_double(r.power_factor) << '\n';
    }
}

// Cuts a series into fixed windows advancing by step_days. A window is emitted
// only when at least half of its expected hourly readings are present. The
// returned spans alias the series' storage.
inline std::vector<Window> slide_windows(const CustomerSeries& series, int window_days = 10,
                                         int step_days = 5) {
    if (window_days <= 0 || step_days <= 0)
        throw config_error("window_days and step_days must be positive");
    std::vector<Window> out;
    if (series.readings.empty()) return out;

    const std::int64_t t0 = series.readings.front().timestamp;
    const std::int64_t span = series.readings.back().timestamp + kSecondsPerHour - t0;
    const std::int64_t window_len = static_cast<std::int64_t>(window_days) * kSecondsPerDay;
    const std::int64_t step = static_cast<std::int64_t>(step_days) * kSecondsPerDay;
    const int expected = window_days * 24;

    for (std::int64_t start = t0; start + window_len <= t0 + span; start += step) {
        const std::int64_t end = start + window_len;
        auto lo = std::lower_bound(series.readings.begin(), series.readings.end(), start,
                                   [](const MeterReading& r, std::int64_t t) { return r.timestamp < t; });
        auto hi = std::lower_bound(lo, series.readings.end(), end,
                                   [](const MeterReading& r, std::int64_t t) { return r.timestamp < t; });
        const auto count = static_cast<int>(hi - lo);
        if (2 * count < expected) continue;  // completeness gate: >= 50%
        Window w;
        w.customer_id = series.meta.customer_id;
        w.start = start;
        w.end = end;
        w.readings = std::span<const MeterReading>(&*lo, static_cast<std::size_t>(count));
        w.expected_count = expected;
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace ntl
