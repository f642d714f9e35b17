#pragma once

// Synthetic smart-meter fleet with normal daily-periodic consumption and
// three sustained anomaly archetypes, used as the toolkit's built-in ground
// truth. Generation is per-customer deterministic given the seed.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ntl/common.hpp"
#include "ntl/csv.hpp"
#include "ntl/ingest.hpp"
#include "ntl/rng.hpp"

namespace ntl {

enum class AnomalyKind : std::uint8_t {
    None = 0,
    PhaseVoltageDrop = 1,
    TheftZeroPower = 2,
    PersistentUnbalance = 3,
};

inline const char* anomaly_kind_name(AnomalyKind k) {
    switch (k) {
        case AnomalyKind::None: return "none";
        case AnomalyKind::PhaseVoltageDrop: return "phase_voltage_drop";
        case AnomalyKind::TheftZeroPower: return "theft_zero_power";
        case AnomalyKind::PersistentUnbalance: return "persistent_unbalance";
    }
    return "?";
}

struct SynthConfig {
    std::uint64_t seed = 1;
    int normal_customers = 60;
    int ntl_customers = 25;
    int unlabeled_customers = 150;
    int days = 60;
    double rated_voltage = 220.0;
    double contracted_min = 10.0;  // kVA
    double contracted_max = 80.0;
    double voltage_jitter = 0.01;      // relative
    double current_jitter = 0.02;      // relative
    double dropout_prob = 0.01;        // whole reading missing
    double unlabeled_anomaly_fraction = 0.3;
    std::array<double, 3> anomaly_mix = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

    void validate() const {
        if (normal_customers < 0 || ntl_customers < 0 || unlabeled_customers < 0)
            throw config_error("customer counts must be >= 0");
        if (days < 1) throw config_error("days must be >= 1");
        if (rated_voltage <= 0.0) throw config_error("rated_voltage must be > 0");
        if (contracted_min <= 0.0 || contracted_max < contracted_min)
            throw config_error("contracted power range must be positive and ordered");
        for (double p : {voltage_jitter, current_jitter, dropout_prob, unlabeled_anomaly_fraction})
            if (p < 0.0 || p > 1.0) throw config_error("probabilities must lie in [0,1]");
        double mix = 0.0;
        for (double w : anomaly_mix) {
            if (w < 0.0) throw config_error("anomaly mix weights must be >= 0");
            mix += w;
        }
        if (mix <= 0.0) throw config_error("anomaly mix must have positive total weight");
    }
};

inline void serialize_synth_config(const SynthConfig& c, std::ostream& out) {
    out << "seed=" << c.seed << '\n'
        << "normal_customers=" << c.normal_customers << '\n'
        << "ntl_customers=" << c.ntl_customers << '\n'
        << "unlabeled_customers=" << c.unlabeled_customers << '\n'
        << "days=" << c.days << '\n'
        << "rated_voltage=" << format_double(c.rated_voltage) << '\n'
        << "contracted_min=" << format_double(c.contracted_min) << '\n'
        << "contracted_max=" << format_double(c.contracted_max) << '\n'
        << "voltage_jitter=" << format_double(c.voltage_jitter) << '\n'
        << "current_jitter=" << format_double(c.current_jitter) << '\n'
        << "dropout_prob=" << format_double(c.dropout_prob) << '\n'
        << "unlabeled_anomaly_fraction=" << format_double(c.unlabeled_anomaly_fraction) << '\n'
        << "anomaly_mix_voltage_drop=" << format_double(c.anomaly_mix[0]) << '\n'
        << "anomaly_mix_zero_power=" << format_double(c.anomaly_mix[1]) << '\n'
        << "anomaly_mix_unbalance=" << format_double(c.anomaly_mix[2]) << '\n';
}

inline SynthConfig parse_synth_config(std::istream& in) {
    SynthConfig c;
    std::string line;
    std::size_t lineno = 0;
    while (read_line(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        auto num = [&]() {
            auto v = parse_double(val);
            if (!v) throw config_error("config key '" + key + "': bad numeric value '" + val + "'");
            return *v;
        };
        if (key == "seed") c.seed = static_cast<std::uint64_t>(num());
        else if (key == "normal_customers") c.normal_customers = static_cast<int>(num());
        else if (key == "ntl_customers") c.ntl_customers = static_cast<int>(num());
        else if (key == "unlabeled_customers") c.unlabeled_customers = static_cast<int>(num());
        else if (key == "days") c.days = static_cast<int>(num());
        else if (key == "rated_voltage") c.rated_voltage = num();
        else if (key == "contracted_min") c.contracted_min = num();
        else if (key == "contracted_max") c.contracted_max = num();
        else if (key == "voltage_jitter") c.voltage_jitter = num();
        else if (key == "current_jitter") c.current_jitter = num();
        else if (key == "dropout_prob") c.dropout_prob = num();
        else if (key == "unlabeled_anomaly_fraction") c.unlabeled_anomaly_fraction = num();
        else if (key == "anomaly_mix_voltage_drop") c.anomaly_mix[0] = num();
        else if (key == "anomaly_mix_zero_power") c.anomaly_mix[1] = num();
        else if (key == "anomaly_mix_unbalance") c.anomaly_mix[2] = num();
        else throw config_error("unknown config key '" + key + "'");
    }
    c.validate();
    return c;
}

struct TruthRow {
    std::string customer_id;
    Label label = Label::Unlabeled;
    AnomalyKind kind = AnomalyKind::None;
};

struct SynthFleet {
    std::vector<CustomerSeries> series;
    std::vector<TruthRow> truth;
};

namespace detail {

// AR(1) noise stream, unit marginal variance.
class ArNoise {
public:
    ArNoise(double rho, Rng& rng) : rho_(rho), scale_(std::sqrt(1.0 - rho * rho)), rng_(rng) {
        value_ = rng_.gaussian();
    }
    double next() {
        value_ = rho_ * value_ + scale_ * rng_.gaussian();
        return value_;
    }

private:
    double rho_, scale_;
    double value_;
    Rng& rng_;
};

struct CustomerPlan {
    CustomerMeta meta;
    AnomalyKind kind = AnomalyKind::None;
    // normal behavior
    double base_load, amp_load, peak_hour, peak_width;
    double pf_mean;
    double static_imb[3];
    double additive_current_noise;  // amperes
    bool has_idle_days = false;
    double idle_day_prob = 0.0;
    // anomaly regime
    int start_day = 0;
    double daily_fraction = 0.0;  // of each day the regime is active
    int daily_offset = 0;         // hour the active band starts
    int phase = 0;
    double severity = 0.0;
};

inline AnomalyKind pick_kind(const std::array<double, 3>& mix, Rng& rng) {
    const double total = mix[0] + mix[1] + mix[2];
    const double r = rng.uniform() * total;
    if (r < mix[0]) return AnomalyKind::PhaseVoltageDrop;
    if (r < mix[0] + mix[1]) return AnomalyKind::TheftZeroPower;
    return AnomalyKind::PersistentUnbalance;
}

inline CustomerPlan make_plan(const SynthConfig& cfg, const std::string& id, Label label,
                              bool anomalous, Rng& rng) {
    CustomerPlan p;
    p.meta.customer_id = id;
    p.meta.rated_voltage = cfg.rated_voltage;
    p.meta.contracted_power = rng.uniform(cfg.contracted_min, cfg.contracted_max);
    p.meta.label = label;
    p.base_load = rng.uniform(0.12, 0.35);
    p.amp_load = rng.uniform(0.15, 0.45);
    p.peak_hour = rng.uniform(7.0, 20.0);
    p.peak_width = rng.uniform(2.5, 5.0);
    p.pf_mean = rng.uniform(0.86, 0.98);
    for (auto& s : p.static_imb) s = 1.0 + 0.015 * rng.gaussian();
    p.additive_current_noise = rng.uniform(0.1, 0.5);
    p.has_idle_days = rng.bernoulli(0.3);
    p.idle_day_prob = p.has_idle_days ? rng.uniform(0.05, 0.25) : 0.0;
    if (anomalous) {
        p.kind = pick_kind(cfg.anomaly_mix, rng);
        p.start_day = static_cast<int>(rng.uniform_int(0, std::max(0, std::min(6, cfg.days - 3))));
        p.daily_offset = static_cast<int>(rng.uniform_int(0, 23));
        p.phase = static_cast<int>(rng.uniform_int(0, 2));
        switch (p.kind) {
            case AnomalyKind::PhaseVoltageDrop:
                p.daily_fraction = rng.uniform(0.5, 0.9);
                p.severity = 0.0;  // depth drawn per reading from the 20-60% range
                break;
            case AnomalyKind::TheftZeroPower:
                p.daily_fraction = rng.uniform(0.65, 0.95);
                p.severity = rng.uniform(0.0, 0.03);  // residual registered power
                break;
            default:  // PersistentUnbalance: continuous, not daily-windowed
                p.daily_fraction = 1.0;
                p.severity = rng.uniform(0.45, 0.85);  // phase current reduction
                break;
        }
    }
    return p;
}

inline CustomerSeries synthesize(const SynthConfig& cfg, const CustomerPlan& plan,
                                 std::int64_t epoch_start, Rng& rng) {
    CustomerSeries s;
    s.meta = plan.meta;
    s.readings.reserve(static_cast<std::size_t>(cfg.days) * 24);

    ArNoise load_ar(0.9, rng), pf_ar(0.8, rng);
    ArNoise volt_ar[3] = {ArNoise(0.7, rng), ArNoise(0.7, rng), ArNoise(0.7, rng)};

    std::vector<bool> idle_day(static_cast<std::size_t>(cfg.days), false);
    for (int d = 0; d < cfg.days; ++d)
        if (plan.has_idle_days && rng.bernoulli(plan.idle_day_prob)) idle_day[static_cast<std::size_t>(d)] = true;

    for (int hour_index = 0; hour_index < cfg.days * 24; ++hour_index) {
        const int day = hour_index / 24;
        const int hod = hour_index % 24;
        const bool regime_active =
            plan.kind != AnomalyKind::None && day >= plan.start_day &&
            static_cast<double>((hod - plan.daily_offset + 24) % 24) <
                plan.daily_fraction * 24.0;

        // load shape
        double dh = std::fabs(hod + 0.5 - plan.peak_hour);
        dh = std::min(dh, 24.0 - dh);
        double lambda = plan.base_load +
                        plan.amp_load * std::exp(-dh * dh / (2.0 * plan.peak_width * plan.peak_width)) +
                        0.04 * load_ar.next();
        double pf = plan.pf_mean + 0.02 * pf_ar.next();
        if (idle_day[static_cast<std::size_t>(day)]) {
            lambda = rng.uniform(0.005, 0.04);
            pf = rng.uniform(0.3, 1.0);
        }
        lambda = std::min(std::max(lambda, 0.03), 1.1);
        pf = std::min(std::max(pf, 0.5), 1.0);

        // voltages (true grid side)
        double volts[3];
        for (int i = 0; i < 3; ++i)
            volts[i] = cfg.rated_voltage * (1.0 + cfg.voltage_jitter * volt_ar[i].next());
        if (rng.bernoulli(0.004)) {  // transient single-reading sag
            const int ph = static_cast<int>(rng.uniform_index(3));
            volts[ph] *= 1.0 - rng.uniform(0.1, 0.4);
        }

        // currents from the load target
        const double total_amps = lambda * plan.meta.contracted_power * 1000.0 / cfg.rated_voltage;
        double amps[3];
        for (int i = 0; i < 3; ++i) {
            amps[i] = (total_amps / 3.0) * plan.static_imb[i] *
                          (1.0 + cfg.current_jitter * rng.gaussian()) +
                      plan.additive_current_noise * std::fabs(rng.gaussian());
            if (amps[i] < 0.0) amps[i] = 0.0;
        }

        // anomaly regimes distort what the meter records
        if (regime_active) {
            switch (plan.kind) {
                case AnomalyKind::PhaseVoltageDrop:
                    volts[plan.phase] *= 1.0 - rng.uniform(0.2, 0.6);
                    break;
                case AnomalyKind::PersistentUnbalance:
                    amps[plan.phase] *= 1.0 - plan.severity;
                    break;
                default:
                    break;
            }
        }

        double apparent = volts[0] * amps[0] + volts[1] * amps[1] + volts[2] * amps[2];
        double power_kw = apparent * pf / 1000.0 * (1.0 + 0.01 * rng.gaussian());
        double pf_field = std::min(std::max(pf * (1.0 + 0.005 * rng.gaussian()), 0.0), 1.0);
        if (regime_active && plan.kind == AnomalyKind::TheftZeroPower) {
            pf_field = rng.uniform(0.96, 1.0);
            power_kw = rng.uniform(0.0, plan.severity) * plan.meta.contracted_power;
        }
        if (power_kw < 0.0) power_kw = 0.0;

        // missing data comes last so the draw sequence stays fixed
        const bool drop_reading = rng.bernoulli(cfg.dropout_prob);
        double field_drop[8];
        for (auto& f : field_drop) f = rng.uniform();
        if (drop_reading) continue;

        MeterReading r;
        r.timestamp = epoch_start + static_cast<std::int64_t>(hour_index) * kSecondsPerHour;
        const double q = cfg.dropout_prob / 2.0;
        r.ua = field_drop[0] < q ? missing_value() : volts[0];
        r.ub = field_drop[1] < q ? missing_value() : volts[1];
        r.uc = field_drop[2] < q ? missing_value() : volts[2];
        r.ia = field_drop[3] < q ? missing_value() : amps[0];
        r.ib = field_drop[4] < q ? missing_value() : amps[1];
        r.ic = field_drop[5] < q ? missing_value() : amps[2];
        r.active_power = field_drop[6] < q ? missing_value() : power_kw;
        r.power_factor = field_drop[7] < q ? missing_value() : pf_field;
        s.readings.push_back(r);
    }
    return s;
}

}  // namespace detail

// History starts at 2021-01-01T00:00:00Z.
inline std::int64_t synth_epoch_start() { return days_from_civil(2021, 1, 1) * kSecondsPerDay; }

inline SynthFleet generate_fleet(const SynthConfig& cfg) {
    cfg.validate();
    SynthFleet fleet;
    const std::int64_t t0 = synth_epoch_start();
    const int total = cfg.normal_customers + cfg.ntl_customers + cfg.unlabeled_customers;
    fleet.series.reserve(static_cast<std::size_t>(total));
    fleet.truth.reserve(static_cast<std::size_t>(total));

    int index = 0;
    auto add_customer = [&](Label label, bool anomalous_roll) {
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "C%05d", index);
        Rng rng(derive_seed(cfg.seed, 0x637573, static_cast<std::uint64_t>(index)));
        const bool anomalous =
            label == Label::Ntl || (anomalous_roll && rng.bernoulli(cfg.unlabeled_anomaly_fraction));
        auto plan = detail::make_plan(cfg, idbuf, label, anomalous, rng);
        fleet.series.push_back(detail::synthesize(cfg, plan, t0, rng));
        fleet.truth.push_back(TruthRow{idbuf, label, plan.kind});
        ++index;
    };
    for (int i = 0; i < cfg.normal_customers; ++i) add_customer(Label::Normal, false);
    for (int i = 0; i < cfg.ntl_customers; ++i) add_customer(Label::Ntl, false);
    for (int i = 0; i < cfg.unlabeled_customers; ++i) add_customer(Label::Unlabeled, true);
    return fleet;
}

inline constexpr const char* kTruthHeader = "customer_id,label,anomaly_kind";

inline void write_fleet(const SynthFleet& fleet, std::ostream& telemetry, std::ostream& meta,
                        std::ostream& truth) {
    telemetry << kTelemetryHeader << '\n';
    meta << kMetaHeader << '\n';
    truth << kTruthHeader << '\n';
    for (const auto& s : fleet.series) {
        serialize_series(s, telemetry);
        meta << s.meta.customer_id << ',' << format_double(s.meta.rated_voltage) << ','
             << format_double(s.meta.contracted_power) << ',' << label_name(s.meta.label) << '\n';
    }
    for (const auto& t : fleet.truth)
        truth << t.customer_id << ',' << label_name(t.label) << ',' << anomaly_kind_name(t.kind)
              << '\n';
}

// Truth CSV reader used by the train/evaluate commands.
inline std::map<std::string, Label> read_truth_csv(std::istream& in) {
    std::string line;
    if (!read_line(in, line)) throw io_error("truth CSV: empty stream");
    auto header = split_csv(line);
    if (header.size() < 2 || header[0] != "customer_id" || header[1] != "label")
        throw io_error("truth CSV: bad header");
    std::map<std::string, Label> out;
    std::size_t row = 1;
    while (read_line(in, line)) {
        ++row;
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (f.size() < 2)
            throw io_error("truth CSV row " + std::to_string(row) + ": expected >= 2 fields");
        if (!out.emplace(std::string(f[0]), parse_label(f[1])).second)
            throw io_error("truth CSV row " + std::to_string(row) + ": duplicate customer_id");
    }
    return out;
}

}  // namespace ntl
