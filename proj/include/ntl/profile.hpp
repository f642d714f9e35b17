#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ntl/common.hpp"
#include "ntl/csv.hpp"
#include "ntl/features.hpp"

namespace ntl {

inline constexpr int kGrid = 50;
inline constexpr int kChannels = 7;
inline constexpr double kDefaultSigmaPx = 1.5;
inline constexpr double kDefaultBboxThreshold = 0.2;

// One profile channel: a feature pair and the data ranges mapped onto the
// 50-pixel axes. Range endpoints land on the centers of pixels 0 and 49;
// out-of-range values clamp to the boundary.
struct ChannelSpec {
    int index = 0;
    Feature x_feature = Feature::LoadRate;
    Feature y_feature = Feature::LoadRate;
    double x_lo = 0.0, x_hi = 1.0;
    double y_lo = 0.0, y_hi = 1.0;
};

// Channels 0-5 pair the load rate with each remaining feature; channel 6
// crosses the reported power factor with the calculated one.
inline std::array<ChannelSpec, kChannels> default_channel_specs() {
    auto range_of = [](Feature f) -> std::pair<double, double> {
        switch (f) {
            case Feature::LoadRate: return {0.0, 1.2};
            case Feature::PNorm: return {0.0, 1.2};
            case Feature::VoltageDeviation: return {0.0, 0.5};
            default: return {0.0, 1.0};  // unbalance degrees and power factors
        }
    };
    const std::array<std::pair<Feature, Feature>, kChannels> pairs = {{
        {Feature::LoadRate, Feature::VoltageDeviation},
        {Feature::LoadRate, Feature::VoltageUd},
        {Feature::LoadRate, Feature::CurrentUd},
        {Feature::LoadRate, Feature::PowerFactor},
        {Feature::LoadRate, Feature::PNorm},
        {Feature::LoadRate, Feature::CalcPf},
        {Feature::PowerFactor, Feature::CalcPf},
    }};
    std::array<ChannelSpec, kChannels> specs;
    for (int i = 0; i < kChannels; ++i) {
        auto [xf, yf] = pairs[static_cast<std::size_t>(i)];
        auto [xlo, xhi] = range_of(xf);
        auto [ylo, yhi] = range_of(yf);
        specs[static_cast<std::size_t>(i)] = ChannelSpec{i, xf, yf, xlo, xhi, ylo, yhi};
    }
    return specs;
}

struct BBox {
    std::uint16_t x0 = 0, y0 = 0, x1 = kGrid - 1, y1 = kGrid - 1;  // inclusive
    bool operator==(const BBox&) const = default;
};

// 7-channel statistical profile of one window. Channel pixels are row-major
// (y * 50 + x), normalized to [0,1].
struct SuperImage {
    std::string customer_id;
    std::int64_t window_start = 0;
    Label label = Label::Unlabeled;
    std::array<std::vector<float>, kChannels> channels;
    std::array<BBox, kChannels> bboxes;
    std::array<std::uint32_t, kChannels> point_counts = {};
};

// Sums a Gaussian kernel per data point onto the 50x50 grid evaluated at
// pixel centers. Points are clamped into the spec ranges, mapped linearly to
// pixel space, and sorted canonically so that the accumulated grid is
// bit-identical under input permutation. The kernel factorizes per axis;
// with <= ~1e4 points the result matches the direct per-pixel sum to well
// below 1e-9 absolute.
inline std::vector<double> render_channel(const std::vector<std::pair<double, double>>& points,
                                          const ChannelSpec& spec, double sigma_px) {
    if (!(sigma_px > 0.0)) throw config_error("sigma_px must be positive");
    if (!(spec.x_hi > spec.x_lo) || !(spec.y_hi > spec.y_lo))
        throw config_error("channel ranges must have positive width");
    std::vector<double> grid(kGrid * kGrid, 0.0);

    std::vector<std::pair<double, double>> px;
    px.reserve(points.size());
    const double sx = (kGrid - 1) / (spec.x_hi - spec.x_lo);
    const double sy = (kGrid - 1) / (spec.y_hi - spec.y_lo);
    for (const auto& [x, y] : points) {
        if (is_missing(x) || is_missing(y)) continue;
        const double cx = std::min(std::max(x, spec.x_lo), spec.x_hi);
        const double cy = std::min(std::max(y, spec.y_lo), spec.y_hi);
        px.emplace_back((cx - spec.x_lo) * sx, (cy - spec.y_lo) * sy);
    }
    std::sort(px.begin(), px.end());

    const double inv2s2 = 1.0 / (2.0 * sigma_px * sigma_px);
    double wx[kGrid], wy[kGrid];
    for (const auto& [x, y] : px) {
        for (int j = 0; j < kGrid; ++j) {
            const double dx = j - x;
            const double dy = j - y;
            wx[j] = std::exp(-dx * dx * inv2s2);
            wy[j] = std::exp(-dy * dy * inv2s2);
        }
        double* row = grid.data();
        for (int i = 0; i < kGrid; ++i, row += kGrid) {
            const double w = wy[i];
            for (int j = 0; j < kGrid; ++j) row[j] += w * wx[j];
        }
    }
    return grid;
}

// Divides by the grid maximum; an all-zero grid stays all-zero.
template <typename T>
inline void normalize_channel(std::vector<T>& grid) {
    T mx = 0;
    for (T v : grid) mx = std::max(mx, v);
    if (!(mx > 0)) return;
    for (T& v : grid) v /= mx;
}

// Tightest rectangle covering all pixels with value strictly above the
// threshold. Falls back to the full image when nothing qualifies. Extents
// thinner than 3 px are padded out (and clamped) so downstream region pooling
// never sees a degenerate box.
template <typename T>
inline BBox find_bbox(const std::vector<T>& grid, double threshold_frac = kDefaultBboxThreshold) {
    if (!(threshold_frac > 0.0) || !(threshold_frac < 1.0))
        throw config_error("threshold_frac must lie in (0,1)");
    int x0 = kGrid, y0 = kGrid, x1 = -1, y1 = -1;
    for (int y = 0; y < kGrid; ++y)
        for (int x = 0; x < kGrid; ++x)
            if (static_cast<double>(grid[static_cast<std::size_t>(y * kGrid + x)]) >
                threshold_frac) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) return BBox{0, 0, kGrid - 1, kGrid - 1};

    auto widen = [](int& lo, int& hi) {
        while (hi - lo + 1 < 3) {
            if (lo > 0) --lo;
            if (hi - lo + 1 >= 3) break;
            if (hi < kGrid - 1) ++hi;
        }
    };
    widen(x0, x1);
    widen(y0, y1);
    return BBox{static_cast<std::uint16_t>(x0), static_cast<std::uint16_t>(y0),
                static_cast<std::uint16_t>(x1), static_cast<std::uint16_t>(y1)};
}

// Renders, normalizes, and boxes each channel independently.
inline SuperImage build_super_image(const std::vector<FeatureRow>& rows,
                                    const std::array<ChannelSpec, kChannels>& specs,
                                    double sigma_px, double threshold_frac, Label label,
                                    std::string customer_id, std::int64_t window_start) {
    SuperImage si;
    si.customer_id = std::move(customer_id);
    si.window_start = window_start;
    si.label = label;
    for (int c = 0; c < kChannels; ++c) {
        const auto& spec = specs[static_cast<std::size_t>(c)];
        if (spec.index != c) throw config_error("channel specs must cover indices 0-6 in order");
        std::vector<std::pair<double, double>> pts;
        pts.reserve(rows.size());
        for (const auto& r : rows) {
            const double x = feature_value(r, spec.x_feature);
            const double y = feature_value(r, spec.y_feature);
            if (is_missing(x) || is_missing(y)) continue;
            pts.emplace_back(x, y);
        }
        auto grid = render_channel(pts, spec, sigma_px);
        normalize_channel(grid);
        auto& ch = si.channels[static_cast<std::size_t>(c)];
        ch.resize(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) ch[i] = static_cast<float>(grid[i]);
        si.bboxes[static_cast<std::size_t>(c)] = find_bbox(grid, threshold_frac);
        si.point_counts[static_cast<std::size_t>(c)] = static_cast<std::uint32_t>(pts.size());
    }
    return si;
}

// ---- binary format: magic NTLP1, 7x50x50 f32le, 7x4 u16le bbox, label u8,
//      length-prefixed id strings (customer_id, window start as decimal) ----

inline constexpr char kSuperImageMagic[5] = {'N', 'T', 'L', 'P', '1'};

namespace detail {
inline void put_u16(std::ostream& out, std::uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    out.write(b, 2);
}
inline std::uint16_t get_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
}  // namespace detail

inline void write_super_image(const SuperImage& si, std::ostream& out) {
    out.write(kSuperImageMagic, 5);
    for (const auto& ch : si.channels) {
        static_assert(sizeof(float) == 4);
        out.write(reinterpret_cast<const char*>(ch.data()),
                  static_cast<std::streamsize>(ch.size() * sizeof(float)));
    }
    for (const auto& b : si.bboxes) {
        detail::put_u16(out, b.x0);
        detail::put_u16(out, b.y0);
        detail::put_u16(out, b.x1);
        detail::put_u16(out, b.y1);
    }
    const char label = static_cast<char>(si.label);
    out.write(&label, 1);
    auto put_str = [&](const std::string& s) {
        detail::put_u16(out, static_cast<std::uint16_t>(s.size()));
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    };
    put_str(si.customer_id);
    put_str(format_int(si.window_start));
}

inline void write_super_image_file(const SuperImage& si, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    write_super_image(si, out);
    if (!out) throw io_error("write failed for '" + path + "'");
}

inline SuperImage read_super_image(std::istream& in) {
    char magic[5];
    in.read(magic, 5);
    if (!in || std::memcmp(magic, kSuperImageMagic, 5) != 0)
        throw io_error("not a super-image file (bad magic)");
    SuperImage si;
    for (auto& ch : si.channels) {
        ch.resize(kGrid * kGrid);
        in.read(reinterpret_cast<char*>(ch.data()),
                static_cast<std::streamsize>(ch.size() * sizeof(float)));
    }
    for (auto& b : si.bboxes) {
        b.x0 = detail::get_u16(in);
        b.y0 = detail::get_u16(in);
        b.x1 = detail::get_u16(in);
        b.y1 = detail::get_u16(in);
    }
    char label = 0;
    in.read(&label, 1);
    if (label < 0 || label > 2) throw io_error("super-image file has bad label byte");
    si.label = static_cast<Label>(label);
    auto get_str = [&]() {
        const std::uint16_t n = detail::get_u16(in);
        std::string s(n, '\0');
        in.read(s.data(), n);
        return s;
    };
    si.customer_id = get_str();
    auto start = parse_int(get_str());
    if (!in || !start) throw io_error("truncated super-image file");
    si.window_start = *start;
    return si;
}

inline SuperImage read_super_image_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "'");
    return read_super_image(in);
}

}  // namespace ntl
