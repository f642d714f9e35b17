#pragma once

// Shared plumbing between the render/detect commands and the test suites:
// fleet -> windows -> features -> super images, and rendered-directory IO.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ntl/features.hpp"
#include "ntl/ingest.hpp"
#include "ntl/profile.hpp"

namespace ntl {

struct RenderParams {
    double sigma_px = kDefaultSigmaPx;
    double threshold_frac = kDefaultBboxThreshold;
    int window_days = 10;
    int step_days = 5;
};

struct RenderCounts {
    std::int64_t windows_emitted = 0;
    std::int64_t windows_skipped = 0;  // candidates failing the completeness gate
};

inline SuperImage render_window(const Window& w, const CustomerMeta& meta,
                                const RenderParams& rp) {
    const auto rows = featurize_window(w, meta);
    return build_super_image(rows, default_channel_specs(), rp.sigma_px, rp.threshold_frac,
                             meta.label, w.customer_id, w.start);
}

// Renders every sufficiently complete window of every series, invoking the
// sink per super image in deterministic (customer, window) order.
inline RenderCounts render_fleet(const Fleet& fleet, const RenderParams& rp,
                                 const std::function<void(const SuperImage&)>& sink) {
    RenderCounts counts;
    for (const auto& series : fleet.series) {
        // candidate positions, for the skip tally
        std::int64_t candidates = 0;
        if (!series.readings.empty()) {
            const std::int64_t span = series.readings.back().timestamp + kSecondsPerHour -
                                      series.readings.front().timestamp;
            const std::int64_t wl = static_cast<std::int64_t>(rp.window_days) * kSecondsPerDay;
            const std::int64_t st = static_cast<std::int64_t>(rp.step_days) * kSecondsPerDay;
            if (span >= wl) candidates = (span - wl) / st + 1;
        }
        const auto windows = slide_windows(series, rp.window_days, rp.step_days);
        counts.windows_emitted += static_cast<std::int64_t>(windows.size());
        counts.windows_skipped += candidates - static_cast<std::int64_t>(windows.size());
        for (const auto& w : windows) sink(render_window(w, series.meta, rp));
    }
    return counts;
}

inline std::string super_image_filename(const SuperImage& si) {
    return si.customer_id + "_" + format_int(si.window_start) + ".ntlp";
}

// Loads every *.ntlp file in a directory, sorted by filename.
inline std::vector<SuperImage> load_rendered_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw io_error("'" + dir + "' is not a directory");
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".ntlp")
            paths.push_back(entry.path());
    std::sort(paths.begin(), paths.end());
    std::vector<SuperImage> out;
    out.reserve(paths.size());
    for (const auto& p : paths) out.push_back(read_super_image_file(p.string()));
    return out;
}

}  // namespace ntl
