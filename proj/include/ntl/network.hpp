#pragma once

// The shared per-channel ConvNet (nine convolutions), RoI pooling over the
// per-channel pattern boxes, channel concatenation, and the linear classifier
// head. Templated on the scalar type: training runs in float, gradient checks
// rebuild the same network in double.

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ntl/common.hpp"
#include "ntl/layers.hpp"
#include "ntl/profile.hpp"
#include "ntl/rng.hpp"
#include "ntl/tensor.hpp"

namespace ntl {

enum class Mode { Train, Eval };

struct NetConfig {
    int input_hw = 50;
    int super_channels = kChannels;
    std::vector<int> conv_widths = {32, 32, 64, 64, 128, 128, 256};  // 3x3, pool after 1,3,5
    std::vector<int> pointwise_widths = {128, 64};                   // 1x1
    int roi_bins = 3;
    int classes = 2;
    double lrelu_alpha = 0.1;
    double bn_momentum = 0.99;
    double bn_eps = 1e-5;
    double noise_sigma = 0.15;
    double dropout_p = 0.5;

    // Small variant for finite-difference checks: 2 channels, 12x12 input,
    // halved widths.
    static NetConfig reduced() {
        NetConfig c;
        c.input_hw = 12;
        c.super_channels = 2;
        c.conv_widths = {16, 16, 32, 32, 64, 64, 128};
        c.pointwise_widths = {64, 32};
        return c;
    }

    int stage_count() const {
        return static_cast<int>(conv_widths.size() + pointwise_widths.size());
    }
    bool is_pointwise(int stage) const {
        return stage >= static_cast<int>(conv_widths.size());
    }
    int stage_width(int stage) const {
        return is_pointwise(stage)
                   ? pointwise_widths[static_cast<std::size_t>(stage - conv_widths.size())]
                   : conv_widths[static_cast<std::size_t>(stage)];
    }
    bool pool_after(int stage) const { return stage == 1 || stage == 3 || stage == 5; }

    // Spatial side length at the input of each stage, plus the final one.
    std::vector<int> spatial_trace() const {
        std::vector<int> trace;
        int h = input_hw;
        for (int s = 0; s < stage_count(); ++s) {
            trace.push_back(h);
            if (pool_after(s)) h /= 2;
        }
        trace.push_back(h);
        return trace;
    }
    int feature_hw() const { return spatial_trace().back(); }
    int feature_channels() const { return pointwise_widths.back(); }
    int embedding_dim() const {
        return super_channels * feature_channels() * roi_bins * roi_bins;
    }
    int pixels() const { return input_hw * input_hw; }
};

// Named tensor registry: trainable parameters plus batchnorm running
// statistics, and the training step counter.
template <typename T>
struct ParamSet {
    std::map<std::string, Tensor<T>> tensors;
    std::map<std::string, Tensor<T>> state;
    std::int64_t step = 0;

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : tensors) n += t.size();
        return n;
    }

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.template cast<U>());
        for (const auto& [name, t] : state) out.state.emplace(name, t.template cast<U>());
        out.step = step;
        return out;
    }
};

// Projects a pattern box from input-pixel space onto the feature map:
// floor for the start edge, ceil for the (exclusive) end edge, clamped to at
// least one cell per axis.
struct RoiRegion {
    int xs, xe, ys, ye;  // end exclusive
};

inline RoiRegion project_roi(const BBox& box, int input_hw, int feature_hw) {
    const double s = static_cast<double>(feature_hw) / static_cast<double>(input_hw);
    auto proj = [&](int lo_px, int hi_px) {
        int lo = static_cast<int>(std::floor(lo_px * s));
        int hi = static_cast<int>(std::ceil((hi_px + 1) * s));
        lo = std::max(0, std::min(lo, feature_hw - 1));
        hi = std::max(lo + 1, std::min(hi, feature_hw));
        return std::pair<int, int>(lo, hi);
    };
    auto [xs, xe] = proj(box.x0, box.x1);
    auto [ys, ye] = proj(box.y0, box.y1);
    return RoiRegion{xs, xe, ys, ye};
}

namespace detail {

// Max-pools the projected region into a fixed bins x bins output per channel.
// Bin b covers region cells [floor(b*len/bins), ceil((b+1)*len/bins)); bins
// overlap or repeat cells when the region is smaller than the output.
template <typename T>
inline void roi_pool_one(const T* fmap, int fh, int fw, int c, const RoiRegion& r, int bins,
                         T* out, std::uint8_t* argmax) {
    const int lx = r.xe - r.xs, ly = r.ye - r.ys;
    for (int by = 0; by < bins; ++by) {
        const int ys = r.ys + (by * ly) / bins;
        const int ye = r.ys + std::max((by * ly) / bins + 1,
                                       (((by + 1) * ly) + bins - 1) / bins);
        for (int bx = 0; bx < bins; ++bx) {
            const int xs = r.xs + (bx * lx) / bins;
            const int xe = r.xs + std::max((bx * lx) / bins + 1,
                                           (((bx + 1) * lx) + bins - 1) / bins);
            T* o = out + (static_cast<std::int64_t>(by) * bins + bx) * c;
            std::uint8_t* am =
                argmax ? argmax + (static_cast<std::int64_t>(by) * bins + bx) * c : nullptr;
            for (int k = 0; k < c; ++k) {
                T best{};
                std::uint8_t bi = 0;
                bool first = true;
                for (int y = ys; y < ye; ++y)
                    for (int x = xs; x < xe; ++x) {
                        const T v = fmap[(static_cast<std::int64_t>(y) * fw + x) * c + k];
                        if (first || v > best) {
                            best = v;
                            bi = static_cast<std::uint8_t>(y * fw + x);
                            first = false;
                        }
                    }
                o[k] = best;
                if (am) am[k] = bi;
            }
        }
    }
}

}  // namespace detail

// Activations and caches of one batched forward pass. Reusable: passing the
// same object to successive forward calls of equal batch size avoids all
// large allocations.
template <typename T>
struct BatchOut {
    int batch = 0;
    int n = 0;  // batch * super_channels
    std::vector<T> logits, probs;  // [batch, classes]
    std::vector<T> concat;         // [batch, embedding_dim]

    // caches (populated when need_grads)
    std::vector<std::vector<T>> stage_in;  // conv input per stage
    std::vector<std::vector<std::uint8_t>> lrelu_mask;
    std::vector<std::vector<T>> xhat;
    std::vector<layers::BnStats> bn_stats;
    std::vector<std::vector<std::uint8_t>> pool_argmax;
    std::vector<std::vector<std::uint8_t>> drop_mask;
    std::vector<T> fmap;
    std::vector<std::uint8_t> roi_argmax;
    std::vector<RoiRegion> regions;

    std::vector<T> scratch_a, scratch_b;  // intra-stage buffers
    std::vector<std::uint8_t> scratch_mask;
};

// Reusable buffers for the backward pass.
template <typename T>
struct BackwardScratch {
    std::vector<T> dconcat;
    std::vector<T> ring[3];  // rotating inter-layer gradient buffers
};

// Single-sample convenience view (ForwardOutput of the inference contract).
template <typename T>
struct ForwardOutput {
    std::array<T, 2> logits;
    std::array<T, 2> probs;
    std::vector<T> embedding;  // pre-head concatenation
};

template <typename T>
class InferenceNet {
public:
    explicit InferenceNet(NetConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.conv_widths.size() != 7)
            throw config_error("expected seven 3x3 convolution widths");
        if (cfg_.pointwise_widths.empty())
            throw config_error("expected at least one 1x1 convolution");
        const auto trace = cfg_.spatial_trace();
        if (trace.back() < 1) throw config_error("input too small for three pooling stages");
        if (cfg_.feature_hw() * cfg_.feature_hw() > 255)
            throw config_error("feature map too large for RoI bookkeeping");
    }

    const NetConfig& config() const { return cfg_; }

    ParamSet<T> init_params(std::uint64_t seed) const {
        ParamSet<T> p;
        Rng rng(derive_seed(seed, kInitTag));
        int cin = 1;
        for (int s = 0; s < cfg_.stage_count(); ++s) {
            const int cout = cfg_.stage_width(s);
            const int k = cfg_.is_pointwise(s) ? 1 : 9;
            Tensor<T> w({k * cin, cout});
            const double bound = std::sqrt(6.0 / static_cast<double>(k * cin));
            for (auto& v : w.v) v = static_cast<T>(rng.uniform(-bound, bound));
            p.tensors.emplace(conv_name(s) + ".w", std::move(w));
            p.tensors.emplace(conv_name(s) + ".b", Tensor<T>({cout}));
            p.tensors.emplace(bn_name(s) + ".gamma", Tensor<T>({cout}, T(1)));
            p.tensors.emplace(bn_name(s) + ".beta", Tensor<T>({cout}));
            p.state.emplace(bn_name(s) + ".mean", Tensor<T>({cout}));
            p.state.emplace(bn_name(s) + ".var", Tensor<T>({cout}, T(1)));
            cin = cout;
        }
        const int e = cfg_.embedding_dim();
        Tensor<T> hw({e, cfg_.classes});
        const double bound = std::sqrt(6.0 / static_cast<double>(e));
        for (auto& v : hw.v) v = static_cast<T>(rng.uniform(-bound, bound));
        p.tensors.emplace("head.w", std::move(hw));
        p.tensors.emplace("head.b", Tensor<T>({cfg_.classes}));
        return p;
    }

    // x: batch * super_channels images of input_hw^2 values, image-major.
    // boxes: one per (sample, channel). seeds: one noise stream per image,
    // used only in train mode. update_running folds this batch's statistics
    // into the running estimates of `params`. `out` is reusable; repeated
    // calls of equal batch size allocate nothing.
    void forward(ParamSet<T>& params, const T* x, int batch, const BBox* boxes, Mode mode,
                 const std::uint64_t* seeds, bool need_grads, bool update_running,
                 BatchOut<T>& out) const {
        const bool train = mode == Mode::Train;
        const int n = batch * cfg_.super_channels;
        const int stages = cfg_.stage_count();
        out.batch = batch;
        out.n = n;
        out.stage_in.resize(static_cast<std::size_t>(stages));
        if (need_grads) {
            out.lrelu_mask.resize(static_cast<std::size_t>(stages));
            out.xhat.resize(static_cast<std::size_t>(stages));
            out.bn_stats.resize(static_cast<std::size_t>(stages));
            out.pool_argmax.resize(3);
            out.drop_mask.resize(3);
        }

        // input noise
        auto& x0 = out.stage_in[0];
        x0.resize(static_cast<std::size_t>(n) * cfg_.pixels());
        if (train) {
            layers::gaussian_noise_forward(x, n, cfg_.pixels(), cfg_.noise_sigma, seeds,
                                           kNoiseTag, x0.data());
        } else {
            std::memcpy(x0.data(), x, sizeof(T) * x0.size());
        }

        int h = cfg_.input_hw;
        int cin = 1;
        int pool_idx = 0;
        auto& work1 = out.scratch_a;
        auto& work2 = out.scratch_b;
        for (int s = 0; s < stages; ++s) {
            const int cout = cfg_.stage_width(s);
            const std::int64_t hw = static_cast<std::int64_t>(h) * h;
            const std::int64_t cnt = static_cast<std::int64_t>(n) * hw * cout;
            const T* src = out.stage_in[static_cast<std::size_t>(s)].data();

            work1.resize(static_cast<std::size_t>(cnt));
            layers::conv_forward(src, n, h, h, cin, cfg_.is_pointwise(s) ? 1 : 3,
                                 params.tensors.at(conv_name(s) + ".w").data(),
                                 params.tensors.at(conv_name(s) + ".b").data(), cout,
                                 work1.data());

            std::uint8_t* maskp = nullptr;
            if (need_grads) {
                out.lrelu_mask[static_cast<std::size_t>(s)].resize(static_cast<std::size_t>(cnt));
                maskp = out.lrelu_mask[static_cast<std::size_t>(s)].data();
            }
            work2.resize(static_cast<std::size_t>(cnt));
            layers::lrelu_forward(work1.data(), cnt, static_cast<T>(cfg_.lrelu_alpha),
                                  work2.data(), maskp);

            T* xhatp = nullptr;
            layers::BnStats* statp = nullptr;
            if (need_grads) {
                out.xhat[static_cast<std::size_t>(s)].resize(static_cast<std::size_t>(cnt));
                xhatp = out.xhat[static_cast<std::size_t>(s)].data();
                statp = &out.bn_stats[static_cast<std::size_t>(s)];
            }
            // where the batchnorm output lands: the next stage's input, the
            // final feature map, or (before a pool) a scratch buffer
            const bool pools = cfg_.pool_after(s);
            std::vector<T>& bn_dst = pools ? work1
                                   : s + 1 < stages ? out.stage_in[static_cast<std::size_t>(s + 1)]
                                                    : out.fmap;
            bn_dst.resize(static_cast<std::size_t>(cnt));
            layers::batchnorm_forward(work2.data(), n, hw, cout,
                                      params.tensors.at(bn_name(s) + ".gamma").data(),
                                      params.tensors.at(bn_name(s) + ".beta").data(),
                                      params.state.at(bn_name(s) + ".mean").data(),
                                      params.state.at(bn_name(s) + ".var").data(), train,
                                      train && update_running, cfg_.bn_momentum, cfg_.bn_eps,
                                      bn_dst.data(), xhatp, statp);

            if (pools) {
                const int h2 = h / 2;
                const std::int64_t pcnt = static_cast<std::int64_t>(n) * h2 * h2 * cout;
                auto& next = out.stage_in[static_cast<std::size_t>(s + 1)];
                next.resize(static_cast<std::size_t>(pcnt));
                std::uint8_t* argp;
                if (need_grads) {
                    out.pool_argmax[static_cast<std::size_t>(pool_idx)].resize(
                        static_cast<std::size_t>(pcnt));
                    argp = out.pool_argmax[static_cast<std::size_t>(pool_idx)].data();
                } else {
                    out.scratch_mask.resize(static_cast<std::size_t>(pcnt));
                    argp = out.scratch_mask.data();
                }
                if (train) {
                    work2.resize(static_cast<std::size_t>(pcnt));
                    layers::maxpool_forward(bn_dst.data(), n, h, h, cout, work2.data(), argp);
                    std::uint8_t* dmask;
                    if (need_grads) {
                        out.drop_mask[static_cast<std::size_t>(pool_idx)].resize(
                            static_cast<std::size_t>(pcnt));
                        dmask = out.drop_mask[static_cast<std::size_t>(pool_idx)].data();
                    } else {
                        out.scratch_mask.resize(static_cast<std::size_t>(pcnt));
                        dmask = out.scratch_mask.data();
                    }
                    layers::dropout_forward(work2.data(), n,
                                            static_cast<std::int64_t>(h2) * h2 * cout,
                                            cfg_.dropout_p, seeds, kDropTagBase + pool_idx,
                                            next.data(), dmask);
                } else {
                    layers::maxpool_forward(bn_dst.data(), n, h, h, cout, next.data(), argp);
                }
                h = h2;
                ++pool_idx;
            }
            cin = cout;
        }

        // RoI pooling per (sample, channel), then concatenation.
        const int fh = cfg_.feature_hw();
        const int fc = cfg_.feature_channels();
        const int bins = cfg_.roi_bins;
        const int per_img = bins * bins * fc;
        const int e = cfg_.embedding_dim();
        out.concat.resize(static_cast<std::size_t>(batch) * e);
        out.regions.resize(static_cast<std::size_t>(n));
        if (need_grads) out.roi_argmax.resize(static_cast<std::size_t>(n) * per_img);
    NTL_PARALLEL_FOR
        for (int i = 0; i < n; ++i) {
            out.regions[static_cast<std::size_t>(i)] = project_roi(boxes[i], cfg_.input_hw, fh);
            detail::roi_pool_one(out.fmap.data() + static_cast<std::int64_t>(i) * fh * fh * fc, fh,
                                 fh, fc, out.regions[static_cast<std::size_t>(i)], bins,
                                 out.concat.data() + static_cast<std::int64_t>(i) * per_img,
                                 need_grads
                                     ? out.roi_argmax.data() + static_cast<std::int64_t>(i) * per_img
                                     : nullptr);
        }

        out.logits.resize(static_cast<std::size_t>(batch) * cfg_.classes);
        out.probs.resize(out.logits.size());
        layers::dense_forward(out.concat.data(), batch, e, params.tensors.at("head.w").data(),
                              params.tensors.at("head.b").data(), cfg_.classes,
                              out.logits.data());
        layers::softmax_rows(out.logits.data(), batch, cfg_.classes, out.probs.data());
    }

    BatchOut<T> forward(ParamSet<T>& params, const T* x, int batch, const BBox* boxes, Mode mode,
                        const std::uint64_t* seeds, bool need_grads, bool update_running) const {
        BatchOut<T> out;
        forward(params, x, batch, boxes, mode, seeds, need_grads, update_running, out);
        return out;
    }

    // dlogits: [batch, classes]; dconcat_extra: optional [batch, embedding]
    // gradient flowing directly into the concatenated embedding (contrastive
    // loss path). Fills `grads` with gradients for every trainable tensor;
    // `grads` and `ws` are reusable across calls.
    void backward(const ParamSet<T>& params, const BatchOut<T>& acts, const T* dlogits,
                  const T* dconcat_extra, std::map<std::string, Tensor<T>>& grads,
                  BackwardScratch<T>& ws) const {
        const int batch = acts.batch;
        const int n = acts.n;
        const int e = cfg_.embedding_dim();
        const int fh = cfg_.feature_hw();
        const int fc = cfg_.feature_channels();
        const int bins = cfg_.roi_bins;
        const int per_img = bins * bins * fc;

        if (grads.empty())
            for (const auto& [name, t] : params.tensors) grads.emplace(name, Tensor<T>(t.shape));

        // head
        ws.dconcat.resize(static_cast<std::size_t>(batch) * e);
        layers::dense_backward(acts.concat.data(), dlogits, batch, e,
                               params.tensors.at("head.w").data(), cfg_.classes, ws.dconcat.data(),
                               grads.at("head.w").data(), grads.at("head.b").data());
        if (dconcat_extra)
            for (std::size_t i = 0; i < ws.dconcat.size(); ++i) ws.dconcat[i] += dconcat_extra[i];

        // RoI scatter, straight into the first rotating gradient buffer
        auto& dfmap = ws.ring[0];
        dfmap.resize(static_cast<std::size_t>(n) * fh * fh * fc);
        std::fill(dfmap.begin(), dfmap.end(), T(0));
    NTL_PARALLEL_FOR
        for (int i = 0; i < n; ++i) {
            const T* g = ws.dconcat.data() + static_cast<std::int64_t>(i) * per_img;
            const std::uint8_t* am = acts.roi_argmax.data() + static_cast<std::int64_t>(i) * per_img;
            T* df = dfmap.data() + static_cast<std::int64_t>(i) * fh * fh * fc;
            for (int bin = 0; bin < bins * bins; ++bin)
                for (int k = 0; k < fc; ++k)
                    df[static_cast<std::int64_t>(am[bin * fc + k]) * fc + k] += g[bin * fc + k];
        }

        // conv stack in reverse, rotating through three gradient buffers so
        // no kernel ever writes the buffer it reads
        const int stages = cfg_.stage_count();
        const auto trace = cfg_.spatial_trace();
        int ring = 0;
        auto next_buf = [&]() -> std::vector<T>& {
            ring = (ring + 1) % 3;
            return ws.ring[ring];
        };
        std::vector<T>* dcur = &dfmap;
        int pool_idx = 2;
        for (int s = stages - 1; s >= 0; --s) {
            const int h = trace[static_cast<std::size_t>(s)];
            const std::int64_t hw = static_cast<std::int64_t>(h) * h;
            const int cout = cfg_.stage_width(s);
            const int cin = s == 0 ? 1 : cfg_.stage_width(s - 1);
            const std::int64_t cnt = static_cast<std::int64_t>(n) * hw * cout;

            if (cfg_.pool_after(s)) {
                // *dcur is at the (pooled, dropped) resolution
                const int h2 = h / 2;
                const std::int64_t pcnt = static_cast<std::int64_t>(n) * h2 * h2 * cout;
                auto& dpool = next_buf();
                dpool.resize(static_cast<std::size_t>(pcnt));
                layers::dropout_backward(
                    acts.drop_mask[static_cast<std::size_t>(pool_idx)].data(), dcur->data(), pcnt,
                    cfg_.dropout_p, dpool.data());
                auto& dbn = next_buf();
                dbn.resize(static_cast<std::size_t>(cnt));
                layers::maxpool_backward(acts.pool_argmax[static_cast<std::size_t>(pool_idx)].data(),
                                         dpool.data(), n, h, h, cout, dbn.data());
                --pool_idx;
                dcur = &dbn;
            }

            auto& dact = next_buf();
            dact.resize(static_cast<std::size_t>(cnt));
            layers::batchnorm_backward(acts.xhat[static_cast<std::size_t>(s)].data(), dcur->data(),
                                       n, hw, cout,
                                       params.tensors.at(bn_name(s) + ".gamma").data(),
                                       acts.bn_stats[static_cast<std::size_t>(s)],
                                       dact.data(), grads.at(bn_name(s) + ".gamma").data(),
                                       grads.at(bn_name(s) + ".beta").data());
            auto& dconv = next_buf();
            dconv.resize(static_cast<std::size_t>(cnt));
            layers::lrelu_backward(acts.lrelu_mask[static_cast<std::size_t>(s)].data(),
                                   dact.data(), cnt, static_cast<T>(cfg_.lrelu_alpha),
                                   dconv.data());

            std::vector<T>* dprev = nullptr;
            if (s > 0) {
                dprev = &next_buf();
                dprev->resize(static_cast<std::size_t>(n) * hw * cin);
            }
            layers::conv_backward(acts.stage_in[static_cast<std::size_t>(s)].data(), dconv.data(),
                                  n, h, h, cin, cfg_.is_pointwise(s) ? 1 : 3,
                                  params.tensors.at(conv_name(s) + ".w").data(), cout,
                                  dprev ? dprev->data() : nullptr,
                                  grads.at(conv_name(s) + ".w").data(),
                                  grads.at(conv_name(s) + ".b").data());
            dcur = dprev;
        }
    }

    std::map<std::string, Tensor<T>> backward(const ParamSet<T>& params, const BatchOut<T>& acts,
                                              const T* dlogits, const T* dconcat_extra) const {
        std::map<std::string, Tensor<T>> grads;
        BackwardScratch<T> ws;
        backward(params, acts, dlogits, dconcat_extra, grads, ws);
        return grads;
    }

    // Evaluates one sample deterministically (teacher-style inference).
    ForwardOutput<T> inference_forward(ParamSet<T>& params, const SuperImage& sample,
                                       bool use_roi = true) const {
        std::vector<T> x(static_cast<std::size_t>(cfg_.super_channels) * cfg_.pixels());
        std::vector<BBox> boxes(static_cast<std::size_t>(cfg_.super_channels));
        stage_sample(sample, use_roi, x.data(), boxes.data());
        auto out = forward(params, x.data(), 1, boxes.data(), Mode::Eval, nullptr, false, false);
        ForwardOutput<T> fo;
        fo.logits = {out.logits[0], out.logits[1]};
        fo.probs = {out.probs[0], out.probs[1]};
        fo.embedding = std::move(out.concat);
        return fo;
    }

    // Copies one super image into the network input layout; full-image boxes
    // substitute for the pattern boxes when RoI pooling is disabled.
    void stage_sample(const SuperImage& sample, bool use_roi, T* x, BBox* boxes) const {
        if (cfg_.super_channels != kChannels || cfg_.input_hw != kGrid)
            throw config_error("network configuration does not match super-image geometry");
        for (int ch = 0; ch < cfg_.super_channels; ++ch) {
            const auto& src = sample.channels[static_cast<std::size_t>(ch)];
            T* dst = x + static_cast<std::int64_t>(ch) * cfg_.pixels();
            for (int i = 0; i < cfg_.pixels(); ++i) dst[i] = static_cast<T>(src[static_cast<std::size_t>(i)]);
            boxes[ch] = use_roi ? sample.bboxes[static_cast<std::size_t>(ch)]
                                : BBox{0, 0, kGrid - 1, kGrid - 1};
        }
    }

    static std::string conv_name(int s) { return "conv" + std::to_string(s); }
    static std::string bn_name(int s) { return "bn" + std::to_string(s); }

private:
    static constexpr std::uint64_t kNoiseTag = 1;
    static constexpr std::uint64_t kDropTagBase = 101;
    static constexpr std::uint64_t kInitTag = 0x696e6974;
    NetConfig cfg_;
};

// Closed-form trainable parameter total for a configuration; kept separate
// from ParamSet so tests can cross-check the registry.
inline std::int64_t expected_parameter_count(const NetConfig& cfg) {
    std::int64_t total = 0;
    int cin = 1;
    for (int s = 0; s < cfg.stage_count(); ++s) {
        const int cout = cfg.stage_width(s);
        const int k = cfg.is_pointwise(s) ? 1 : 9;
        total += static_cast<std::int64_t>(k) * cin * cout + cout;  // conv w + b
        total += 2 * cout;                                          // bn gamma + beta
        cin = cout;
    }
    total += static_cast<std::int64_t>(cfg.embedding_dim()) * cfg.classes + cfg.classes;
    return total;
}

// ---- checkpoint: text manifest + raw little-endian float32 blob ----

namespace detail {

template <typename T>
inline void manifest_section(std::ostream& m, const char* section,
                             const std::map<std::string, Tensor<T>>& tensors,
                             std::int64_t& offset) {
    for (const auto& [name, t] : tensors) {
        m << "tensor " << section << '/' << name << " f32 " << t.shape.size();
        for (int d : t.shape) m << ' ' << d;
        m << ' ' << offset << ' ' << t.size() << '\n';
        offset += t.size();
    }
}

template <typename T>
inline void blob_section(std::ostream& b, const std::map<std::string, Tensor<T>>& tensors) {
    for (const auto& [name, t] : tensors)
        for (const T v : t.v) {
            const float f = static_cast<float>(v);
            b.write(reinterpret_cast<const char*>(&f), sizeof(float));
        }
}

}  // namespace detail

inline std::string netconfig_line(const NetConfig& c) {
    std::ostringstream os;
    os << "net " << c.input_hw << ' ' << c.super_channels << ' ' << c.roi_bins << ' ' << c.classes
       << ' ' << c.conv_widths.size();
    for (int w : c.conv_widths) os << ' ' << w;
    os << ' ' << c.pointwise_widths.size();
    for (int w : c.pointwise_widths) os << ' ' << w;
    return os.str();
}

template <typename T>
inline void save_checkpoint(const std::string& prefix, const NetConfig& cfg,
                            const ParamSet<T>& student, const ParamSet<T>& teacher,
                            bool roi_pooling = true) {
    std::ofstream m(prefix + ".manifest");
    if (!m) throw io_error("cannot open '" + prefix + ".manifest' for writing");
    std::ofstream b(prefix + ".blob", std::ios::binary);
    if (!b) throw io_error("cannot open '" + prefix + ".blob' for writing");
    m << "ntl-checkpoint 1\n"
      << netconfig_line(cfg) << "\nroi " << (roi_pooling ? 1 : 0) << "\nstep " << student.step
      << '\n';
    std::int64_t offset = 0;
    detail::manifest_section(m, "student", student.tensors, offset);
    detail::manifest_section(m, "student_state", student.state, offset);
    detail::manifest_section(m, "teacher", teacher.tensors, offset);
    detail::manifest_section(m, "teacher_state", teacher.state, offset);
    detail::blob_section(b, student.tensors);
    detail::blob_section(b, student.state);
    detail::blob_section(b, teacher.tensors);
    detail::blob_section(b, teacher.state);
    if (!m || !b) throw io_error("checkpoint write failed for prefix '" + prefix + "'");
}

struct Checkpoint {
    NetConfig config;
    ParamSet<float> student;
    ParamSet<float> teacher;
    bool roi_pooling = true;
};

inline Checkpoint load_checkpoint(const std::string& prefix) {
    std::ifstream m(prefix + ".manifest");
    if (!m) throw io_error("cannot open checkpoint manifest '" + prefix + ".manifest'");
    std::ifstream b(prefix + ".blob", std::ios::binary);
    if (!b) throw io_error("cannot open checkpoint blob '" + prefix + ".blob'");

    Checkpoint ck;
    std::string line;
    if (!std::getline(m, line) || line != "ntl-checkpoint 1")
        throw io_error("bad checkpoint manifest header");
    if (!std::getline(m, line)) throw io_error("truncated checkpoint manifest");
    {
        std::istringstream is(line);
        std::string tag;
        std::size_t n3, npw;
        is >> tag >> ck.config.input_hw >> ck.config.super_channels >> ck.config.roi_bins >>
            ck.config.classes >> n3;
        if (tag != "net" || !is) throw io_error("bad net line in checkpoint manifest");
        ck.config.conv_widths.resize(n3);
        for (auto& w : ck.config.conv_widths) is >> w;
        is >> npw;
        ck.config.pointwise_widths.resize(npw);
        for (auto& w : ck.config.pointwise_widths) is >> w;
        if (!is) throw io_error("bad net line in checkpoint manifest");
    }
    if (!std::getline(m, line) || line.rfind("roi ", 0) != 0)
        throw io_error("missing roi line in checkpoint manifest");
    ck.roi_pooling = line.substr(4) != "0";
    std::int64_t step = 0;
    if (!std::getline(m, line) || line.rfind("step ", 0) != 0)
        throw io_error("missing step line in checkpoint manifest");
    step = std::stoll(line.substr(5));
    ck.student.step = ck.teacher.step = step;

    while (std::getline(m, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string tag, qual, dtype;
        std::size_t rank;
        is >> tag >> qual >> dtype >> rank;
        if (tag != "tensor" || dtype != "f32" || !is)
            throw io_error("bad tensor line in checkpoint manifest: " + line);
        std::vector<int> shape(rank);
        for (auto& d : shape) is >> d;
        std::int64_t offset = 0, count = 0;
        is >> offset >> count;
        if (!is) throw io_error("bad tensor line in checkpoint manifest: " + line);
        const auto slash = qual.find('/');
        if (slash == std::string::npos) throw io_error("bad tensor name: " + qual);
        const std::string section = qual.substr(0, slash);
        const std::string name = qual.substr(slash + 1);
        Tensor<float> t;
        t.shape = shape;
        if (Tensor<float>::count(shape) != count)
            throw io_error("tensor shape/count mismatch for " + qual);
        t.v.resize(static_cast<std::size_t>(count));
        b.seekg(offset * static_cast<std::int64_t>(sizeof(float)));
        b.read(reinterpret_cast<char*>(t.v.data()),
               static_cast<std::streamsize>(sizeof(float) * t.v.size()));
        if (!b) throw io_error("checkpoint blob truncated at " + qual);
        if (section == "student") ck.student.tensors.emplace(name, std::move(t));
        else if (section == "student_state") ck.student.state.emplace(name, std::move(t));
        else if (section == "teacher") ck.teacher.tensors.emplace(name, std::move(t));
        else if (section == "teacher_state") ck.teacher.state.emplace(name, std::move(t));
        else throw io_error("unknown checkpoint section: " + section);
    }
    return ck;
}

}  // namespace ntl
