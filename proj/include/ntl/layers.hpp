#pragma once

// Batched layer primitives in NHWC layout. Convolutions go through per-image
// im2col + GEMM. Every reduction that crosses images (weight gradients, batch
// statistics) is accumulated in a fixed order, so results do not depend on
// the number of worker threads.

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "ntl/common.hpp"
#include "ntl/rng.hpp"
#include "ntl/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
// collapses to a serial loop when already inside a parallel region
#define NTL_PARALLEL_FOR _Pragma("omp parallel for schedule(static) if(!omp_in_parallel())")
#else
#define NTL_PARALLEL_FOR
#endif

namespace ntl {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;

namespace layers {

inline constexpr int kGradChunks = 8;  // fixed accumulation granularity

inline std::pair<std::int64_t, std::int64_t> chunk_range(std::int64_t n, int chunk) {
    const std::int64_t lo = n * chunk / kGradChunks;
    const std::int64_t hi = n * (chunk + 1) / kGradChunks;
    return {lo, hi};
}

// ---- im2col for 3x3 same-padding convolution ----
// col is [H*W, 9*C]; column block (dy,dx) holds the C input values at the
// shifted position, zero outside the image.
template <typename T>
inline void im2col3(const T* in, int h, int w, int c, T* col) {
    const int kc = 9 * c;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            T* dst = col + (static_cast<std::int64_t>(y) * w + x) * kc;
            for (int dy = -1; dy <= 1; ++dy) {
                const int yy = y + dy;
                for (int dx = -1; dx <= 1; ++dx) {
                    const int xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) {
                        std::memset(dst, 0, sizeof(T) * static_cast<std::size_t>(c));
                    } else {
                        std::memcpy(dst, in + (static_cast<std::int64_t>(yy) * w + xx) * c,
                                    sizeof(T) * static_cast<std::size_t>(c));
                    }
                    dst += c;
                }
            }
        }
    }
}

// col2im scatter-add, the adjoint of im2col3.
template <typename T>
inline void col2im3(const T* col, int h, int w, int c, T* in) {
    const int kc = 9 * c;
    std::memset(in, 0, sizeof(T) * static_cast<std::size_t>(h) * w * c);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const T* src = col + (static_cast<std::int64_t>(y) * w + x) * kc;
            for (int dy = -1; dy <= 1; ++dy) {
                const int yy = y + dy;
                for (int dx = -1; dx <= 1; ++dx) {
                    const int xx = x + dx;
                    if (yy >= 0 && yy < h && xx >= 0 && xx < w) {
                        T* dst = in + (static_cast<std::int64_t>(yy) * w + xx) * c;
                        for (int k = 0; k < c; ++k) dst[k] += src[k];
                    }
                    src += c;
                }
            }
        }
    }
}

template <typename T>
inline std::vector<T>& scratch_buffer(int which, std::size_t n) {
    static thread_local std::vector<T> bufs[3];
    auto& b = bufs[which];
    if (b.size() < n) b.resize(n);
    return b;
}

// Convolution with same padding, kernel 3 or 1. in [N,H,W,Cin], w [K*Cin,Cout]
// (K = 9 or 1, offset-major then channel), b [Cout], out [N,H,W,Cout].
template <typename T>
inline void conv_forward(const T* in, int n, int h, int w, int cin, int kernel, const T* wgt,
                         const T* bias, int cout, T* out) {
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    const int kc = (kernel == 3 ? 9 : 1) * cin;
    CMapM<T> wm(wgt, kc, cout);
    NTL_PARALLEL_FOR
    for (int i = 0; i < n; ++i) {
        const T* img = in + i * hw * cin;
        T* dst = out + i * hw * cout;
        MapM<T> om(dst, hw, cout);
        if (kernel == 3) {
            auto& col = scratch_buffer<T>(0, static_cast<std::size_t>(hw) * kc);
            im2col3(img, h, w, cin, col.data());
            CMapM<T> cm(col.data(), hw, kc);
            om.noalias() = cm * wm;
        } else {
            CMapM<T> cm(img, hw, cin);
            om.noalias() = cm * wm;
        }
        om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias, cout);
    }
}

// Backward pass; grad_in may be null for the first layer.
template <typename T>
inline void conv_backward(const T* in, const T* gout, int n, int h, int w, int cin, int kernel,
                          const T* wgt, int cout, T* grad_in, T* grad_w, T* grad_b) {
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    const int kc = (kernel == 3 ? 9 : 1) * cin;
    CMapM<T> wm(wgt, kc, cout);

    std::vector<MatRM<T>> wpart(kGradChunks);
    std::vector<MatRM<T>> bpart(kGradChunks);
    NTL_PARALLEL_FOR
    for (int chunk = 0; chunk < kGradChunks; ++chunk) {
        auto [lo, hi] = chunk_range(n, chunk);
        auto& wp = wpart[static_cast<std::size_t>(chunk)];
        auto& bp = bpart[static_cast<std::size_t>(chunk)];
        wp.setZero(kc, cout);
        bp.setZero(1, cout);
        for (std::int64_t i = lo; i < hi; ++i) {
            const T* img = in + i * hw * cin;
            const T* g = gout + i * hw * cout;
            CMapM<T> gm(g, hw, cout);
            if (kernel == 3) {
                auto& col = scratch_buffer<T>(0, static_cast<std::size_t>(hw) * kc);
                im2col3(img, h, w, cin, col.data());
                CMapM<T> cm(col.data(), hw, kc);
                wp.noalias() += cm.transpose() * gm;
                if (grad_in) {
                    auto& gcol = scratch_buffer<T>(1, static_cast<std::size_t>(hw) * kc);
                    MapM<T> gcm(gcol.data(), hw, kc);
                    gcm.noalias() = gm * wm.transpose();
                    col2im3(gcol.data(), h, w, cin, grad_in + i * hw * cin);
                }
            } else {
                CMapM<T> cm(img, hw, cin);
                wp.noalias() += cm.transpose() * gm;
                if (grad_in) {
                    MapM<T> gim(grad_in + i * hw * cin, hw, cin);
                    gim.noalias() = gm * wm.transpose();
                }
            }
            bp.noalias() += gm.colwise().sum();
        }
    }
    MapM<T> gw(grad_w, kc, cout);
    MapM<T> gb(grad_b, 1, cout);
    gw.setZero();
    gb.setZero();
    for (int chunk = 0; chunk < kGradChunks; ++chunk) {
        gw.noalias() += wpart[static_cast<std::size_t>(chunk)];
        gb.noalias() += bpart[static_cast<std::size_t>(chunk)];
    }
}

// Leaky ReLU; mask records sign for the backward pass (1 where input > 0).
// out = max(x, alpha*x) is branchless and exact for alpha in (0,1).
template <typename T>
inline void lrelu_forward(const T* in, std::int64_t n, T alpha, T* out, std::uint8_t* mask) {
    NTL_PARALLEL_FOR
    for (std::int64_t i = 0; i < n; ++i) {
        const T x = in[i];
        const T ax = alpha * x;
        out[i] = x > ax ? x : ax;
    }
    if (mask) {
    NTL_PARALLEL_FOR
        for (std::int64_t i = 0; i < n; ++i) mask[i] = in[i] > T(0);
    }
}

template <typename T>
inline void lrelu_backward(const std::uint8_t* mask, const T* gout, std::int64_t n, T alpha,
                           T* gin) {
    NTL_PARALLEL_FOR
    for (std::int64_t i = 0; i < n; ++i) gin[i] = mask[i] ? gout[i] : alpha * gout[i];
}

struct BnStats {
    std::vector<double> mean;
    std::vector<double> invstd;
};

// Batch normalization over the (N,H,W) axes per channel. Train mode uses
// batch statistics (optionally folding them into the running estimates);
// eval mode uses the running estimates. xhat is cached for the backward pass.
template <typename T>
inline void batchnorm_forward(const T* in, int n, std::int64_t hw, int c, const T* gamma,
                              const T* beta, T* running_mean, T* running_var, bool train,
                              bool update_running, double momentum, double eps, T* out, T* xhat,
                              BnStats* stats) {
    const std::int64_t rows = static_cast<std::int64_t>(n) * hw;
    std::vector<double> mean(static_cast<std::size_t>(c)), invstd(static_cast<std::size_t>(c));
    if (train) {
        // two-pass, per-image partials in double, reduced in fixed order
        std::vector<double> part(static_cast<std::size_t>(n) * c, 0.0);
    NTL_PARALLEL_FOR
        for (int i = 0; i < n; ++i) {
            double* s = part.data() + static_cast<std::int64_t>(i) * c;
            const T* p = in + i * hw * c;
            for (std::int64_t r = 0; r < hw; ++r, p += c)
                for (int k = 0; k < c; ++k) s[k] += p[k];
        }
        for (int k = 0; k < c; ++k) mean[static_cast<std::size_t>(k)] = 0.0;
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < c; ++k)
                mean[static_cast<std::size_t>(k)] += part[static_cast<std::size_t>(i) *
                                                              static_cast<std::size_t>(c) +
                                                          static_cast<std::size_t>(k)];
        for (int k = 0; k < c; ++k) mean[static_cast<std::size_t>(k)] /= static_cast<double>(rows);
        std::fill(part.begin(), part.end(), 0.0);
    NTL_PARALLEL_FOR
        for (int i = 0; i < n; ++i) {
            double* s = part.data() + static_cast<std::int64_t>(i) * c;
            const T* p = in + i * hw * c;
            for (std::int64_t r = 0; r < hw; ++r, p += c)
                for (int k = 0; k < c; ++k) {
                    const double d = static_cast<double>(p[k]) - mean[static_cast<std::size_t>(k)];
                    s[k] += d * d;
                }
        }
        std::vector<double> var(static_cast<std::size_t>(c), 0.0);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < c; ++k)
                var[static_cast<std::size_t>(k)] += part[static_cast<std::size_t>(i) *
                                                             static_cast<std::size_t>(c) +
                                                         static_cast<std::size_t>(k)];
        for (int k = 0; k < c; ++k) {
            var[static_cast<std::size_t>(k)] /= static_cast<double>(rows);
            invstd[static_cast<std::size_t>(k)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(k)] + eps);
        }
        if (update_running) {
            for (int k = 0; k < c; ++k) {
                running_mean[k] = static_cast<T>(momentum * static_cast<double>(running_mean[k]) +
                                                 (1.0 - momentum) * mean[static_cast<std::size_t>(k)]);
                running_var[k] = static_cast<T>(momentum * static_cast<double>(running_var[k]) +
                                                (1.0 - momentum) * var[static_cast<std::size_t>(k)]);
            }
        }
    } else {
        for (int k = 0; k < c; ++k) {
            mean[static_cast<std::size_t>(k)] = static_cast<double>(running_mean[k]);
            invstd[static_cast<std::size_t>(k)] =
                1.0 / std::sqrt(static_cast<double>(running_var[k]) + eps);
        }
    }

    // per-channel affine constants keep the hot loop in T arithmetic
    std::vector<T> cm(static_cast<std::size_t>(c)), ci(static_cast<std::size_t>(c)),
        cs(static_cast<std::size_t>(c)), cb(static_cast<std::size_t>(c));
    for (int k = 0; k < c; ++k) {
        cm[static_cast<std::size_t>(k)] = static_cast<T>(mean[static_cast<std::size_t>(k)]);
        ci[static_cast<std::size_t>(k)] = static_cast<T>(invstd[static_cast<std::size_t>(k)]);
        cs[static_cast<std::size_t>(k)] = static_cast<T>(static_cast<double>(gamma[k]) *
                                                         invstd[static_cast<std::size_t>(k)]);
        cb[static_cast<std::size_t>(k)] =
            static_cast<T>(static_cast<double>(beta[k]) -
                           static_cast<double>(gamma[k]) * invstd[static_cast<std::size_t>(k)] *
                               mean[static_cast<std::size_t>(k)]);
    }
    NTL_PARALLEL_FOR
    for (int i = 0; i < n; ++i) {
        const T* p = in + i * hw * c;
        T* o = out + i * hw * c;
        T* xh = xhat ? xhat + i * hw * c : nullptr;
        for (std::int64_t r = 0; r < hw; ++r, p += c, o += c) {
            for (int k = 0; k < c; ++k) o[k] = cs[static_cast<std::size_t>(k)] * p[k] + cb[static_cast<std::size_t>(k)];
            if (xh) {
                for (int k = 0; k < c; ++k)
                    xh[k] = (p[k] - cm[static_cast<std::size_t>(k)]) * ci[static_cast<std::size_t>(k)];
                xh += c;
            }
        }
    }
    if (stats) {
        stats->mean = std::move(mean);
        stats->invstd = std::move(invstd);
    }
}

template <typename T>
inline void batchnorm_backward(const T* xhat, const T* gout, int n, std::int64_t hw, int c,
                               const T* gamma, const BnStats& stats, T* gin, T* ggamma, T* gbeta) {
    const double m = static_cast<double>(n) * static_cast<double>(hw);
    std::vector<double> part(static_cast<std::size_t>(n) * c * 2, 0.0);
    NTL_PARALLEL_FOR
    for (int i = 0; i < n; ++i) {
        double* s1 = part.data() + static_cast<std::int64_t>(i) * c * 2;
        double* s2 = s1 + c;
        const T* g = gout + i * hw * c;
        const T* xh = xhat + i * hw * c;
        for (std::int64_t r = 0; r < hw; ++r, g += c, xh += c)
            for (int k = 0; k < c; ++k) {
                s1[k] += g[k];
                s2[k] += static_cast<double>(g[k]) * xh[k];
            }
    }
    std::vector<double> s1(static_cast<std::size_t>(c), 0.0), s2(static_cast<std::size_t>(c), 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < c; ++k) {
            s1[static_cast<std::size_t>(k)] += part[static_cast<std::size_t>(i * c) * 2 + static_cast<std::size_t>(k)];
            s2[static_cast<std::size_t>(k)] += part[static_cast<std::size_t>(i * c) * 2 +
                                                    static_cast<std::size_t>(c) +
                                                    static_cast<std::size_t>(k)];
        }
    for (int k = 0; k < c; ++k) {
        ggamma[k] = static_cast<T>(s2[static_cast<std::size_t>(k)]);
        gbeta[k] = static_cast<T>(s1[static_cast<std::size_t>(k)]);
    }
    // gin = gamma*invstd*(g - s1/m - xhat*s2/m), folded into T constants
    std::vector<T> ca(static_cast<std::size_t>(c)), c1(static_cast<std::size_t>(c)),
        c2(static_cast<std::size_t>(c));
    for (int k = 0; k < c; ++k) {
        const double a = static_cast<double>(gamma[k]) * stats.invstd[static_cast<std::size_t>(k)];
        ca[static_cast<std::size_t>(k)] = static_cast<T>(a);
        c1[static_cast<std::size_t>(k)] = static_cast<T>(a * s1[static_cast<std::size_t>(k)] / m);
        c2[static_cast<std::size_t>(k)] = static_cast<T>(a * s2[static_cast<std::size_t>(k)] / m);
    }
    NTL_PARALLEL_FOR
    for (int i = 0; i < n; ++i) {
        const T* g = gout + i * hw * c;
        const T* xh = xhat + i * hw * c;
        T* gi = gin + i * hw * c;
        for (std::int64_t r = 0; r < hw; ++r, g += c, xh += c, gi += c)
            for (int k = 0; k < c; ++k)
                gi[k] = ca[static_cast<std::size_t>(k)] * g[k] - c1[static_cast<std::size_t>(k)] -
                        c2[static_cast<std::size_t>(k)] * xh[k];
    }
}

// 2x2 max pooling with floor semantics (odd trailing row/column dropped).
// argmax stores the winning position (0..3) per output cell.
template <typename T>
inline void maxpool_forward(const T* in, int n, int h, int w, int c, T* out,
                            std::uint8_t* argmax) {
    const int h2 = h / 2, w2 = w / 2;
    NTL_PARALLEL_FOR
    for (int i = 0; i < n; ++i) {
        const T* img = in + static_cast<std::int64_t>(i) * h * w * c;
        T* o = out + static_cast<std::int64_t>(i) * h2 * w2 * c;
        std::uint8_t* am = argmax + static_cast<std::int64_t>(i) * h2 * w2 * c;
        for (int y = 0; y < h2; ++y)
            for (int x = 0; x < w2; ++x) {
                const std::int64_t o00 = (static_cast<std::int64_t>(2 * y) * w + 2 * x) * c;
                const std::int64_t base = (static_cast<std::int64_t>(y) * w2 + x) * c;
                for (int k = 0; k < c; ++k) {
                    T best = img[o00 + k];
                    std::uint8_t bi = 0;
                    const T v1 = img[o00 + c + k];
                    if (v1 > best) { best = v1; bi = 1; }
                    const T v2 = img[o00 + static_cast<std::int64_t>(w) * c + k];
                    if (v2 > best) { best = v2; bi = 2; }
                    const T v3 = img[o00 + static_cast<std::int64_t>(w) * c + c + k];
                    if (v3 > best) { best = v3; bi = 3; }
                    o[base + k] = best;
                    am[base + k] = bi;
                }
            }
    }
}

template <typename T>
inline void maxpool_backward(const std::uint8_t* argmax, const T* gout, int n, int h, int w,
                             int c, T* gin) {
    const int h2 = h / 2, w2 = w / 2;
    std::memset(gin, 0, sizeof(T) * static_cast<std::size_t>(n) * h * w * c);
    NTL_PARALLEL_FOR
    for (int i = 0; i < n; ++i) {
        const T* g = gout + static_cast<std::int64_t>(i) * h2 * w2 * c;
        const std::uint8_t* am = argmax + static_cast<std::int64_t>(i) * h2 * w2 * c;
        T* gi = gin + static_cast<std::int64_t>(i) * h * w * c;
        for (int y = 0; y < h2; ++y)
            for (int x = 0; x < w2; ++x) {
                const std::int64_t o00 = (static_cast<std::int64_t>(2 * y) * w + 2 * x) * c;
                const std::int64_t base = (static_cast<std::int64_t>(y) * w2 + x) * c;
                for (int k = 0; k < c; ++k) {
                    const std::uint8_t bi = am[base + k];
                    const std::int64_t off = (bi & 2 ? static_cast<std::int64_t>(w) * c : 0) +
                                             (bi & 1 ? c : 0);
                    gi[o00 + off + k] += g[base + k];
                }
            }
    }
}

// Inverted dropout driven by one RNG stream per image, so masks are
// reproducible independently of scheduling.
template <typename T>
inline void dropout_forward(const T* in, int n, std::int64_t per_image, double p,
                            const std::uint64_t* seeds, std::uint64_t layer_tag, T* out,
                            std::uint8_t* mask) {
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    NTL_PARALLEL_FOR
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seeds[i], layer_tag));
        const T* src = in + i * per_image;
        T* dst = out + i * per_image;
        std::uint8_t* m = mask + i * per_image;
        if (p == 0.5) {  // one engine draw yields 64 mask bits
            std::int64_t r = 0;
            while (r < per_image) {
                std::uint64_t bits = rng.raw();
                const std::int64_t end = std::min<std::int64_t>(r + 64, per_image);
                for (; r < end; ++r, bits >>= 1) m[r] = bits & 1u;
            }
        } else {
            for (std::int64_t r = 0; r < per_image; ++r) m[r] = !rng.bernoulli(p);
        }
        for (std::int64_t r = 0; r < per_image; ++r) dst[r] = m[r] ? src[r] * scale : T(0);
    }
}

template <typename T>
inline void dropout_backward(const std::uint8_t* mask, const T* gout, std::int64_t n, double p,
                             T* gin) {
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    NTL_PARALLEL_FOR
    for (std::int64_t i = 0; i < n; ++i) gin[i] = mask[i] ? gout[i] * scale : T(0);
}

// Additive Gaussian input noise; identity in eval mode (handled by caller).
template <typename T>
inline void gaussian_noise_forward(const T* in, int n, std::int64_t per_image, double sigma,
                                   const std::uint64_t* seeds, std::uint64_t layer_tag, T* out) {
    NTL_PARALLEL_FOR
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seeds[i], layer_tag));
        const T* src = in + i * per_image;
        T* dst = out + i * per_image;
        for (std::int64_t r = 0; r < per_image; ++r)
            dst[r] = src[r] + static_cast<T>(sigma * rng.gaussian());
    }
}

// Fully connected: out[N,K] = in[N,D] * w[D,K] + b
template <typename T>
inline void dense_forward(const T* in, int n, int d, const T* wgt, const T* bias, int k, T* out) {
    CMapM<T> im(in, n, d);
    CMapM<T> wm(wgt, d, k);
    MapM<T> om(out, n, k);
    om.noalias() = im * wm;
    om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias, k);
}

template <typename T>
inline void dense_backward(const T* in, const T* gout, int n, int d, const T* wgt, int k, T* gin,
                           T* grad_w, T* grad_b) {
    CMapM<T> im(in, n, d);
    CMapM<T> gm(gout, n, k);
    CMapM<T> wm(wgt, d, k);
    MapM<T>(grad_w, d, k).noalias() = im.transpose() * gm;
    MapM<T>(grad_b, 1, k).noalias() = gm.colwise().sum();
    if (gin) MapM<T>(gin, n, d).noalias() = gm * wm.transpose();
}

// Row-wise stable softmax.
template <typename T>
inline void softmax_rows(const T* logits, int n, int k, T* probs) {
    for (int i = 0; i < n; ++i) {
        const T* z = logits + static_cast<std::int64_t>(i) * k;
        T* p = probs + static_cast<std::int64_t>(i) * k;
        T mx = z[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, z[j]);
        double sum = 0.0;
        for (int j = 0; j < k; ++j) {
            const double e = std::exp(static_cast<double>(z[j] - mx));
            p[j] = static_cast<T>(e);
            sum += e;
        }
        for (int j = 0; j < k; ++j) p[j] = static_cast<T>(static_cast<double>(p[j]) / sum);
    }
}

}  // namespace layers
}  // namespace ntl
