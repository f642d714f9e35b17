#pragma once

// Mean-teacher training: 1:3 labeled/unlabeled mini-batches, cross-entropy +
// consistency + contrastive losses with a ramped unsupervised weight, Adam
// updates of the student, and an EMA teacher used for pseudo labels,
// validation, and final inference.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ntl/common.hpp"
#include "ntl/csv.hpp"
#include "ntl/evaluate.hpp"
#include "ntl/network.hpp"
#include "ntl/rng.hpp"

namespace ntl {

struct TrainConfig {
    std::int64_t iterations = 1000;
    int batch_size = 32;  // must be divisible by 4; 1:3 labeled/unlabeled
    double labeled_fraction = 0.25;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double ema_alpha = 0.99;
    double consistency_weight_max = 1.0;
    double ramp_fraction = 0.2;
    double margin = 1.0;
    std::uint64_t seed = 1;
    bool semi_supervised = true;
    bool triplet_loss = true;
    bool roi_pooling = true;
    int t_max_triplets = 4;
    std::int64_t validate_every = 200;
    std::int64_t validation_cap = 0;  // 0 = validate on the full pool

    void validate() const {
        if (iterations < 0) throw config_error("iterations must be >= 0");
        if (batch_size <= 0 || batch_size % 4 != 0)
            throw config_error("batch_size must be a positive multiple of 4");
        if (labeled_fraction <= 0.0 || labeled_fraction >= 1.0)
            throw config_error("labeled_fraction must lie in (0,1)");
        if (!(ema_alpha >= 0.0 && ema_alpha <= 1.0))
            throw config_error("ema_alpha must lie in [0,1]");
        if (ramp_fraction < 0.0 || ramp_fraction > 1.0)
            throw config_error("ramp_fraction must lie in [0,1]");
        if (margin < 0.0) throw config_error("margin must be >= 0");
        if (t_max_triplets < 1) throw config_error("t_max_triplets must be >= 1");
    }
    int labeled_per_batch() const {
        return std::max(1, static_cast<int>(std::lround(batch_size * labeled_fraction)));
    }
};

// ---- flat key=value config file ----

inline void serialize_train_config(const TrainConfig& c, std::ostream& out) {
    out << "iterations=" << c.iterations << '\n'
        << "batch_size=" << c.batch_size << '\n'
        << "labeled_fraction=" << format_double(c.labeled_fraction) << '\n'
        << "learning_rate=" << format_double(c.learning_rate) << '\n'
        << "beta1=" << format_double(c.beta1) << '\n'
        << "beta2=" << format_double(c.beta2) << '\n'
        << "adam_eps=" << format_double(c.adam_eps) << '\n'
        << "ema_alpha=" << format_double(c.ema_alpha) << '\n'
        << "consistency_weight_max=" << format_double(c.consistency_weight_max) << '\n'
        << "ramp_fraction=" << format_double(c.ramp_fraction) << '\n'
        << "margin=" << format_double(c.margin) << '\n'
        << "seed=" << c.seed << '\n'
        << "semi_supervised=" << (c.semi_supervised ? "true" : "false") << '\n'
        << "triplet_loss=" << (c.triplet_loss ? "true" : "false") << '\n'
        << "roi_pooling=" << (c.roi_pooling ? "true" : "false") << '\n'
        << "t_max_triplets=" << c.t_max_triplets << '\n'
        << "validate_every=" << c.validate_every << '\n'
        << "validation_cap=" << c.validation_cap << '\n';
}

inline TrainConfig parse_train_config(std::istream& in) {
    TrainConfig c;
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
        auto boolean = [&]() {
            if (val == "true" || val == "1") return true;
            if (val == "false" || val == "0") return false;
            throw config_error("config key '" + key + "': bad boolean value '" + val + "'");
        };
        if (key == "iterations") c.iterations = static_cast<std::int64_t>(num());
        else if (key == "batch_size") c.batch_size = static_cast<int>(num());
        else if (key == "labeled_fraction") c.labeled_fraction = num();
        else if (key == "learning_rate") c.learning_rate = num();
        else if (key == "beta1") c.beta1 = num();
        else if (key == "beta2") c.beta2 = num();
        else if (key == "adam_eps") c.adam_eps = num();
        else if (key == "ema_alpha") c.ema_alpha = num();
        else if (key == "consistency_weight_max") c.consistency_weight_max = num();
        else if (key == "ramp_fraction") c.ramp_fraction = num();
        else if (key == "margin") c.margin = num();
        else if (key == "seed") c.seed = static_cast<std::uint64_t>(num());
        else if (key == "semi_supervised") c.semi_supervised = boolean();
        else if (key == "triplet_loss") c.triplet_loss = boolean();
        else if (key == "roi_pooling") c.roi_pooling = boolean();
        else if (key == "t_max_triplets") c.t_max_triplets = static_cast<int>(num());
        else if (key == "validate_every") c.validate_every = static_cast<std::int64_t>(num());
        else if (key == "validation_cap") c.validation_cap = static_cast<std::int64_t>(num());
        else throw config_error("unknown config key '" + key + "'");
    }
    c.validate();
    return c;
}

// ---- Eq.-style primitives ----

// teacher <- alpha * teacher + (1 - alpha) * student, over every tensor
// including batchnorm running statistics.
template <typename T>
inline void ema_update(ParamSet<T>& teacher, const ParamSet<T>& student, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("ema alpha outside [0,1]");
    auto blend = [&](std::map<std::string, Tensor<T>>& dst,
                     const std::map<std::string, Tensor<T>>& src) {
        if (dst.size() != src.size())
            throw std::invalid_argument("ema_update: parameter sets differ in size");
        auto di = dst.begin();
        auto si = src.begin();
        for (; di != dst.end(); ++di, ++si) {
            if (di->first != si->first || !di->second.same_shape(si->second))
                throw std::invalid_argument("ema_update: name/shape mismatch at " + di->first);
            T* d = di->second.data();
            const T* s = si->second.data();
            const std::int64_t n = di->second.size();
            for (std::int64_t i = 0; i < n; ++i)
                d[i] = static_cast<T>(alpha * static_cast<double>(d[i]) +
                                      (1.0 - alpha) * static_cast<double>(s[i]));
        }
    };
    blend(teacher.tensors, student.tensors);
    blend(teacher.state, student.state);
    teacher.step = student.step;
}

// Mean over samples of the squared Euclidean distance between the student
// and teacher class-probability vectors.
template <typename T>
inline double consistency_loss(std::span<const T> student_probs, std::span<const T> teacher_probs,
                               int classes) {
    if (student_probs.size() != teacher_probs.size() || classes <= 0 ||
        student_probs.size() % static_cast<std::size_t>(classes) != 0)
        throw std::invalid_argument("consistency_loss: mismatched probability buffers");
    const std::size_t n = student_probs.size() / static_cast<std::size_t>(classes);
    if (n == 0) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < student_probs.size(); ++i) {
        const double d = static_cast<double>(student_probs[i]) - static_cast<double>(teacher_probs[i]);
        total += d * d;
    }
    return total / static_cast<double>(n);
}

// Contrastive pair term on unit-norm embeddings: pull same-class pairs
// together, push different-class pairs beyond the margin.
template <typename T>
inline double pair_loss(std::span<const T> hi, std::span<const T> hj, bool same_class,
                        double margin) {
    if (hi.size() != hj.size()) throw std::invalid_argument("pair_loss: dimension mismatch");
    double d2 = 0.0;
    for (std::size_t i = 0; i < hi.size(); ++i) {
        const double d = static_cast<double>(hi[i]) - static_cast<double>(hj[i]);
        d2 += d * d;
    }
    if (same_class) return d2;
    const double gap = margin - std::sqrt(d2);
    return gap > 0.0 ? gap * gap : 0.0;
}

struct Triplet {
    int anchor, positive, negative;
};

// For each anchor, up to t_max (positive, negative) pairs drawn uniformly
// without replacement from the valid combinations.
inline std::vector<Triplet> form_triplets(const std::vector<int>& labels, Rng& rng, int t_max) {
    const int n = static_cast<int>(labels.size());
    std::vector<Triplet> out;
    for (int i = 0; i < n; ++i) {
        std::vector<int> pos, neg;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            (labels[j] == labels[i] ? pos : neg).push_back(j);
        }
        if (pos.empty() || neg.empty()) continue;
        const std::uint64_t pairs =
            static_cast<std::uint64_t>(pos.size()) * static_cast<std::uint64_t>(neg.size());
        const std::uint64_t draws = std::min<std::uint64_t>(static_cast<std::uint64_t>(t_max), pairs);
        std::set<std::uint64_t> used;
        while (used.size() < draws) {
            const std::uint64_t r = rng.uniform_index(pairs);
            if (!used.insert(r).second) continue;
            out.push_back(Triplet{i, pos[static_cast<std::size_t>(r / neg.size())],
                                  neg[static_cast<std::size_t>(r % neg.size())]});
        }
    }
    return out;
}

// Sigmoid-shaped ramp of the unsupervised weight over the first
// ramp_fraction of the run.
inline double unsupervised_weight(std::int64_t step, const TrainConfig& cfg) {
    if (!cfg.semi_supervised) return 0.0;
    const double ramp_steps = std::max(1.0, cfg.ramp_fraction * static_cast<double>(cfg.iterations));
    const double x = std::min(1.0, static_cast<double>(step) / ramp_steps);
    return cfg.consistency_weight_max * std::exp(-5.0 * (1.0 - x) * (1.0 - x));
}

// ---- Adam ----

template <typename T>
struct AdamState {
    std::map<std::string, Tensor<T>> m, v;
    std::int64_t t = 0;
};

template <typename T>
inline void adam_update(ParamSet<T>& params, const std::map<std::string, Tensor<T>>& grads,
                        AdamState<T>& state, const TrainConfig& cfg) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (auto& [name, p] : params.tensors) {
        const auto git = grads.find(name);
        if (git == grads.end()) throw std::invalid_argument("adam_update: missing gradient for " + name);
        auto& m = state.m.try_emplace(name, Tensor<T>(p.shape)).first->second;
        auto& v = state.v.try_emplace(name, Tensor<T>(p.shape)).first->second;
        const T* g = git->second.data();
        T* mp = m.data();
        T* vp = v.data();
        T* pp = p.data();
        const std::int64_t n = p.size();
        for (std::int64_t i = 0; i < n; ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = cfg.beta1 * static_cast<double>(mp[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(vp[i]) + (1.0 - cfg.beta2) * gi * gi;
            mp[i] = static_cast<T>(mi);
            vp[i] = static_cast<T>(vi);
            pp[i] -= static_cast<T>(cfg.learning_rate * (mi / bc1) /
                                    (std::sqrt(vi / bc2) + cfg.adam_eps));
        }
    }
}

// ---- batches ----

struct Batch {
    std::vector<const SuperImage*> samples;  // labeled slots first
    std::vector<int> truth;                  // class index, -1 for unlabeled slots
    std::vector<std::uint64_t> student_seeds, teacher_seeds;  // per (sample, channel)
    std::uint64_t triplet_seed = 0;
    int labeled_count = 0;
};

struct LabeledPool {
    std::vector<const SuperImage*> samples;
    std::vector<int> labels;  // 0 = normal, 1 = ntl
};

struct UnlabeledPool {
    std::vector<const SuperImage*> samples;
};

// Draws one mini-batch. Semi-supervised mode keeps the exact 1:3 ratio with
// uniform-with-replacement draws from both pools; supervised mode fills the
// whole batch from the labeled pool, balancing the two classes 1:1.
inline Batch assemble_batch(const LabeledPool& labeled, const UnlabeledPool& unlabeled,
                            const TrainConfig& cfg, int super_channels, Rng& rng) {
    Batch b;
    if (cfg.semi_supervised) {
        const int nl = cfg.labeled_per_batch();
        const int nu = cfg.batch_size - nl;
        if (unlabeled.samples.empty())
            throw config_error("semi-supervised training requires an unlabeled pool");
        for (int i = 0; i < nl; ++i) {
            const auto idx = static_cast<std::size_t>(rng.uniform_index(labeled.samples.size()));
            b.samples.push_back(labeled.samples[idx]);
            b.truth.push_back(labeled.labels[idx]);
        }
        for (int i = 0; i < nu; ++i) {
            const auto idx = static_cast<std::size_t>(rng.uniform_index(unlabeled.samples.size()));
            b.samples.push_back(unlabeled.samples[idx]);
            b.truth.push_back(-1);
        }
        b.labeled_count = nl;
    } else {
        std::vector<std::size_t> by_class[2];
        for (std::size_t i = 0; i < labeled.labels.size(); ++i)
            by_class[labeled.labels[i] == 1 ? 1 : 0].push_back(i);
        if (by_class[0].empty() || by_class[1].empty())
            throw io_error("supervised batches need both classes in the labeled pool");
        for (int i = 0; i < cfg.batch_size; ++i) {
            const auto& cls = by_class[i % 2];
            const auto idx = cls[static_cast<std::size_t>(rng.uniform_index(cls.size()))];
            b.samples.push_back(labeled.samples[idx]);
            b.truth.push_back(labeled.labels[idx]);
        }
        b.labeled_count = cfg.batch_size;
    }
    const std::size_t n = b.samples.size() * static_cast<std::size_t>(super_channels);
    b.student_seeds.resize(n);
    b.teacher_seeds.resize(n);
    for (auto& s : b.student_seeds) s = rng.raw();
    for (auto& s : b.teacher_seeds) s = rng.raw();
    b.triplet_seed = rng.raw();
    return b;
}

struct LossBreakdown {
    double xent = 0.0;
    double consistency = 0.0;
    double contrastive = 0.0;
    double wu = 0.0;
    double total = 0.0;
};

// Reusable buffers for a training stream.
template <typename T>
struct TrainWorkspace {
    BatchOut<T> student_acts, teacher_acts;
    BackwardScratch<T> bwd;
    std::map<std::string, Tensor<T>> grads;
    std::vector<T> x;
    std::vector<BBox> boxes;
};

// Assembles the loss value and its gradients w.r.t. the student logits and
// (when the contrastive term is active) the concatenated embedding.
// teacher_probs may be null when semi-supervised terms are off.
template <typename T>
inline LossBreakdown compute_loss_gradients(const Batch& batch, const NetConfig& nc,
                                            const BatchOut<T>& acts,
                                            const std::vector<T>* teacher_probs,
                                            const TrainConfig& cfg, std::int64_t step,
                                            std::vector<T>& dlogits, std::vector<T>& dconcat) {
    const int bsz = static_cast<int>(batch.samples.size());
    const int classes = nc.classes;
    const int e = nc.embedding_dim();

    LossBreakdown lb;
    lb.wu = unsupervised_weight(step, cfg);
    dlogits.assign(static_cast<std::size_t>(bsz) * classes, T(0));
    dconcat.clear();

    // cross-entropy over labeled slots
    int labeled = 0;
    for (int i = 0; i < bsz; ++i)
        if (batch.truth[static_cast<std::size_t>(i)] >= 0) ++labeled;
    if (labeled > 0) {
        for (int i = 0; i < bsz; ++i) {
            const int y = batch.truth[static_cast<std::size_t>(i)];
            if (y < 0) continue;
            const T* p = acts.probs.data() + static_cast<std::int64_t>(i) * classes;
            lb.xent -= std::log(std::max(static_cast<double>(p[y]), 1e-12));
            T* dl = dlogits.data() + static_cast<std::int64_t>(i) * classes;
            for (int k = 0; k < classes; ++k)
                dl[k] += static_cast<T>((static_cast<double>(p[k]) - (k == y ? 1.0 : 0.0)) /
                                        static_cast<double>(labeled));
        }
        lb.xent /= static_cast<double>(labeled);
    }

    if (cfg.semi_supervised && teacher_probs) {
        lb.consistency = consistency_loss(std::span<const T>(acts.probs),
                                          std::span<const T>(*teacher_probs), classes);
        for (int i = 0; i < bsz; ++i) {
            const T* ps = acts.probs.data() + static_cast<std::int64_t>(i) * classes;
            const T* pt = teacher_probs->data() + static_cast<std::int64_t>(i) * classes;
            // d/dz of ||p(z) - q||^2 through the softmax Jacobian
            double dot = 0.0;
            for (int k = 0; k < classes; ++k)
                dot += 2.0 * (static_cast<double>(ps[k]) - static_cast<double>(pt[k])) *
                       static_cast<double>(ps[k]);
            T* dl = dlogits.data() + static_cast<std::int64_t>(i) * classes;
            for (int k = 0; k < classes; ++k) {
                const double gp = 2.0 * (static_cast<double>(ps[k]) - static_cast<double>(pt[k]));
                dl[k] += static_cast<T>(lb.wu * static_cast<double>(ps[k]) * (gp - dot) /
                                        static_cast<double>(bsz));
            }
        }

        if (cfg.triplet_loss) {
            // labels: ground truth where known, teacher argmax otherwise
            std::vector<int> labels(static_cast<std::size_t>(bsz));
            for (int i = 0; i < bsz; ++i) {
                const int y = batch.truth[static_cast<std::size_t>(i)];
                if (y >= 0) {
                    labels[static_cast<std::size_t>(i)] = y;
                } else {
                    const T* pt = teacher_probs->data() + static_cast<std::int64_t>(i) * classes;
                    int arg = 0;
                    for (int k = 1; k < classes; ++k)
                        if (pt[k] > pt[arg]) arg = k;
                    labels[static_cast<std::size_t>(i)] = arg;
                }
            }
            Rng trng(batch.triplet_seed);
            const auto triplets = form_triplets(labels, trng, cfg.t_max_triplets);
            if (!triplets.empty()) {
                // L2-normalized embeddings
                std::vector<double> norms(static_cast<std::size_t>(bsz));
                std::vector<T> h(acts.concat.size());
                for (int i = 0; i < bsz; ++i) {
                    const T* src = acts.concat.data() + static_cast<std::int64_t>(i) * e;
                    double n2 = 0.0;
                    for (int k = 0; k < e; ++k) n2 += static_cast<double>(src[k]) * src[k];
                    const double nm = std::max(std::sqrt(n2), 1e-12);
                    norms[static_cast<std::size_t>(i)] = nm;
                    T* dst = h.data() + static_cast<std::int64_t>(i) * e;
                    for (int k = 0; k < e; ++k) dst[k] = static_cast<T>(src[k] / nm);
                }
                std::vector<double> dh(static_cast<std::size_t>(bsz) * e, 0.0);
                const double scale = lb.wu / static_cast<double>(triplets.size());
                auto accumulate_pair = [&](int i, int j, bool same) {
                    const T* hi = h.data() + static_cast<std::int64_t>(i) * e;
                    const T* hj = h.data() + static_cast<std::int64_t>(j) * e;
                    double d2 = 0.0;
                    for (int k = 0; k < e; ++k) {
                        const double d = static_cast<double>(hi[k]) - static_cast<double>(hj[k]);
                        d2 += d * d;
                    }
                    double* gi = dh.data() + static_cast<std::int64_t>(i) * e;
                    double* gj = dh.data() + static_cast<std::int64_t>(j) * e;
                    if (same) {
                        for (int k = 0; k < e; ++k) {
                            const double d = 2.0 * (static_cast<double>(hi[k]) - hj[k]);
                            gi[k] += scale * d;
                            gj[k] -= scale * d;
                        }
                        return d2;
                    }
                    const double dist = std::sqrt(d2);
                    const double gap = cfg.margin - dist;
                    if (gap <= 0.0) return 0.0;
                    if (dist > 1e-12) {
                        const double coef = -2.0 * gap / dist;
                        for (int k = 0; k < e; ++k) {
                            const double d = coef * (static_cast<double>(hi[k]) - hj[k]);
                            gi[k] += scale * d;
                            gj[k] -= scale * d;
                        }
                    }
                    return gap * gap;
                };
                double closs = 0.0;
                for (const auto& t : triplets) {
                    closs += accumulate_pair(t.anchor, t.positive, true);
                    closs += accumulate_pair(t.anchor, t.negative, false);
                }
                lb.contrastive = closs / static_cast<double>(triplets.size());

                // back through the normalization: de = (dh - h (h . dh)) / ||e||
                dconcat.assign(static_cast<std::size_t>(bsz) * e, T(0));
                for (int i = 0; i < bsz; ++i) {
                    const T* hi = h.data() + static_cast<std::int64_t>(i) * e;
                    const double* gh = dh.data() + static_cast<std::int64_t>(i) * e;
                    double dot = 0.0;
                    for (int k = 0; k < e; ++k) dot += static_cast<double>(hi[k]) * gh[k];
                    T* dc = dconcat.data() + static_cast<std::int64_t>(i) * e;
                    for (int k = 0; k < e; ++k)
                        dc[k] = static_cast<T>((gh[k] - static_cast<double>(hi[k]) * dot) /
                                               norms[static_cast<std::size_t>(i)]);
                }
            }
        }
    }

    lb.total = lb.xent + lb.wu * (lb.consistency + lb.contrastive);
    return lb;
}

// One optimization step: student forward, loss gradients, Adam update, EMA
// teacher update. Throws divergence_error (naming the batch samples) on a
// non-finite loss.
template <typename T>
inline LossBreakdown train_step(const Batch& batch, InferenceNet<T>& net, ParamSet<T>& student,
                                ParamSet<T>& teacher, AdamState<T>& adam, const TrainConfig& cfg,
                                std::int64_t step, TrainWorkspace<T>& ws) {
    const NetConfig& nc = net.config();
    const int bsz = static_cast<int>(batch.samples.size());

    auto& x = ws.x;
    auto& boxes = ws.boxes;
    x.resize(static_cast<std::size_t>(bsz) * nc.super_channels * nc.pixels());
    boxes.resize(static_cast<std::size_t>(bsz) * nc.super_channels);
    for (int i = 0; i < bsz; ++i)
        net.stage_sample(*batch.samples[static_cast<std::size_t>(i)], cfg.roi_pooling,
                         x.data() + static_cast<std::int64_t>(i) * nc.super_channels * nc.pixels(),
                         boxes.data() + static_cast<std::int64_t>(i) * nc.super_channels);

    auto& acts = ws.student_acts;
    net.forward(student, x.data(), bsz, boxes.data(), Mode::Train, batch.student_seeds.data(),
                true, true, acts);
    const std::vector<T>* teacher_probs = nullptr;
    if (cfg.semi_supervised) {
        net.forward(teacher, x.data(), bsz, boxes.data(), Mode::Train,
                    batch.teacher_seeds.data(), false, false, ws.teacher_acts);
        teacher_probs = &ws.teacher_acts.probs;
    }

    std::vector<T> dlogits, dconcat;
    const LossBreakdown lb =
        compute_loss_gradients(batch, nc, acts, teacher_probs, cfg, step, dlogits, dconcat);
    if (!std::isfinite(lb.total)) {
        std::string ids;
        for (const auto* s : batch.samples) {
            if (!ids.empty()) ids += ",";
            ids += s->customer_id + "@" + format_int(s->window_start);
        }
        throw divergence_error("non-finite loss at step " + std::to_string(step) +
                               "; batch: " + ids);
    }

    net.backward(student, acts, dlogits.data(), dconcat.empty() ? nullptr : dconcat.data(),
                 ws.grads, ws.bwd);
    adam_update(student, ws.grads, adam, cfg);
    ++student.step;
    ema_update(teacher, student, cfg.ema_alpha);
    return lb;
}

template <typename T>
inline LossBreakdown train_step(const Batch& batch, InferenceNet<T>& net, ParamSet<T>& student,
                                ParamSet<T>& teacher, AdamState<T>& adam, const TrainConfig& cfg,
                                std::int64_t step) {
    TrainWorkspace<T> ws;
    return train_step(batch, net, student, teacher, adam, cfg, step, ws);
}

// ---- scoring and validation ----

// NTL-class probabilities from the teacher in eval mode; batching does not
// change results.
template <typename T>
inline std::vector<double> score_ntl(InferenceNet<T>& net, ParamSet<T>& params,
                                     const std::vector<const SuperImage*>& samples, bool use_roi,
                                     int eval_batch = 16) {
    const NetConfig& nc = net.config();
    std::vector<double> scores;
    scores.reserve(samples.size());
    std::vector<T> x;
    std::vector<BBox> boxes;
    BatchOut<T> out;
    for (std::size_t at = 0; at < samples.size(); at += static_cast<std::size_t>(eval_batch)) {
        const int b = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(eval_batch),
                                                             samples.size() - at));
        x.resize(static_cast<std::size_t>(b) * nc.super_channels * nc.pixels());
        boxes.resize(static_cast<std::size_t>(b) * nc.super_channels);
        for (int i = 0; i < b; ++i)
            net.stage_sample(*samples[at + static_cast<std::size_t>(i)], use_roi,
                             x.data() + static_cast<std::int64_t>(i) * nc.super_channels * nc.pixels(),
                             boxes.data() + static_cast<std::int64_t>(i) * nc.super_channels);
        net.forward(params, x.data(), b, boxes.data(), Mode::Eval, nullptr, false, false, out);
        for (int i = 0; i < b; ++i)
            scores.push_back(static_cast<double>(out.probs[static_cast<std::size_t>(i) * nc.classes + 1]));
    }
    return scores;
}

struct ValidationSample {
    const SuperImage* image;
    bool truth_ntl;
};

struct TrainResult {
    ParamSet<float> student;  // at the best validation point (final if never validated)
    ParamSet<float> teacher;
    double best_f1 = -1.0;
    std::int64_t best_step = 0;
};

struct TrainLogs {
    std::ostream* loss_csv = nullptr;        // step,xent,consistency,contrastive,wu,lr
    std::ostream* validation_csv = nullptr;  // step,precision_ntl,recall_ntl,f1_ntl,auc
};

inline constexpr const char* kLossLogHeader = "step,xent,consistency,contrastive,wu,lr";
inline constexpr const char* kValidationLogHeader = "step,precision_ntl,recall_ntl,f1_ntl,auc";

// Full Algorithm-1 style loop. Deterministic given config.seed; returns the
// teacher-selected best checkpoint (positive-class F1 on the validation pool).
inline TrainResult train_loop(InferenceNet<float>& net, const LabeledPool& labeled,
                              const UnlabeledPool& unlabeled,
                              const std::vector<ValidationSample>& validation,
                              const TrainConfig& cfg, TrainLogs logs = {}) {
    cfg.validate();
    if (labeled.samples.empty()) throw io_error("labeled pool is empty");
    {
        bool has0 = false, has1 = false;
        for (int l : labeled.labels) (l == 1 ? has1 : has0) = true;
        if (!has0 || !has1)
            throw io_error("labeled pool must contain both classes before training");
    }

    ParamSet<float> student = net.init_params(cfg.seed);
    ParamSet<float> teacher = student;  // initial teacher equals the student
    AdamState<float> adam;

    // optional seeded cap of the validation pool
    std::vector<ValidationSample> val = validation;
    if (cfg.validation_cap > 0 && static_cast<std::int64_t>(val.size()) > cfg.validation_cap) {
        Rng vr(derive_seed(cfg.seed, 0x76616c));
        vr.shuffle(val);
        val.resize(static_cast<std::size_t>(cfg.validation_cap));
    }

    TrainResult result;
    if (logs.loss_csv) *logs.loss_csv << kLossLogHeader << '\n';
    if (logs.validation_csv) *logs.validation_csv << kValidationLogHeader << '\n';

    auto run_validation = [&](std::int64_t step) {
        if (val.empty()) return;
        std::vector<const SuperImage*> imgs;
        imgs.reserve(val.size());
        for (const auto& v : val) imgs.push_back(v.image);
        const auto scores = score_ntl(net, teacher, imgs, cfg.roi_pooling);
        std::vector<ScoredSample> scored(val.size());
        for (std::size_t i = 0; i < val.size(); ++i)
            scored[i] = ScoredSample{format_int(static_cast<std::int64_t>(i)),
                                     val[i].image->customer_id, scores[i], val[i].truth_ntl};
        const auto report = compute_metrics(scored, 0.5);
        if (logs.validation_csv)
            *logs.validation_csv << step << ',' << format_double(report.ntl.precision) << ','
                                 << format_double(report.ntl.recall) << ','
                                 << format_double(report.ntl.f1) << ','
                                 << format_double(report.auc) << '\n'
                                 << std::flush;
        if (report.ntl.f1 > result.best_f1) {
            result.best_f1 = report.ntl.f1;
            result.best_step = step;
            result.student = student;
            result.teacher = teacher;
        }
    };

    Rng batch_rng(derive_seed(cfg.seed, 0x626174));
    TrainWorkspace<float> ws;
    for (std::int64_t t = 0; t < cfg.iterations; ++t) {
        Batch batch = assemble_batch(labeled, unlabeled, cfg, net.config().super_channels,
                                     batch_rng);
        const auto lb = train_step(batch, net, student, teacher, adam, cfg, t, ws);
        if (logs.loss_csv)
            *logs.loss_csv << t << ',' << format_double(lb.xent) << ','
                           << format_double(lb.consistency) << ','
                           << format_double(lb.contrastive) << ',' << format_double(lb.wu) << ','
                           << format_double(cfg.learning_rate) << '\n';
        if (cfg.validate_every > 0 && (t + 1) % cfg.validate_every == 0) run_validation(t + 1);
    }
    if (cfg.iterations > 0 &&
        (cfg.validate_every <= 0 || cfg.iterations % cfg.validate_every != 0))
        run_validation(cfg.iterations);

    if (result.best_f1 < 0.0) {  // never validated: return the final state
        result.student = std::move(student);
        result.teacher = std::move(teacher);
        result.best_step = cfg.iterations;
    }
    return result;
}

// ---- customer-level split ----

struct CustomerSplit {
    std::set<std::string> train_customers;
    std::set<std::string> validation_customers;
};

// Stratified by class: roughly a quarter of each class's customers train, the
// rest validate (sample ratio ~1:3). Both sides keep at least one customer
// per class.
inline CustomerSplit split_by_customer(const std::vector<std::pair<std::string, Label>>& customers,
                                       std::uint64_t seed) {
    std::vector<std::string> by_class[2];
    for (const auto& [id, label] : customers) {
        if (label == Label::Normal) by_class[0].push_back(id);
        else if (label == Label::Ntl) by_class[1].push_back(id);
    }
    CustomerSplit split;
    for (int c = 0; c < 2; ++c) {
        auto& ids = by_class[c];
        if (ids.size() < 2)
            throw io_error(std::string("need at least two labeled customers of class ") +
                           (c == 1 ? "ntl" : "normal") + " for a customer-level split");
        std::sort(ids.begin(), ids.end());
        Rng rng(derive_seed(seed, 0x73706c69, static_cast<std::uint64_t>(c)));
        rng.shuffle(ids);
        std::size_t n_train = std::max<std::size_t>(1, (ids.size() + 3) / 4);
        if (n_train >= ids.size()) n_train = ids.size() - 1;
        for (std::size_t i = 0; i < ids.size(); ++i)
            (i < n_train ? split.train_customers : split.validation_customers).insert(ids[i]);
    }
    return split;
}

}  // namespace ntl
