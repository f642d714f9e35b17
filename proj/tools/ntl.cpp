// ntl: batch command-line surface for the NTL detection pipeline.
// Subcommands: synth, render, train, evaluate, detect, export-embeddings.
// Exit codes: 0 success, 1 I/O error, 2 config error, 3 training divergence.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ntl/common.hpp"
#include "ntl/evaluate.hpp"
#include "ntl/ingest.hpp"
#include "ntl/network.hpp"
#include "ntl/pipeline.hpp"
#include "ntl/png.hpp"
#include "ntl/profile.hpp"
#include "ntl/synth.hpp"
#include "ntl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ntl::io_error("cannot open input '" + path + "'");
    return in;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ntl::io_error("cannot open output '" + path + "'");
    return out;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ntl::io_error("cannot create directory '" + dir + "': " + ec.message());
}

struct ManifestWriter {
    json doc;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    ManifestWriter(const std::string& command, std::uint64_t seed) {
        doc["command"] = command;
        doc["version"] = ntl::kVersion;
        doc["seed"] = seed;
        doc["inputs"] = json::object();
        doc["outputs"] = json::array();
    }
    void input(const std::string& key, const std::string& path) { doc["inputs"][key] = path; }
    void output(const std::string& path) { doc["outputs"].push_back(path); }
    void config_text(const std::string& text) {
        doc["config"] = text;
        doc["config_hash"] = ntl::fnv1a(text);
    }
    void finish(const std::string& path) {
        doc["duration_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        auto out = open_output(path);
        out << doc.dump(2) << '\n';
    }
};

ntl::Fleet parse_fleet_files(const std::string& telemetry, const std::string& meta) {
    auto t = open_input(telemetry);
    auto m = open_input(meta);
    auto fleet = ntl::parse_fleet(t, m);
    for (const auto& d : fleet.diagnostics) std::cerr << "ntl: " << d << '\n';
    return fleet;
}

// ---- synth ----

struct SynthArgs {
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    bool force = false;
};

void cmd_synth(const SynthArgs& a) {
    ntl::SynthConfig cfg;
    if (!a.config_path.empty()) {
        auto in = open_input(a.config_path);
        cfg = ntl::parse_synth_config(in);
    }
    if (a.seed) cfg.seed = *a.seed;
    ensure_dir(a.out_dir);
    const std::string tele = a.out_dir + "/telemetry.csv";
    const std::string meta = a.out_dir + "/meta.csv";
    const std::string truth = a.out_dir + "/truth.csv";
    if (!a.force)
        for (const auto& p : {tele, meta, truth})
            if (fs::exists(p)) throw ntl::io_error("refusing to overwrite '" + p + "' (use --force)");

    ManifestWriter mf("synth", cfg.seed);
    if (!a.config_path.empty()) mf.input("config", a.config_path);
    std::ostringstream cfg_text;
    ntl::serialize_synth_config(cfg, cfg_text);
    mf.config_text(cfg_text.str());

    const auto fleet = ntl::generate_fleet(cfg);
    auto to = open_output(tele);
    auto mo = open_output(meta);
    auto tro = open_output(truth);
    ntl::write_fleet(fleet, to, mo, tro);
    mf.output(tele);
    mf.output(meta);
    mf.output(truth);
    mf.finish(a.out_dir + "/manifest.json");
    std::cout << "synth: " << fleet.series.size() << " customers -> " << a.out_dir << '\n';
}

// ---- render ----

struct RenderArgs {
    std::string telemetry, meta, out_dir, dump_features;
    ntl::RenderParams rp;
    int png_count = 0;
    std::uint64_t seed = 0;
};

void cmd_render(const RenderArgs& a) {
    auto fleet = parse_fleet_files(a.telemetry, a.meta);
    ensure_dir(a.out_dir);
    ManifestWriter mf("render", a.seed);
    mf.input("telemetry", a.telemetry);
    mf.input("meta", a.meta);
    std::ostringstream cfg_text;
    cfg_text << "sigma=" << ntl::format_double(a.rp.sigma_px)
             << "\nthreshold=" << ntl::format_double(a.rp.threshold_frac)
             << "\nwindow_days=" << a.rp.window_days << "\nstep_days=" << a.rp.step_days << '\n';
    mf.config_text(cfg_text.str());

    std::int64_t written = 0;
    int pngs_left = a.png_count;
    const auto counts = ntl::render_fleet(fleet, a.rp, [&](const ntl::SuperImage& si) {
        const std::string path = a.out_dir + "/" + ntl::super_image_filename(si);
        ntl::write_super_image_file(si, path);
        ++written;
        if (pngs_left > 0) {
            for (int c = 0; c < ntl::kChannels; ++c) {
                const std::string png = a.out_dir + "/" + si.customer_id + "_" +
                                        ntl::format_int(si.window_start) + "_ch" +
                                        std::to_string(c) + ".png";
                ntl::write_channel_png(png, si.channels[static_cast<std::size_t>(c)], ntl::kGrid);
            }
            --pngs_left;
        }
    });
    if (!a.dump_features.empty()) {
        auto out = open_output(a.dump_features);
        out << ntl::kFeatureDumpHeader << '\n';
        for (const auto& s : fleet.series) {
            std::vector<ntl::FeatureRow> rows;
            rows.reserve(s.readings.size());
            for (const auto& r : s.readings) rows.push_back(ntl::featurize_reading(r, s.meta));
            ntl::dump_features(s.meta.customer_id, rows, out);
        }
        mf.output(a.dump_features);
    }
    mf.doc["windows_emitted"] = counts.windows_emitted;
    mf.doc["windows_skipped"] = counts.windows_skipped;
    mf.finish(a.out_dir + "/manifest.json");
    std::cout << "render: " << written << " windows written, " << counts.windows_skipped
              << " skipped as incomplete -> " << a.out_dir << '\n';
}

// ---- train ----

struct TrainArgs {
    std::string rendered_dir, truth_path, config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> iterations;
    std::optional<std::int64_t> validate_every;
    std::optional<std::int64_t> validation_cap;
    std::optional<int> batch_size;
    std::int64_t labeled_count = 0;  // 0 = use all labeled training samples
    bool no_semi = false, no_triplet = false, no_roi = false;
};

void cmd_train(const TrainArgs& a) {
    ntl::TrainConfig cfg;
    if (!a.config_path.empty()) {
        auto in = open_input(a.config_path);
        cfg = ntl::parse_train_config(in);
    }
    if (a.seed) cfg.seed = *a.seed;
    if (a.iterations) cfg.iterations = *a.iterations;
    if (a.validate_every) cfg.validate_every = *a.validate_every;
    if (a.validation_cap) cfg.validation_cap = *a.validation_cap;
    if (a.batch_size) cfg.batch_size = *a.batch_size;
    if (a.no_semi) cfg.semi_supervised = false;
    if (a.no_triplet) cfg.triplet_loss = false;
    if (a.no_roi) cfg.roi_pooling = false;
    cfg.validate();

    const auto samples = ntl::load_rendered_dir(a.rendered_dir);
    if (samples.empty()) throw ntl::io_error("no rendered samples in '" + a.rendered_dir + "'");
    auto truth_in = open_input(a.truth_path);
    const auto truth = ntl::read_truth_csv(truth_in);

    // customer-level split of the labeled customers
    std::map<std::string, ntl::Label> labeled_customers;
    for (const auto& si : samples) {
        auto it = truth.find(si.customer_id);
        if (it == truth.end())
            throw ntl::io_error("rendered sample for customer '" + si.customer_id +
                                "' missing from truth CSV");
        if (it->second != ntl::Label::Unlabeled) labeled_customers[si.customer_id] = it->second;
    }
    std::vector<std::pair<std::string, ntl::Label>> customer_list(labeled_customers.begin(),
                                                                  labeled_customers.end());
    const auto split = ntl::split_by_customer(customer_list, cfg.seed);

    ntl::LabeledPool labeled;
    ntl::UnlabeledPool unlabeled;
    std::vector<ntl::ValidationSample> validation;
    for (const auto& si : samples) {
        const auto label = truth.at(si.customer_id);
        if (label == ntl::Label::Unlabeled) {
            unlabeled.samples.push_back(&si);
        } else if (split.train_customers.count(si.customer_id)) {
            labeled.samples.push_back(&si);
            labeled.labels.push_back(label == ntl::Label::Ntl ? 1 : 0);
        } else {
            validation.push_back(ntl::ValidationSample{&si, label == ntl::Label::Ntl});
        }
    }

    // optional labeled-budget restriction (stratified, seeded)
    std::int64_t labeled_used = static_cast<std::int64_t>(labeled.samples.size());
    if (a.labeled_count > 0 && a.labeled_count < labeled_used) {
        std::vector<std::size_t> by_class[2];
        for (std::size_t i = 0; i < labeled.labels.size(); ++i)
            by_class[labeled.labels[i] == 1 ? 1 : 0].push_back(i);
        ntl::Rng rng(ntl::derive_seed(cfg.seed, 0x737562));
        rng.shuffle(by_class[0]);
        rng.shuffle(by_class[1]);
        const double share1 = static_cast<double>(by_class[1].size()) /
                              static_cast<double>(labeled.samples.size());
        std::size_t take1 = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(share1 * static_cast<double>(a.labeled_count))));
        take1 = std::min(take1, static_cast<std::size_t>(a.labeled_count) - 1);
        take1 = std::min(take1, by_class[1].size());
        std::size_t take0 = std::min(static_cast<std::size_t>(a.labeled_count) - take1,
                                     by_class[0].size());
        std::vector<std::size_t> keep;
        keep.insert(keep.end(), by_class[0].begin(), by_class[0].begin() + static_cast<std::ptrdiff_t>(take0));
        keep.insert(keep.end(), by_class[1].begin(), by_class[1].begin() + static_cast<std::ptrdiff_t>(take1));
        std::sort(keep.begin(), keep.end());
        ntl::LabeledPool subset;
        for (auto i : keep) {
            subset.samples.push_back(labeled.samples[i]);
            subset.labels.push_back(labeled.labels[i]);
        }
        labeled = std::move(subset);
        labeled_used = static_cast<std::int64_t>(labeled.samples.size());
    }

    ensure_dir(a.out_dir);
    ManifestWriter mf("train", cfg.seed);
    mf.input("rendered", a.rendered_dir);
    mf.input("truth", a.truth_path);
    if (!a.config_path.empty()) mf.input("config", a.config_path);
    std::ostringstream cfg_text;
    ntl::serialize_train_config(cfg, cfg_text);
    mf.config_text(cfg_text.str());
    mf.doc["labeled_count"] = labeled_used;
    mf.doc["unlabeled_count"] = unlabeled.samples.size();
    mf.doc["validation_count"] = validation.size();
    mf.doc["train_customers"] = split.train_customers.size();
    mf.doc["validation_customers"] = split.validation_customers.size();

    ntl::InferenceNet<float> net{ntl::NetConfig{}};
    auto loss_csv = open_output(a.out_dir + "/loss_log.csv");
    auto val_csv = open_output(a.out_dir + "/val_log.csv");
    ntl::TrainLogs logs;
    logs.loss_csv = &loss_csv;
    logs.validation_csv = &val_csv;
    const auto result = ntl::train_loop(net, labeled, unlabeled, validation, cfg, logs);

    const std::string ckpt = a.out_dir + "/model";
    ntl::save_checkpoint(ckpt, net.config(), result.student, result.teacher, cfg.roi_pooling);
    mf.output(ckpt + ".manifest");
    mf.output(ckpt + ".blob");
    mf.output(a.out_dir + "/loss_log.csv");
    mf.output(a.out_dir + "/val_log.csv");
    mf.doc["best_f1"] = result.best_f1;
    mf.doc["best_step"] = result.best_step;
    mf.finish(a.out_dir + "/manifest.json");
    std::cout << "train: " << cfg.iterations << " iterations, best validation F1 "
              << ntl::format_double(result.best_f1) << " at step " << result.best_step << " -> "
              << ckpt << '\n';
}

// ---- evaluate ----

struct EvaluateArgs {
    std::string checkpoint, rendered_dir, truth_path, out_dir;
    double threshold = 0.5;
    bool per_customer = false;
};

void cmd_evaluate(const EvaluateArgs& a) {
    auto ck = ntl::load_checkpoint(a.checkpoint);
    ntl::InferenceNet<float> net{ck.config};
    const auto samples = ntl::load_rendered_dir(a.rendered_dir);
    auto truth_in = open_input(a.truth_path);
    const auto truth = ntl::read_truth_csv(truth_in);

    std::vector<const ntl::SuperImage*> imgs;
    std::vector<ntl::ScoredSample> scored;
    for (const auto& si : samples) {
        auto it = truth.find(si.customer_id);
        if (it == truth.end() || it->second == ntl::Label::Unlabeled) continue;
        imgs.push_back(&si);
        scored.push_back(ntl::ScoredSample{ntl::super_image_filename(si), si.customer_id, 0.0,
                                           it->second == ntl::Label::Ntl});
    }
    if (scored.empty()) throw ntl::io_error("no labeled samples to evaluate");
    const auto scores = ntl::score_ntl(net, ck.teacher, imgs, ck.roi_pooling);
    for (std::size_t i = 0; i < scored.size(); ++i) scored[i].score = scores[i];

    const auto report = ntl::compute_metrics(scored, a.threshold);
    ensure_dir(a.out_dir);
    ManifestWriter mf("evaluate", 0);
    mf.input("checkpoint", a.checkpoint);
    mf.input("rendered", a.rendered_dir);
    mf.input("truth", a.truth_path);
    std::ostringstream cfg_text;
    cfg_text << "threshold=" << ntl::format_double(a.threshold)
             << "\nper_customer=" << (a.per_customer ? "true" : "false") << '\n';
    mf.config_text(cfg_text.str());

    json line;
    line["samples"] = scored.size();
    line["threshold"] = report.threshold;
    line["counts"] = {{"tp", report.counts.tp},
                      {"fp", report.counts.fp},
                      {"tn", report.counts.tn},
                      {"fn", report.counts.fn}};
    line["ntl"] = {{"precision", report.ntl.precision},
                   {"recall", report.ntl.recall},
                   {"f1", report.ntl.f1}};
    line["normal"] = {{"precision", report.normal.precision},
                      {"recall", report.normal.recall},
                      {"f1", report.normal.f1}};
    line["auc"] = report.auc;
    line["config_hash"] = ntl::fnv1a(cfg_text.str());
    if (a.per_customer) {
        const auto cc = ntl::per_customer_confusion(scored, a.threshold);
        const auto cm = ntl::prf(cc);
        line["per_customer"] = {{"tp", cc.tp},       {"fp", cc.fp},
                                {"tn", cc.tn},       {"fn", cc.fn},
                                {"precision", cm.precision}, {"recall", cm.recall},
                                {"f1", cm.f1}};
    }
    {
        auto out = open_output(a.out_dir + "/report.jsonl");
        out << line.dump() << '\n';
    }
    {
        auto out = open_output(a.out_dir + "/roc.csv");
        ntl::write_roc_csv(report.roc, out);
    }
    mf.output(a.out_dir + "/report.jsonl");
    mf.output(a.out_dir + "/roc.csv");
    mf.finish(a.out_dir + "/manifest.json");
    std::cout << "evaluate: " << scored.size() << " samples, NTL F1 "
              << ntl::format_double(report.ntl.f1) << ", AUC " << ntl::format_double(report.auc)
              << " -> " << a.out_dir << '\n';
}

// ---- detect ----

struct DetectArgs {
    std::string checkpoint, telemetry, meta, out_csv;
    ntl::RenderParams rp;
};

void cmd_detect(const DetectArgs& a) {
    auto ck = ntl::load_checkpoint(a.checkpoint);
    ntl::InferenceNet<float> net{ck.config};
    auto fleet = parse_fleet_files(a.telemetry, a.meta);

    std::vector<ntl::SuperImage> images;
    ntl::render_fleet(fleet, a.rp, [&](const ntl::SuperImage& si) { images.push_back(si); });
    std::vector<const ntl::SuperImage*> imgs;
    imgs.reserve(images.size());
    for (const auto& si : images) imgs.push_back(&si);
    const auto scores = ntl::score_ntl(net, ck.teacher, imgs, ck.roi_pooling);

    ManifestWriter mf("detect", 0);
    mf.input("checkpoint", a.checkpoint);
    mf.input("telemetry", a.telemetry);
    mf.input("meta", a.meta);
    std::ostringstream cfg_text;
    cfg_text << "sigma=" << ntl::format_double(a.rp.sigma_px)
             << "\nthreshold=" << ntl::format_double(a.rp.threshold_frac)
             << "\nwindow_days=" << a.rp.window_days << "\nstep_days=" << a.rp.step_days << '\n';
    mf.config_text(cfg_text.str());

    auto out = open_output(a.out_csv);
    out << "customer_id,window_start,ntl_score\n";
    for (std::size_t i = 0; i < images.size(); ++i)
        out << images[i].customer_id << ',' << ntl::format_iso8601_utc(images[i].window_start)
            << ',' << ntl::format_double(scores[i]) << '\n';
    mf.output(a.out_csv);
    mf.finish(a.out_csv + ".manifest.json");
    std::cout << "detect: " << images.size() << " windows scored -> " << a.out_csv << '\n';
}

// ---- export-embeddings ----

struct ExportArgs {
    std::string checkpoint, rendered_dir, out_csv;
};

void cmd_export_embeddings(const ExportArgs& a) {
    auto ck = ntl::load_checkpoint(a.checkpoint);
    ntl::InferenceNet<float> net{ck.config};
    const auto samples = ntl::load_rendered_dir(a.rendered_dir);

    ManifestWriter mf("export-embeddings", 0);
    mf.input("checkpoint", a.checkpoint);
    mf.input("rendered", a.rendered_dir);
    mf.config_text("");

    auto out = open_output(a.out_csv);
    const int e = net.config().embedding_dim();
    out << "sample_id,customer_id,label";
    for (int i = 0; i < e; ++i) out << ",e" << i;
    out << '\n';
    for (const auto& si : samples) {
        const auto fo = net.inference_forward(ck.teacher, si, ck.roi_pooling);
        out << ntl::super_image_filename(si) << ',' << si.customer_id << ','
            << ntl::label_name(si.label);
        for (int i = 0; i < e; ++i)
            out << ',' << ntl::format_double(static_cast<double>(fo.embedding[static_cast<std::size_t>(i)]));
        out << '\n';
    }
    mf.output(a.out_csv);
    mf.finish(a.out_csv + ".manifest.json");
    std::cout << "export-embeddings: " << samples.size() << " samples -> " << a.out_csv << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Smart-meter non-technical-loss detection toolkit", "ntl"};
    app.set_version_flag("--version", std::string(ntl::kVersion));
    app.require_subcommand(1);

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled smart-meter fleet");
    synth->add_option("--config", sa.config_path, "key=value synthesis config file");
    synth->add_option("--out", sa.out_dir, "output directory")->required();
    std::uint64_t synth_seed = 0;
    auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "override RNG seed");
    synth->add_flag("--force", sa.force, "overwrite existing outputs");

    RenderArgs ra;
    auto* render = app.add_subcommand("render", "Render telemetry into super-image windows");
    render->add_option("--telemetry", ra.telemetry, "telemetry CSV")->required();
    render->add_option("--meta", ra.meta, "customer metadata CSV")->required();
    render->add_option("--out", ra.out_dir, "output directory")->required();
    render->add_option("--sigma", ra.rp.sigma_px, "KDE kernel stddev in pixels");
    render->add_option("--threshold", ra.rp.threshold_frac, "bounding-box pixel threshold");
    render->add_option("--window-days", ra.rp.window_days, "window length in days");
    render->add_option("--step-days", ra.rp.step_days, "window step in days");
    render->add_option("--png", ra.png_count, "export channel PNGs for the first N windows");
    render->add_option("--dump-features", ra.dump_features, "write a per-reading feature CSV");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train the detector on rendered windows");
    train->add_option("--rendered", ta.rendered_dir, "directory of .ntlp files")->required();
    train->add_option("--truth", ta.truth_path, "truth CSV (customer_id,label,...)")->required();
    train->add_option("--config", ta.config_path, "key=value training config file");
    train->add_option("--out", ta.out_dir, "output directory")->required();
    std::uint64_t train_seed = 0;
    auto* train_seed_opt = train->add_option("--seed", train_seed, "override RNG seed");
    std::int64_t train_iters = 0;
    auto* train_iters_opt = train->add_option("--iterations", train_iters, "override iteration count");
    std::int64_t train_val_every = 0;
    auto* train_val_every_opt =
        train->add_option("--validate-every", train_val_every, "validation interval in steps");
    std::int64_t train_val_cap = 0;
    auto* train_val_cap_opt =
        train->add_option("--validation-cap", train_val_cap, "cap validation pool size (seeded)");
    int train_batch = 0;
    auto* train_batch_opt = train->add_option("--batch-size", train_batch, "override batch size");
    train->add_option("--labeled-count", ta.labeled_count,
                      "train on a random labeled subset of this size");
    train->add_flag("--no-semi", ta.no_semi, "supervised-only ablation");
    train->add_flag("--no-triplet", ta.no_triplet, "drop the contrastive loss term");
    train->add_flag("--no-roi", ta.no_roi, "replace pattern boxes with full-image pooling");

    EvaluateArgs ea;
    auto* evaluate = app.add_subcommand("evaluate", "Score rendered windows and report metrics");
    evaluate->add_option("--checkpoint", ea.checkpoint, "checkpoint path prefix")->required();
    evaluate->add_option("--rendered", ea.rendered_dir, "directory of .ntlp files")->required();
    evaluate->add_option("--truth", ea.truth_path, "truth CSV")->required();
    evaluate->add_option("--out", ea.out_dir, "output directory")->required();
    evaluate->add_option("--threshold", ea.threshold, "decision threshold");
    evaluate->add_flag("--per-customer", ea.per_customer, "add majority-vote aggregation");

    DetectArgs da;
    auto* detect = app.add_subcommand("detect", "Score raw telemetry with a trained model");
    detect->add_option("--checkpoint", da.checkpoint, "checkpoint path prefix")->required();
    detect->add_option("--telemetry", da.telemetry, "telemetry CSV")->required();
    detect->add_option("--meta", da.meta, "customer metadata CSV")->required();
    detect->add_option("--out", da.out_csv, "scored output CSV")->required();
    detect->add_option("--sigma", da.rp.sigma_px, "KDE kernel stddev in pixels");
    detect->add_option("--threshold", da.rp.threshold_frac, "bounding-box pixel threshold");
    detect->add_option("--window-days", da.rp.window_days, "window length in days");
    detect->add_option("--step-days", da.rp.step_days, "window step in days");

    ExportArgs xa;
    auto* expem = app.add_subcommand("export-embeddings",
                                     "Write per-sample embeddings for external analysis");
    expem->add_option("--checkpoint", xa.checkpoint, "checkpoint path prefix")->required();
    expem->add_option("--rendered", xa.rendered_dir, "directory of .ntlp files")->required();
    expem->add_option("--out", xa.out_csv, "output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "ntl: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*synth) {
            if (*synth_seed_opt) sa.seed = synth_seed;
            cmd_synth(sa);
        } else if (*render) {
            cmd_render(ra);
        } else if (*train) {
            if (*train_seed_opt) ta.seed = train_seed;
            if (*train_iters_opt) ta.iterations = train_iters;
            if (*train_val_every_opt) ta.validate_every = train_val_every;
            if (*train_val_cap_opt) ta.validation_cap = train_val_cap;
            if (*train_batch_opt) ta.batch_size = train_batch;
            cmd_train(ta);
        } else if (*evaluate) {
            cmd_evaluate(ea);
        } else if (*detect) {
            cmd_detect(da);
        } else if (*expem) {
            cmd_export_embeddings(xa);
        }
    } catch (const ntl::config_error& e) {
        std::cerr << "ntl: config error: " << e.what() << '\n';
        return 2;
    } catch (const ntl::divergence_error& e) {
        std::cerr << "ntl: training diverged: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "ntl: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
