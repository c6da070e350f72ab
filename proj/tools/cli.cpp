#include "cli.hpp"

#include "sepnet/checkpoint.hpp"
#include "sepnet/cost.hpp"
#include "sepnet/dataset.hpp"
#include "sepnet/parallel.hpp"
#include "sepnet/report.hpp"
#include "sepnet/trainer.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <fstream>

namespace sepnet {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string_view kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::depthwise: return "depthwise";
        case LayerKind::dense: return "dense";
    }
    return "?";
}

void print_resolved(const CLI::App& cmd, std::ostream& err) {
    err << "# " << cmd.get_name() << '\n';
    for (const CLI::Option* opt : cmd.get_options()) {
        if (opt->get_name() == "--help") continue;
        std::string value;
        if (opt->count() > 0) {
            for (const auto& r : opt->results()) value += (value.empty() ? "" : " ") + r;
            if (opt->get_type_size() == 0) value = "true";
        } else if (opt->get_type_size() == 0) {
            value = "false";
        } else {
            value = opt->get_default_str();
        }
        std::string name = opt->get_name(false, true);
        if (name.empty()) name = opt->get_name();
        err << "#   " << name.substr(name.find_first_not_of('-')) << " = " << value << '\n';
    }
}

void require_dir(const fs::path& dir, const char* what) {
    if (!fs::is_directory(dir)) throw std::runtime_error(fmt::format("{} {} does not exist", what, dir.string()));
}

// Outputs must never land inside the dataset.
void check_outside(const fs::path& data_dir, const fs::path& out_dir) {
    if (data_dir.empty()) return;
    const auto data = fs::weakly_canonical(data_dir), out = fs::weakly_canonical(out_dir);
    auto [d, o] = std::mismatch(data.begin(), data.end(), out.begin(), out.end());
    if (d == data.end()) {
        throw UsageError(fmt::format("output directory {} is inside the data directory {}", out_dir.string(),
                                     data_dir.string()));
    }
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    return f;
}

struct CostArgs {
    double alpha = 1.0;
    int resolution = 224;
    std::string variant = "separable";
    std::string head = "imagenet1000";
};

int cmd_cost(const CostArgs& a, std::ostream& out) {
    constexpr double alphas[] = {0.25, 0.5, 0.75, 1.0};
    constexpr int resolutions[] = {128, 160, 192, 224};
    if (std::find(std::begin(alphas), std::end(alphas), a.alpha) == std::end(alphas)) {
        throw UsageError(fmt::format("--alpha must be one of 0.25, 0.5, 0.75, 1.0, got {}", a.alpha));
    }
    if (std::find(std::begin(resolutions), std::end(resolutions), a.resolution) == std::end(resolutions)) {
        throw UsageError(fmt::format("--resolution must be one of 128, 160, 192, 224, got {}", a.resolution));
    }
    ModelConfig c;
    c.alpha = a.alpha;
    c.resolution = a.resolution;
    c.variant = parse_variant(a.variant);
    c.head = parse_head(a.head);
    c.validate();
    const CostReport r = count_costs(c);
    out << fmt::format("{:<16} {:<10} {:>14} {:>12}\n", "layer", "kind", "mult-adds", "params");
    for (const auto& row : r.rows) {
        out << fmt::format("{:<16} {:<10} {:>14} {:>12}\n", row.name, kind_name(row.kind), row.mult_adds, row.params);
    }
    out << fmt::format("{:<16} {:<10} {:>14} {:>12}\n", "total", "", r.total_mult_adds, r.total_params);
    out << fmt::format("{}M mult-adds, {:.1f}M params\n", r.rounded_million_mult_adds(), r.rounded_million_params());
    out << "reference:\n";
    for (const auto& m : reference_models()) {
        out << fmt::format("  {:<10} {:g}M mult-adds, {:g}M params\n", m.name, m.million_mult_adds, m.million_params);
    }
    return 0;
}

struct SplitArgs {
    fs::path data_dir, manifest, out_dir;
    std::optional<Index> val_count, test_count, train_count;
    std::optional<double> val_fraction, test_fraction;
    std::uint64_t seed = 0;
};

DatasetManifest input_manifest(const fs::path& data_dir, const fs::path& manifest) {
    if (!manifest.empty()) return load_manifest(manifest);
    require_dir(data_dir, "data directory");
    return build_manifest(data_dir);
}

void print_split_table(const DatasetManifest& m, std::ostream& out) {
    out << fmt::format("{:<20} {:>7} {:>7} {:>7} {:>10}\n", "class", "train", "val", "test", "unassigned");
    for (std::size_t k = 0; k < m.class_names.size(); ++k) {
        const int label = static_cast<int>(k);
        out << fmt::format("{:<20} {:>7} {:>7} {:>7} {:>10}\n", m.class_names[k], m.count(label, Split::train),
                           m.count(label, Split::val), m.count(label, Split::test), m.count(label, Split::none));
    }
}

int cmd_split(const SplitArgs& a, std::ostream& out) {
    SplitSpec spec;
    if (a.val_count || a.test_count || a.train_count) {
        if (!a.val_count || !a.test_count) throw UsageError("--val-count and --test-count go together");
        spec = SplitSpec::from_counts(*a.val_count, *a.test_count, a.train_count);
    } else if (a.val_fraction || a.test_fraction) {
        spec = SplitSpec::from_fractions(a.val_fraction.value_or(spec.val_fraction),
                                         a.test_fraction.value_or(spec.test_fraction));
    }
    check_outside(a.data_dir, a.out_dir);
    const DatasetManifest split = split_dataset(input_manifest(a.data_dir, a.manifest), spec, a.seed);
    fs::create_directories(a.out_dir);
    const fs::path path = a.out_dir / "manifest.csv";
    save_manifest(path, split);
    print_split_table(split, out);
    out << "manifest " << path.string() << '\n';
    return 0;
}

struct DedupArgs {
    fs::path data_dir, manifest;
    int threshold = 8;
};

void print_dedup(const DedupReport& r, std::ostream& out) {
    out << fmt::format("threshold {}\nexact clusters {}\nnear clusters {}\n", r.threshold, r.exact.size(),
                       r.near.size());
    for (const auto& c : r.leaks) {
        out << "leak:";
        for (const auto& p : c) out << ' ' << p;
        out << '\n';
    }
    out << "leaks " << r.leaks.size() << '\n';
}

int cmd_dedup(const DedupArgs& a, std::ostream& out) {
    if (a.threshold < 0 || a.threshold > 63) throw UsageError("--threshold must be in [0, 63]");
    print_dedup(dedup_scan(input_manifest(a.data_dir, a.manifest), a.threshold), out);
    return 0;
}

struct TrainArgs {
    fs::path data_dir, manifest, out_dir;
    double alpha = 1.0;
    int resolution = 224;
    std::string variant = "separable";
    int batch_size = 80;
    int epochs = 15;
    double lr = 0.01;
    double lr_decay = 0.5;
    double lr_floor = 1e-6;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    bool interactive = false;
    bool allow_leaks = false;
    int threshold = 8;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err, std::istream& in) {
    ModelConfig mc;
    mc.alpha = a.alpha;
    mc.resolution = a.resolution;
    mc.variant = parse_variant(a.variant);
    mc.head = Head::binary;
    mc.seed = a.seed;
    mc.validate();
    TrainConfig tc;
    tc.batch_size = a.batch_size;
    tc.epochs = a.epochs;
    tc.initial_lr = a.lr;
    tc.lr_decay_factor = a.lr_decay;
    tc.lr_floor = a.lr_floor;
    tc.momentum = a.momentum;
    tc.seed = a.seed;
    tc.interactive = a.interactive;
    tc.validate();

    require_dir(a.data_dir, "data directory");
    check_outside(a.data_dir, a.out_dir);
    const DatasetManifest manifest = load_manifest(a.manifest);
    const DedupReport dups = dedup_scan(manifest, a.threshold);
    if (!dups.leaks.empty()) {
        if (!a.allow_leaks) {
            print_dedup(dups, err);
            err << fmt::format(
                "error: refusing to train: {} duplicate cluster(s) span more than one split, which would inflate "
                "the measured accuracy; re-split or pass --allow-leaks\n",
                dups.leaks.size());
            return 1;
        }
        err << fmt::format("warning: training despite {} cross-split duplicate cluster(s)\n", dups.leaks.size());
    }

    FitOptions opt;
    opt.out_dir = a.out_dir;
    opt.log = &out;
    opt.prompt_in = &in;
    opt.prompt_out = &err;
    const TrainState st = fit(mc, tc, a.data_dir, manifest, opt);
    if (st.history.empty()) {
        out << "no epochs run\n";
        return 0;
    }
    out << fmt::format("best epoch {} val accuracy {:.4f}\n", st.best_epoch, st.best_val_accuracy);
    if (st.test) out << fmt::format("test accuracy {:.4f} ({} images)\n", st.test->accuracy, st.test->count);
    out << "checkpoint " << (a.out_dir / kCheckpointFile).string() << '\n';
    out << "metrics " << (a.out_dir / kMetricsFile).string() << '\n';
    return 0;
}

struct EvalArgs {
    fs::path checkpoint, data_dir, manifest;
    std::string split = "test";
    int batch_size = 80;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const Split split = parse_split(a.split);
    if (split == Split::none) throw UsageError("--split must be train, val or test");
    if (a.batch_size < 1) throw UsageError("--batch-size must be >= 1");
    require_dir(a.data_dir, "data directory");
    const DatasetManifest manifest = load_manifest(a.manifest);
    if (manifest.in_split(split).empty()) {
        throw std::runtime_error(fmt::format("manifest has no '{}' entries", a.split));
    }
    LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
    BatchLoader loader = make_loader(a.data_dir, manifest, split, a.batch_size, ck.model.config().resolution, 0);
    const EvalResult r = evaluate(ck.model, loader);
    out << fmt::format("split {}\nimages {}\naccuracy {:.4f}\nloss {:.6f}\n", a.split, r.count, r.accuracy, r.loss);
    out << fmt::format("confusion (rows true, columns predicted)\n  {} {}\n  {} {}\n", r.confusion[0][0],
                       r.confusion[0][1], r.confusion[1][0], r.confusion[1][1]);
    return 0;
}

struct PredictArgs {
    fs::path checkpoint;
    std::vector<fs::path> images;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
    LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
    out << "image\tlabel\tp0\tp1\n";
    for (const auto& img : a.images) {
        const Prediction p = predict(ck.model, img);
        out << fmt::format("{}\t{}\t{:.4f}\t{:.4f}\n", img.string(), p.label, p.probs[0], p.probs[1]);
    }
    return 0;
}

struct ReportArgs {
    fs::path metrics, out_dir;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
    std::ifstream in(a.metrics, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open metrics file " + a.metrics.string());
    std::vector<EpochRecord> history;
    try {
        history = read_metrics(in);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(a.metrics.string() + ": " + e.what());
    }
    fs::create_directories(a.out_dir);
    const fs::path loss = a.out_dir / "loss.svg", acc = a.out_dir / "accuracy.svg";
    open_output(loss) << loss_chart(history);
    open_output(acc) << accuracy_chart(history);
    out << "epochs " << history.size() << '\n' << "wrote " << loss.string() << '\n' << "wrote " << acc.string() << '\n';
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err, std::istream& in) {
    CLI::App app{"Depthwise separable image classifier: cost tables, dataset tooling, training and reports", "sepnet"};
    app.require_subcommand(1);
    app.fallthrough();
    int threads = num_threads();
    app.add_option("--threads", threads, "Worker threads (results do not depend on it)")
        ->check(CLI::Range(1, 1024))
        ->capture_default_str();

    const std::string default_out = "sepnet-out";
    auto add_out_dir = [&](CLI::App* cmd, fs::path& target) {
        target = default_out;
        cmd->add_option("--out-dir", target, "Output directory")->envname("SEPNET_OUT_DIR")->capture_default_str();
    };

    CostArgs cost;
    auto* c = app.add_subcommand("cost", "Per-layer mult-adds and parameters");
    c->add_option("--alpha", cost.alpha, "Width multiplier: 0.25, 0.5, 0.75 or 1.0")->capture_default_str();
    c->add_option("--resolution", cost.resolution, "Input edge length: 128, 160, 192 or 224")->capture_default_str();
    c->add_option("--variant", cost.variant, "separable | full_conv | shallow")->capture_default_str();
    c->add_option("--head", cost.head, "imagenet1000 | binary")->capture_default_str();

    SplitArgs split;
    auto* s = app.add_subcommand("split", "Stratified train/val/test split written as a manifest");
    auto* s_data = s->add_option("--data-dir", split.data_dir, "Dataset root with one directory per class");
    auto* s_man = s->add_option("--manifest", split.manifest, "Existing manifest to re-split");
    s_data->excludes(s_man);
    s->add_option("--val-count", split.val_count, "Validation images per class");
    s->add_option("--test-count", split.test_count, "Test images per class");
    s->add_option("--train-count", split.train_count, "Train images per class (default: the rest)");
    auto* vf = s->add_option("--val-fraction", split.val_fraction, "Validation fraction per class");
    auto* tf = s->add_option("--test-fraction", split.test_fraction, "Test fraction per class");
    s->add_option("--seed", split.seed)->capture_default_str();
    add_out_dir(s, split.out_dir);
    vf->excludes("--val-count")->excludes("--test-count")->excludes("--train-count");
    tf->excludes("--val-count")->excludes("--test-count")->excludes("--train-count");

    DedupArgs dedup;
    auto* d = app.add_subcommand("dedup", "Exact and near-duplicate clusters and cross-split leaks");
    auto* d_data = d->add_option("--data-dir", dedup.data_dir, "Dataset root (hashed on the fly)");
    auto* d_man = d->add_option("--manifest", dedup.manifest, "Manifest with stored hashes");
    d_data->excludes(d_man);
    d->add_option("--threshold", dedup.threshold, "Maximum dHash Hamming distance")->capture_default_str();

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train the binary classifier with best-validation checkpointing");
    t->add_option("--data-dir", train.data_dir, "Dataset root")->required();
    t->add_option("--manifest", train.manifest, "Split manifest")->required();
    t->add_option("--alpha", train.alpha)->capture_default_str();
    t->add_option("--resolution", train.resolution)->capture_default_str();
    t->add_option("--variant", train.variant)->capture_default_str();
    t->add_option("--batch-size", train.batch_size)->capture_default_str();
    t->add_option("--epochs", train.epochs)->capture_default_str();
    t->add_option("--lr", train.lr, "Initial learning rate")->capture_default_str();
    t->add_option("--lr-decay", train.lr_decay, "Factor applied when validation accuracy does not improve")
        ->capture_default_str();
    t->add_option("--lr-floor", train.lr_floor)->capture_default_str();
    t->add_option("--momentum", train.momentum)->capture_default_str();
    t->add_option("--seed", train.seed)->capture_default_str();
    t->add_flag("--interactive", train.interactive, "Ask for additional epochs after the scheduled ones");
    t->add_flag("--allow-leaks", train.allow_leaks, "Train even if duplicates span splits");
    t->add_option("--dedup-threshold", train.threshold)->capture_default_str();
    add_out_dir(t, train.out_dir);

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    e->add_option("--checkpoint", ev.checkpoint)->required();
    e->add_option("--data-dir", ev.data_dir)->required();
    e->add_option("--manifest", ev.manifest)->required();
    e->add_option("--split", ev.split)->capture_default_str();
    e->add_option("--batch-size", ev.batch_size)->capture_default_str();

    PredictArgs pred;
    auto* p = app.add_subcommand("predict", "Classify image files with a checkpoint");
    p->add_option("--checkpoint", pred.checkpoint)->required();
    p->add_option("images", pred.images, "Image files")->required();

    ReportArgs rep;
    auto* r = app.add_subcommand("report", "Loss and accuracy charts (SVG) from a metrics file");
    r->add_option("metrics", rep.metrics, "Metrics CSV written by train")->required();
    add_out_dir(r, rep.out_dir);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& ex) {
        return app.exit(ex, out, err) == 0 ? 0 : 2;
    }

    CLI::App* cmd = app.get_subcommands().front();
    print_resolved(app, err);
    print_resolved(*cmd, err);
    try {
        set_num_threads(threads);
        if (cmd == c) return cmd_cost(cost, out);
        if (cmd == s) {
            if (split.data_dir.empty() == split.manifest.empty()) throw UsageError("give exactly one of --data-dir or --manifest");
            return cmd_split(split, out);
        }
        if (cmd == d) {
            if (dedup.data_dir.empty() == dedup.manifest.empty()) throw UsageError("give exactly one of --data-dir or --manifest");
            return cmd_dedup(dedup, out);
        }
        if (cmd == t) return cmd_train(train, out, err, in);
        if (cmd == e) return cmd_eval(ev, out);
        if (cmd == p) return cmd_predict(pred, out);
        if (cmd == r) return cmd_report(rep, out);
    } catch (const UsageError& ex) {
        err << "error: " << ex.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& ex) {
        err << "error: " << ex.what() << '\n';
        return 2;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace sepnet
