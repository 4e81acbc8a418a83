// fwnet command-line tool.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "fwnet/accounting.hpp"
#include "fwnet/bench.hpp"
#include "fwnet/cam.hpp"
#include "fwnet/data.hpp"
#include "fwnet/gradcheck.hpp"
#include "fwnet/io.hpp"
#include "fwnet/train.hpp"

namespace {

using namespace fwnet;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::string millions(std::uint64_t n) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << static_cast<double>(n) / 1e6 << "M";
    return os.str();
}

std::string billions(std::uint64_t n) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << static_cast<double>(n) / 1e9 << "G";
    return os.str();
}

// -- count --

struct CountArgs {
    std::string variant = "fwnet_eca";
    std::string size = "t";
    std::size_t classes = 1000;
    std::size_t resolution = 224;
    std::string csv;
};

int run_count(const CountArgs& a) {
    ModelConfig cfg = ModelConfig::preset(a.size.at(0));
    cfg.variant = parse_variant(a.variant);
    cfg.num_classes = a.classes;
    const CostReport r = model_flops(cfg, a.resolution);

    std::cout << "FwNet " << to_string(cfg.variant) << "-" << a.size << "  classes " << a.classes << "  resolution "
              << a.resolution << "\n";
    std::cout << std::left << std::setw(24) << "layer" << std::right << std::setw(14) << "params" << std::setw(16)
              << "macs" << "\n";
    for (const auto& row : r.rows) {
        std::cout << std::left << std::setw(24) << row.name << std::right << std::setw(14) << row.params
                  << std::setw(16) << row.flops << "\n";
    }
    std::cout << std::left << std::setw(24) << "total" << std::right << std::setw(14) << r.total_params
              << std::setw(16) << r.total_flops << "\n";
    std::cout << "params " << millions(r.total_params) << "  macs " << billions(r.total_flops) << "\n";

    if (!a.csv.empty()) {
        std::ostringstream os;
        os << "layer,params,macs\n";
        for (const auto& row : r.rows) os << row.name << ',' << row.params << ',' << row.flops << '\n';
        os << "total," << r.total_params << ',' << r.total_flops << '\n';
        write_text_file(a.csv, os.str());
    }
    return kExitOk;
}

// -- bench --

int run_bench_cmd(const BenchOptions& opt, const std::string& out) {
    const auto rows = run_bench(opt, [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; });
    const std::string csv = bench_csv(rows);
    std::cout << csv;
    if (!out.empty()) write_text_file(out, csv);
    return kExitOk;
}

// -- synth-data --

struct SynthArgs {
    std::string out;
    SynthOptions opt;
};

int run_synth(const SynthArgs& a) {
    const Dataset d = make_dataset(a.opt);
    write_dataset(a.out, d);
    std::cout << "wrote " << d.size() << " images (" << a.opt.classes << " classes, " << a.opt.size << "x"
              << a.opt.size << ") to " << a.out << "\n";
    return kExitOk;
}

// -- train-toy --

struct TrainArgs {
    std::string data;
    std::string config = "mini";
    std::string variant = "fwnet_eca";
    std::string out;
    std::string metrics;
    TrainOptions opt;
};

int run_train(const TrainArgs& a) {
    const Dataset d = load_dataset(a.data);
    ModelConfig cfg = ModelConfig::mini();
    cfg.variant = parse_variant(a.variant);
    cfg.image_size = d.images.front().dim(0);
    cfg.in_chans = d.images.front().dim(2);
    std::size_t classes = 0;
    for (std::size_t l : d.labels) classes = std::max(classes, l + 1);
    cfg.num_classes = classes;
    cfg.validate();

    FwNetModel model = init_params(cfg, a.opt.seed);
    std::cout << "training " << to_string(cfg.variant) << " (" << parameter_count(model) << " parameters) on "
              << d.size() << " images\n";
    std::cout << "epoch,train_loss,train_acc\n";
    std::vector<EpochMetrics> rows;
    rows = train(model, d, a.opt, [](const EpochMetrics& m) {
        std::cout << m.epoch << ',' << std::setprecision(6) << m.train_loss << ',' << m.train_acc << std::endl;
    });

    save_checkpoint(a.out, model);
    const std::filesystem::path ckpt(a.out);
    const std::filesystem::path metrics =
        a.metrics.empty() ? ckpt.parent_path() / "metrics.csv" : std::filesystem::path(a.metrics);
    write_text_file(metrics, metrics_csv(rows));
    std::cout << "checkpoint " << a.out << "\nmetrics " << metrics.string() << "\n";
    return kExitOk;
}

// -- infer --

RealTensor load_image(const std::string& path) {
    RealTensor img = load_tensor(path);
    if (img.rank() == 3) img = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
    return img;
}

int run_infer(const std::string& ckpt, const std::string& input) {
    const FwNetModel model = load_checkpoint(ckpt);
    const RealTensor img = load_image(input);
    const RealTensor logits = model_forward(img, model);
    const std::size_t classes = logits.dim(1);
    for (std::size_t b = 0; b < logits.dim(0); ++b) {
        const std::span<const double> row(logits.raw() + b * classes, classes);
        std::cout << "class " << argmax(row) << "\nlogits";
        std::cout << std::setprecision(9);
        for (double v : row) std::cout << ' ' << v;
        std::cout << "\n";
    }
    return kExitOk;
}

// -- cam --

struct CamArgs {
    std::string ckpt;
    std::string input;
    std::size_t stage = 0;
    std::size_t block = 0;
    std::string out;
    int target = -1;
    bool detach_head = false;
};

int run_cam(const CamArgs& a) {
    const FwNetModel model = load_checkpoint(a.ckpt);
    const RealTensor img = load_image(a.input);
    CamOptions opt;
    if (a.target >= 0) opt.target_class = static_cast<std::size_t>(a.target);
    opt.detach_head = a.detach_head;
    const CamResult r = grad_cam(model, img, a.stage, a.block, opt);
    write_pgm(a.out, r.image);
    std::cout << "class " << r.target_class << "  map " << r.raw.dim(0) << "x" << r.raw.dim(1) << " -> "
              << r.image.width << "x" << r.image.height << "  response area "
              << response_area_fraction(r.image) << "\n";
    return kExitOk;
}

// -- gradcheck --

GradFault parse_fault(const std::string& spec) {
    GradFault f;
    const auto first = spec.find(':');
    f.tensor = spec.substr(0, first);
    if (first != std::string::npos) {
        const auto second = spec.find(':', first + 1);
        f.coordinate = std::stoul(spec.substr(first + 1, second - first - 1));
        if (second != std::string::npos) f.factor = std::stod(spec.substr(second + 1));
    }
    if (f.tensor.empty()) throw ArgumentError("--inject-fault expects name[:coordinate[:factor]]");
    return f;
}

int run_gradcheck(std::uint64_t seed, const std::string& fault, const std::string& csv) {
    GradSuiteOptions opt;
    if (!fault.empty()) {
        try {
            opt.fault = parse_fault(fault);
        } catch (const std::logic_error&) {
            throw ArgumentError("--inject-fault expects name[:coordinate[:factor]], got '" + fault + "'");
        }
    }
    const GradReport report = run_suite(seed, opt);
    std::cout << report.to_text();
    if (!csv.empty()) write_text_file(csv, report.to_csv());
    if (report.passed()) {
        std::cout << "all " << report.rows.size() << " checks passed\n";
        return kExitOk;
    }
    for (const auto& f : report.failures()) std::cout << "FAILED " << f << "\n";
    return kExitFailure;
}

// -- sweep --

struct SweepArgs {
    std::string kind = "flops";
    std::string axis = "dim";
    std::vector<std::size_t> values;
    std::string out;
};

int run_sweep(const SweepArgs& a) {
    const SweepKind kind = a.kind == "params" ? SweepKind::Params : SweepKind::Flops;
    const SweepAxis axis = a.axis == "dim" ? SweepAxis::Dimension : SweepAxis::Resolution;
    std::vector<std::size_t> values = a.values;
    if (values.empty()) {
        values = axis == SweepAxis::Dimension ? std::vector<std::size_t>{96, 192, 384, 768}
                                              : std::vector<std::size_t>{56, 112, 224, 448};
    }
    const std::string csv = sweep_csv(sweep_report(kind, axis, values));
    std::cout << csv;
    if (!a.out.empty()) write_text_file(a.out, csv);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FwNet frequency-filter vision transformer toolkit"};
    app.require_subcommand(1);

    CountArgs count;
    auto* c_count = app.add_subcommand("count", "parameter and MAC report for a model preset");
    c_count->add_option("--variant", count.variant, "win | fwnet | fwnet_se | fwnet_eca")
        ->check(CLI::IsMember({"win", "fwnet", "fwnet_se", "fwnet_eca", "se", "eca"}));
    c_count->add_option("--size", count.size, "t | s | b")->check(CLI::IsMember({"t", "s", "b"}));
    c_count->add_option("--classes", count.classes, "classifier width")->check(CLI::PositiveNumber);
    c_count->add_option("--resolution", count.resolution, "input side")->check(CLI::PositiveNumber);
    c_count->add_option("--csv", count.csv, "also write the table as CSV");

    BenchOptions bench;
    std::string bench_out;
    auto* c_bench = app.add_subcommand("bench", "single-layer forward latency");
    c_bench->add_option("--methods", bench.methods, "msa,wmsa,fe")
        ->delimiter(',')
        ->check(CLI::IsMember({"msa", "wmsa", "fe"}));
    c_bench->add_option("--resolutions", bench.resolutions, "input sides")->delimiter(',');
    c_bench->add_option("--channels", bench.channels)->check(CLI::PositiveNumber);
    c_bench->add_option("--window", bench.window)->check(CLI::PositiveNumber);
    c_bench->add_option("--reps", bench.reps)->check(CLI::Range(kMinBenchReps, std::size_t{1} << 20));
    c_bench->add_option("--warmup", bench.warmup)->check(CLI::Range(kMinBenchWarmup, std::size_t{1} << 20));
    c_bench->add_option("--seed", bench.seed);
    c_bench->add_option("--out", bench_out, "CSV path");

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth-data", "generate the grating dataset");
    c_synth->add_option("--out", synth.out, "output directory")->required();
    c_synth->add_option("--classes", synth.opt.classes)->check(CLI::PositiveNumber);
    c_synth->add_option("--per-class", synth.opt.per_class)->check(CLI::PositiveNumber);
    c_synth->add_option("--size", synth.opt.size)->check(CLI::PositiveNumber);
    c_synth->add_option("--seed", synth.opt.seed);

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train-toy", "train the mini model on a grating dataset");
    c_train->add_option("--data", tr.data, "dataset directory")->required();
    c_train->add_option("--epochs", tr.opt.epochs)->check(CLI::PositiveNumber);
    c_train->add_option("--lr", tr.opt.lr)->check(CLI::PositiveNumber);
    c_train->add_option("--batch", tr.opt.batch_size)->check(CLI::PositiveNumber);
    c_train->add_option("--seed", tr.opt.seed);
    c_train->add_option("--config", tr.config)->check(CLI::IsMember({"mini"}));
    c_train->add_option("--variant", tr.variant)
        ->check(CLI::IsMember({"win", "fwnet", "fwnet_se", "fwnet_eca", "se", "eca"}));
    c_train->add_option("--out", tr.out, "checkpoint path")->required();
    c_train->add_option("--metrics", tr.metrics, "metrics CSV path (default: next to the checkpoint)");

    std::string infer_ckpt, infer_input;
    auto* c_infer = app.add_subcommand("infer", "classify a tensor file");
    c_infer->add_option("--ckpt", infer_ckpt)->required();
    c_infer->add_option("--input", infer_input)->required();

    CamArgs cam;
    auto* c_cam = app.add_subcommand("cam", "GradCAM map at a block output");
    c_cam->add_option("--ckpt", cam.ckpt)->required();
    c_cam->add_option("--input", cam.input)->required();
    c_cam->add_option("--stage", cam.stage, "zero-based stage")->required();
    c_cam->add_option("--block", cam.block, "zero-based block within the stage")->required();
    c_cam->add_option("--out", cam.out, "PGM path")->required();
    c_cam->add_option("--class", cam.target, "target class (default: predicted)");
    c_cam->add_flag("--detach-head", cam.detach_head, "probe with a zero class-score gradient");

    std::uint64_t gc_seed = 0;
    std::string gc_fault, gc_csv;
    auto* c_gc = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
    c_gc->add_option("--seed", gc_seed);
    c_gc->add_option("--inject-fault", gc_fault, "corrupt one analytic gradient: name[:coordinate[:factor]]");
    c_gc->add_option("--csv", gc_csv, "also write the report as CSV");

    SweepArgs sweep;
    auto* c_sweep = app.add_subcommand("sweep", "per-layer cost of msa, wmsa and fe across sizes");
    c_sweep->add_option("--kind", sweep.kind)->check(CLI::IsMember({"params", "flops"}));
    c_sweep->add_option("--axis", sweep.axis)->check(CLI::IsMember({"dim", "resolution"}));
    c_sweep->add_option("--values", sweep.values)->delimiter(',');
    c_sweep->add_option("--out", sweep.out, "CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*c_count) return run_count(count);
        if (*c_bench) return run_bench_cmd(bench, bench_out);
        if (*c_synth) return run_synth(synth);
        if (*c_train) return run_train(tr);
        if (*c_infer) return run_infer(infer_ckpt, infer_input);
        if (*c_cam) return run_cam(cam);
        if (*c_gc) return run_gradcheck(gc_seed, gc_fault, gc_csv);
        if (*c_sweep) return run_sweep(sweep);
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
