// Acceptance run: one PASS/FAIL line per criterion.
//
//   fwnet_acceptance [--criterion N] [--work DIR] [--cli PATH]
//
// Criterion 8 trains the toy classifier and writes DIR/mini.ckpt; criterion 9
// reads it and drives the `cam` subcommand of the CLI at PATH.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "fwnet/accounting.hpp"
#include "fwnet/bench.hpp"
#include "fwnet/cam.hpp"
#include "fwnet/data.hpp"
#include "fwnet/gradcheck.hpp"
#include "fwnet/io.hpp"
#include "fwnet/spectral.hpp"
#include "fwnet/train.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace fwnet;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Context {
    fs::path work;
    fs::path cli;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int prec = 3) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

double max_abs(const RealTensor& a, const RealTensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// -- 1 --

Outcome fft_correctness(const Context&) {
    Stopwatch sw;
    std::mt19937_64 rng(1);
    double worst_fwd = 0.0, worst_inv = 0.0;
    for (std::size_t n = 1; n <= 64; ++n) {
        for (int trial = 0; trial < 3; ++trial) {
            const ComplexTensor x = oracle::random_complex({n}, rng);
            const std::vector<Complex> xv(x.data().begin(), x.data().end());
            const auto ref = oracle::dft1(xv, -1.0);
            const ComplexTensor y = fft_1d(x, FftDirection::Forward);
            const ComplexTensor naive = dft_1d_naive(x);
            for (std::size_t k = 0; k < n; ++k) {
                worst_fwd = std::max({worst_fwd, std::abs(y[k] - ref[k]), std::abs(y[k] - naive[k])});
            }
            const auto iref = oracle::dft1(xv, +1.0);
            const ComplexTensor yi = fft_1d(x, FftDirection::Inverse);
            for (std::size_t k = 0; k < n; ++k) {
                worst_inv = std::max(worst_inv, std::abs(yi[k] - iref[k] / static_cast<double>(n)));
            }
        }
    }
    double worst_rt = 0.0;
    for (const Shape& s : {Shape{1, 1, 1, 1}, Shape{2, 8, 8, 4}, Shape{1, 7, 5, 3}, Shape{1, 14, 14, 8},
                           Shape{1, 56, 56, 2}, Shape{3, 9, 12, 1}, Shape{1, 64, 63, 2}}) {
        const RealTensor x = oracle::random_tensor(s, rng);
        worst_rt = std::max(worst_rt, max_abs(irfft2(rfft2(x)), x));
    }
    const double secs = sw.seconds();
    const bool pass = worst_fwd < 1e-10 && worst_inv < 1e-10 && worst_rt < 1e-10 && secs < 10.0;
    return {pass, "fft max err " + fmt(worst_fwd) + ", inverse " + fmt(worst_inv) + ", irfft2(rfft2) " +
                      fmt(worst_rt) + " (tol 1e-10), " + fmt(secs) + " s (limit 10)"};
}

// -- 2 --

Outcome convolution_theorem(const Context&) {
    std::mt19937_64 rng(2);
    double worst = 0.0, kernel_gap = 0.0;
    std::size_t cases = 0;
    for (std::size_t h = 1; h <= 8; ++h)
        for (std::size_t w = 1; w <= 8; ++w) {
            const std::size_t c = 1 + (h + w) % 4;
            const Shape shape{1 + (h * w) % 2, h, w, c};
            const RealTensor x = oracle::random_tensor(shape, rng);
            const FilterWeights fw{oracle::random_complex({h, half_width(w), c}, rng)};
            const RealTensor kernel = oracle::kernel_from_half_spectrum(fw.data, w);
            const RealTensor lib_kernel =
                irfft2(SpectralMap{fw.data.reshaped({1, h, half_width(w), c}), w}).reshaped({h, w, c});
            kernel_gap = std::max(kernel_gap, max_abs(kernel, lib_kernel));
            worst = std::max(worst, max_abs(filter_enhance_forward(x, fw), oracle::circular_conv(x, kernel)));
            ++cases;
        }
    const bool pass = worst < 1e-9 && kernel_gap < 1e-9;
    return {pass, std::to_string(cases) + " shapes up to 8x8x4, max |FE - conv| " + fmt(worst) +
                      ", kernel vs irfft2 " + fmt(kernel_gap) + " (tol 1e-9)"};
}

// -- 3 --

Outcome gradient_suite(const Context&) {
    Stopwatch sw;
    const GradReport report = run_suite(0);
    const double secs = sw.seconds();
    std::string detail = std::to_string(report.rows.size()) + " tensors, " +
                         std::to_string(report.failures().size()) + " failing, " + fmt(secs) + " s (limit 60)";
    for (const auto& f : report.failures()) detail += "; " + f;
    return {report.passed() && secs < 60.0, detail};
}

// -- 4 --

Outcome receptive_field(const Context&) {
    std::mt19937_64 rng(4);
    const std::size_t side = 14, c = 8, m = 7;
    const RealTensor x = oracle::random_tensor({1, side, side, c}, rng);

    AttentionParams p = AttentionParams::zeros(c, 2, m);
    for (auto* t : {&p.w_qkv, &p.b_qkv, &p.w_out, &p.b_out, &p.bias_table}) {
        *t = oracle::random_tensor(t->shape(), rng, 0.5);
    }
    auto wmsa = [&](const RealTensor& in) { return window_reverse(wmsa_forward(window_partition(in, m), p), side, side); };

    ModelConfig cfg;
    cfg.embed_dim = c;
    cfg.depths = {2};
    cfg.window = m;
    cfg.image_size = side * cfg.patch;
    cfg.num_classes = 2;
    FwNetModel model = init_params(cfg, 4);
    for (auto& ref : parameters(model)) {
        std::normal_distribution<double> d(0.0, 0.5);
        for (double& v : ref.values) v = d(rng);
    }
    const FilterBlock& fb = std::get<FilterBlock>(model.stages[0].blocks[1]);

    const RealTensor base_w = wmsa(x);
    const RealTensor base_f = filter_block_forward(x, fb);
    std::size_t leaks = 0, inside_zero = 0, global_misses = 0, probes = 0;
    double min_global = INFINITY;
    for (auto [py, px] : {std::pair<std::size_t, std::size_t>{0, 0}, {3, 9}, {8, 2}, {13, 13}, {6, 7}}) {
        RealTensor xp = x;
        std::normal_distribution<double> d(0.0, 1.0);
        for (std::size_t k = 0; k < c; ++k) xp.at(0, py, px, k) += d(rng);
        const RealTensor dw = wmsa(xp);
        const RealTensor df = filter_block_forward(xp, fb);
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t xx = 0; xx < side; ++xx) {
                const bool same_window = y / m == py / m && xx / m == px / m;
                double dmax_w = 0.0, dmax_f = 0.0;
                for (std::size_t k = 0; k < c; ++k) {
                    dmax_w = std::max(dmax_w, std::abs(dw.at(0, y, xx, k) - base_w.at(0, y, xx, k)));
                    dmax_f = std::max(dmax_f, std::abs(df.at(0, y, xx, k) - base_f.at(0, y, xx, k)));
                }
                if (!same_window && dmax_w != 0.0) ++leaks;
                if (same_window && dmax_w == 0.0) ++inside_zero;
                if (dmax_f == 0.0) ++global_misses;
                min_global = std::min(min_global, dmax_f);
            }
        ++probes;
    }
    const bool pass = leaks == 0 && inside_zero == 0 && global_misses == 0;
    return {pass, std::to_string(probes) + " probes on a 14x14 map, window 7: wmsa nonzero outside window at " +
                      std::to_string(leaks) + " positions, unchanged inside at " + std::to_string(inside_zero) +
                      "; filter block unchanged at " + std::to_string(global_misses) + " positions (min |d| " +
                      fmt(min_global) + ")"};
}

// -- 5 --

Outcome parameter_counts(const Context&) {
    const std::map<char, double> target{{'t', 24.6e6}, {'s', 33.8e6}, {'b', 42.8e6}};
    bool within_1000 = true, within_5013 = true, exact = true;
    std::string detail;
    for (const auto& [size, want] : target) {
        ModelConfig cfg = ModelConfig::preset(size);
        const std::uint64_t n1000 = count_params(cfg).total_params;
        const std::uint64_t inst = parameter_count(init_params(cfg, 0));
        cfg.num_classes = 5013;
        const std::uint64_t n5013 = count_params(cfg).total_params;
        const double dev = (static_cast<double>(n1000) - want) / want;
        const double dev5013 = (static_cast<double>(n5013) - want) / want;
        within_1000 = within_1000 && std::abs(dev) <= 0.02;
        within_5013 = within_5013 && std::abs(dev5013) <= 0.02;
        exact = exact && inst == n1000;
        detail += std::string(detail.empty() ? "" : "; ") + static_cast<char>(std::toupper(size)) + " " +
                  std::to_string(n1000) + " (" + fmt(100.0 * dev, 2) + "%, instantiated " + std::to_string(inst) +
                  ", 5013-class " + fmt(100.0 * dev5013, 2) + "%)";
    }
    std::string head = within_1000 ? "1000-class head matches" : within_5013 ? "only the 5013-class head matches"
                                                                              : "neither head matches";
    return {within_1000 && exact, head + ": " + detail};
}

// -- 6 --

Outcome flop_totals(const Context&) {
    const std::map<char, double> target{{'t', 3.7e9}, {'s', 5.4e9}, {'b', 7.1e9}};
    bool pass = true;
    std::string detail;
    for (const auto& [size, want] : target) {
        const std::uint64_t f = model_flops(ModelConfig::preset(size), 224).total_flops;
        const double dev = (static_cast<double>(f) - want) / want;
        pass = pass && std::abs(dev) <= 0.10;
        detail += static_cast<char>(std::toupper(size)) + std::string(" ") + fmt(f / 1e9, 4) + "G (" +
                  fmt(100.0 * dev, 2) + "%); ";
    }
    const std::uint64_t hw = 56 * 56, c = 96, m = 7;
    const std::uint64_t msa = 4 * hw * c * c + 2 * hw * hw * c;
    const std::uint64_t wmsa = 4 * hw * c * c + 2 * m * m * hw * c;
    const std::uint64_t fe = 2 * hw * c * 12 + hw * c;
    const bool kernels = flops_wmsa(56, 56, 96, 7) == 145108992 && wmsa == 145108992 && flops_msa(56, 56, 96) == msa &&
                         flops_fe(56, 56, 96) == fe;
    pass = pass && kernels;
    detail += "kernels at 56x56x96: wmsa " + std::to_string(flops_wmsa(56, 56, 96, 7)) + ", msa " +
              std::to_string(flops_msa(56, 56, 96)) + ", fe " + std::to_string(flops_fe(56, 56, 96)) +
              (kernels ? " (exact)" : " (MISMATCH)");
    return {pass, detail};
}

// -- 7 --

Outcome complexity_ordering(const Context&) {
    const std::uint64_t fe = flops_fe(56, 56, 96), wmsa = flops_wmsa(56, 56, 96, 7), msa = flops_msa(56, 56, 96);
    const bool analytic = fe < wmsa && wmsa < msa;
    BenchOptions opt;
    opt.resolutions = {224};
    opt.channels = 96;
    opt.reps = 50;
    opt.warmup = 5;
    std::vector<std::string> warnings;
    const auto rows = run_bench(opt, [&](const std::string& w) { warnings.push_back(w); });
    std::map<std::string, BenchRow> by;
    for (const auto& r : rows) by[r.method] = r;
    bool measured = by.size() == 3;
    if (measured) measured = by["fe"].mean_ms < by["wmsa"].mean_ms && by["wmsa"].mean_ms < by["msa"].mean_ms;
    std::string detail = "analytic fe " + std::to_string(fe) + " < wmsa " + std::to_string(wmsa) + " < msa " +
                         std::to_string(msa) + (analytic ? "" : " VIOLATED") + "; measured at 224, C=96, 50 reps:";
    for (const char* name : {"fe", "wmsa", "msa"}) {
        if (by.count(name)) detail += std::string(" ") + name + " " + fmt(by[name].mean_ms) + "±" + fmt(by[name].std_ms, 2) + " ms";
    }
    for (const auto& w : warnings) detail += "; " + w;
    return {analytic && measured, detail};
}

// -- 8 --

std::string checkpoint_bytes(const FwNetModel& m) {
    std::ostringstream os(std::ios::binary);
    write_checkpoint(os, m);
    return os.str();
}

Outcome toy_training(const Context& ctx) {
    const Dataset data = make_dataset(SynthOptions{});
    ModelConfig cfg = ModelConfig::mini();
    TrainOptions opt;

    Stopwatch sw;
    FwNetModel model = init_params(cfg, opt.seed);
    std::size_t reached = 0;
    const auto metrics = train(model, data, opt, [&](const EpochMetrics& e) {
        std::cerr << "  epoch " << e.epoch << " loss " << fmt(e.train_loss, 4) << " acc " << fmt(e.train_acc, 4) << "\n";
        if (!reached && e.train_acc >= 0.9) reached = e.epoch;
    });
    const double secs = sw.seconds();
    const double final_acc = evaluate_accuracy(model, data);
    fs::create_directories(ctx.work);
    save_checkpoint(ctx.work / "mini.ckpt", model);
    write_text_file(ctx.work / "metrics.csv", metrics_csv(metrics));

    // Determinism: two short runs from the same seed must agree bit for bit.
    TrainOptions short_opt = opt;
    short_opt.epochs = 1;
    std::string bytes[2];
    std::vector<EpochMetrics> m[2];
    for (int run = 0; run < 2; ++run) {
        FwNetModel mm = init_params(cfg, short_opt.seed);
        m[run] = train(mm, data, short_opt);
        bytes[run] = checkpoint_bytes(mm);
    }
    const bool deterministic = bytes[0] == bytes[1] && m[0][0].train_loss == m[1][0].train_loss;

    const bool pass = reached > 0 && final_acc >= 0.9 && secs < 600.0 && deterministic;
    return {pass, "train accuracy >= 90% at epoch " + (reached ? std::to_string(reached) : std::string("never")) +
                      " of " + std::to_string(opt.epochs) + ", final " + fmt(100.0 * final_acc, 4) + "%, " +
                      fmt(secs) + " s (limit 600), repeat runs " + (deterministic ? "identical" : "DIFFER")};
}

// -- 9 --

bool is_p5(const fs::path& path, std::size_t w, std::size_t h, std::string& why) {
    std::ifstream in(path, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::istringstream hs(bytes);
    std::string magic;
    std::size_t fw = 0, fh = 0, maxval = 0;
    hs >> magic >> fw >> fh >> maxval;
    if (!hs || magic != "P5") {
        why = "bad header";
        return false;
    }
    const auto header = static_cast<std::size_t>(hs.tellg()) + 1;
    if (fw != w || fh != h || maxval != 255 || bytes.size() != header + w * h) {
        why = "header " + std::to_string(fw) + "x" + std::to_string(fh) + " max " + std::to_string(maxval) +
              ", " + std::to_string(bytes.size()) + " bytes";
        return false;
    }
    return true;
}

Outcome cam_validity(const Context& ctx) {
    const fs::path ckpt = ctx.work / "mini.ckpt";
    if (!fs::exists(ckpt)) return {false, "no trained checkpoint at " + ckpt.string() + " (run criterion 8 first)"};
    const FwNetModel model = load_checkpoint(ckpt);
    const auto& cfg = model.config;

    SynthOptions held;
    held.seed = 7919;
    held.per_class = 25;
    const Dataset test = make_dataset(held);

    const fs::path dir = ctx.work / "cam";
    fs::create_directories(dir);
    save_tensor(dir / "probe.fwt", test.images[0]);
    std::size_t addresses = 0, valid = 0;
    std::string problems;
    for (std::size_t s = 0; s < cfg.num_stages(); ++s)
        for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
            ++addresses;
            const fs::path out = dir / ("s" + std::to_string(s) + "b" + std::to_string(b) + ".pgm");
            const std::string cmd = "\"" + ctx.cli.string() + "\" cam --ckpt \"" + ckpt.string() + "\" --input \"" +
                                    (dir / "probe.fwt").string() + "\" --stage " + std::to_string(s) + " --block " +
                                    std::to_string(b) + " --out \"" + out.string() + "\" > /dev/null";
            const int status = std::system(cmd.c_str());
            std::string why;
            if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
                problems += "; cam " + std::to_string(s) + "/" + std::to_string(b) + " exit " + std::to_string(status);
            } else if (!is_p5(out, cfg.image_size, cfg.image_size, why)) {
                problems += "; " + out.filename().string() + " " + why;
            } else {
                ++valid;
            }
        }

    std::size_t wins = 0;
    double fe_sum = 0.0, attn_sum = 0.0;
    for (const RealTensor& img : test.images) {
        double fe = 0.0, attn = 0.0;
        std::size_t n_fe = 0, n_attn = 0;
        for (std::size_t s = 0; s < cfg.num_stages(); ++s)
            for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
                const double a = response_area_fraction(grad_cam(model, img, s, b).image);
                if (std::holds_alternative<FilterBlock>(model.stages[s].blocks[b])) {
                    fe += a;
                    ++n_fe;
                } else {
                    attn += a;
                    ++n_attn;
                }
            }
        fe /= static_cast<double>(n_fe);
        attn /= static_cast<double>(n_attn);
        fe_sum += fe;
        attn_sum += attn;
        if (fe > attn) ++wins;
    }
    const double n = static_cast<double>(test.size());
    const double share = static_cast<double>(wins) / n;
    const bool pass = valid == addresses && share >= 0.7;
    return {pass, std::to_string(valid) + "/" + std::to_string(addresses) + " addresses give valid P5 maps" + problems +
                      "; FE area > attention area on " + std::to_string(wins) + "/" + std::to_string(test.size()) +
                      " held-out gratings (" + fmt(100.0 * share, 3) + "%, need 70%), mean area fe " +
                      fmt(fe_sum / n) + " vs attention " + fmt(attn_sum / n)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    int only = 0;
    Context ctx{fs::current_path() / "acceptance_work", fs::path(argv[0]).parent_path() / ".." / "tools" / "fwnet"};
    app.add_option("--criterion", only, "run a single criterion (1-9)")->check(CLI::Range(1, 9));
    app.add_option("--work", ctx.work, "directory for the checkpoint and maps");
    app.add_option("--cli", ctx.cli, "path to the fwnet executable");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::function<Outcome(const Context&)>> checks{
        fft_correctness,   convolution_theorem, gradient_suite,      receptive_field, parameter_counts,
        flop_totals,       complexity_ordering, toy_training,        cam_validity};
    bool all = true;
    for (int i = 1; i <= 9; ++i) {
        if (only && i != only) continue;
        Outcome o;
        try {
            o = checks[i - 1](ctx);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        all = all && o.pass;
        std::cout << "criterion " << i << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    }
    return all ? 0 : 1;
}
