#include "fwnet/bench.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "fwnet/accounting.hpp"
#include "fwnet/attention.hpp"
#include "fwnet/spectral.hpp"

namespace fwnet {

namespace {

volatile double g_sink = 0.0;

RealTensor random_tensor(const Shape& shape, std::mt19937_64& rng, double sigma) {
    std::normal_distribution<double> dist(0.0, sigma);
    RealTensor t(shape);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

AttentionParams random_attention(std::size_t c, std::size_t window, std::mt19937_64& rng) {
    AttentionParams p = AttentionParams::zeros(c, std::max<std::size_t>(1, c / 32), window);
    std::normal_distribution<double> dist(0.0, 0.02);
    for (auto* t : {&p.w_qkv, &p.w_out, &p.bias_table}) {
        for (double& v : t->data()) v = dist(rng);
    }
    return p;
}

}  // namespace

TimingStats timing_stats(const std::vector<double>& samples) {
    TimingStats s;
    if (samples.empty()) return s;
    for (double v : samples) s.mean += v;
    s.mean /= static_cast<double>(samples.size());
    double var = 0.0;
    for (double v : samples) var += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(samples.size()));
    return s;
}

std::vector<double> time_calls(const std::function<void()>& fn, std::size_t warmup, std::size_t reps) {
    for (std::size_t i = 0; i < warmup; ++i) fn();
    std::vector<double> ms;
    ms.reserve(reps);
    for (std::size_t i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return ms;
}

std::vector<BenchRow> run_bench(const BenchOptions& opt, const std::function<void(const std::string&)>& warn) {
    if (opt.reps < kMinBenchReps) {
        throw ArgumentError("bench needs at least " + std::to_string(kMinBenchReps) + " repetitions");
    }
    if (opt.warmup < kMinBenchWarmup) {
        throw ArgumentError("bench needs at least " + std::to_string(kMinBenchWarmup) + " warmup iterations");
    }
    if (opt.channels == 0 || opt.window == 0 || opt.patch == 0) throw ArgumentError("bench sizes must be positive");
    for (const auto& m : opt.methods) {
        if (m != "msa" && m != "wmsa" && m != "fe") throw ArgumentError("unknown bench method '" + m + "'");
    }
    auto skip = [&](const std::string& msg) {
        if (warn) warn(msg);
    };

    std::vector<BenchRow> rows;
    const std::size_t c = opt.channels;
    for (std::size_t res : opt.resolutions) {
        if (res == 0 || res % opt.patch != 0) {
            skip("skipping resolution " + std::to_string(res) + ": not divisible by patch " + std::to_string(opt.patch));
            continue;
        }
        const std::size_t side = res / opt.patch;
        std::mt19937_64 rng(opt.seed + res);
        const FeatureMap x = random_tensor({1, side, side, c}, rng, 1.0);
        for (const auto& method : opt.methods) {
            BenchRow row{method, res, c, 0, opt.reps, 0.0, 0.0, 0};
            std::function<void()> fn;
            if (method == "fe") {
                FilterWeights w = FilterWeights::constant(side, side, c, Complex(1.0, 0.0));
                std::normal_distribution<double> dist(0.0, 0.02);
                for (auto& v : w.data.data()) v += Complex(dist(rng), dist(rng));
                row.flops = flops_fe(side, side, c);
                fn = [x, w]() { g_sink = g_sink + filter_enhance_forward(x, w)[0]; };
            } else {
                const std::size_t m = method == "msa" ? side : opt.window;
                if (side % m != 0) {
                    skip("skipping " + method + " at resolution " + std::to_string(res) + ": window " +
                         std::to_string(m) + " does not divide the " + std::to_string(side) + "x" +
                         std::to_string(side) + " token map");
                    continue;
                }
                row.window = m;
                row.flops = method == "msa" ? flops_msa(side, side, c) : flops_wmsa(side, side, c, m);
                AttentionParams p = random_attention(c, m, rng);
                fn = [x, p, m]() {
                    const WindowGrid g = window_partition(x, m);
                    const WindowGrid y = wmsa_forward(g, p);
                    g_sink = g_sink + window_reverse(y, x.dim(1), x.dim(2))[0];
                };
            }
            const TimingStats s = timing_stats(time_calls(fn, opt.warmup, opt.reps));
            row.mean_ms = s.mean;
            row.std_ms = s.stddev;
            rows.push_back(row);
        }
    }
    return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream os;
    os.precision(8);
    os << "method,resolution,channels,window,reps,mean_ms,std_ms,flops\n";
    for (const auto& r : rows) {
        os << r.method << ',' << r.resolution << ',' << r.channels << ',' << r.window << ',' << r.reps << ','
           << r.mean_ms << ',' << r.std_ms << ',' << r.flops << '\n';
    }
    return os.str();
}

}  // namespace fwnet
