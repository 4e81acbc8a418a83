// Single-layer forward latency of global attention, window attention and the
// frequency filter.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace fwnet {

struct BenchRow {
    std::string method;
    std::size_t resolution = 0;  // input image side; tokens form a (resolution/4)² map
    std::size_t channels = 0;
    std::size_t window = 0;
    std::size_t reps = 0;
    double mean_ms = 0.0;
    double std_ms = 0.0;
    std::uint64_t flops = 0;
};

struct BenchOptions {
    std::vector<std::string> methods{"msa", "wmsa", "fe"};
    std::vector<std::size_t> resolutions{56, 112, 224, 448};
    std::size_t channels = 96;
    std::size_t window = 7;
    std::size_t reps = 50;
    std::size_t warmup = 5;
    std::size_t patch = 4;
    std::uint64_t seed = 0;
};

inline constexpr std::size_t kMinBenchReps = 30;
inline constexpr std::size_t kMinBenchWarmup = 5;

struct TimingStats {
    double mean = 0.0;
    double stddev = 0.0;  // population standard deviation
};

TimingStats timing_stats(const std::vector<double>& samples);

/// Runs `warmup` untimed calls, then returns `reps` wall-clock timings in ms.
std::vector<double> time_calls(const std::function<void()>& fn, std::size_t warmup, std::size_t reps);

/// One row per (method, resolution). Combinations that cannot run (window not
/// dividing the map, resolution not divisible by the patch) are skipped and
/// reported through `warn`.
std::vector<BenchRow> run_bench(const BenchOptions& opt,
                                const std::function<void(const std::string&)>& warn = {});

std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace fwnet
