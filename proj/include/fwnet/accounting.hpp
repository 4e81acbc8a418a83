// Closed-form parameter and multiply-accumulate counts.
//
// Kernel costs for an H×W map of C-dimensional tokens and window M:
//   global attention   4HWC² + 2(HW)²C
//   window attention   4HWC² + 2M²HWC
//   frequency filter   2HWC⌈log₂ HW⌉ + HWC

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fwnet/model.hpp"

namespace fwnet {

std::uint64_t flops_msa(std::uint64_t h, std::uint64_t w, std::uint64_t c);
std::uint64_t flops_wmsa(std::uint64_t h, std::uint64_t w, std::uint64_t c, std::uint64_t m);
std::uint64_t flops_fe(std::uint64_t h, std::uint64_t w, std::uint64_t c);

/// ⌈log₂ n⌉ for n >= 1.
std::uint64_t ceil_log2(std::uint64_t n);

struct CostRow {
    std::string name;
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
};

struct CostReport {
    std::vector<CostRow> rows;
    std::uint64_t total_params = 0;
    std::uint64_t total_flops = 0;

    void add(std::string name, std::uint64_t params, std::uint64_t flops);
};

/// Parameter totals per layer, no model instantiation. FLOP columns are zero.
CostReport count_params(const ModelConfig& config);

/// Parameter and MAC totals per layer at a square input resolution.
CostReport model_flops(const ModelConfig& config, std::size_t resolution);

enum class SweepKind { Params, Flops };
enum class SweepAxis { Dimension, Resolution };

struct SweepRow {
    std::string method;
    std::uint64_t axis_value = 0;
    std::uint64_t count = 0;
};

/// Per-layer cost of global attention ("msa"), window attention ("wmsa") and the
/// frequency filter ("fe") across a sweep.
///
/// Dimension axis: token dimension C with the map side shrinking as C grows,
/// side = base_side·base_dim / C (a hierarchical stage progression).
/// Resolution axis: input image side with patch 4 tokens at fixed C.
struct SweepOptions {
    std::size_t base_side = 56;
    std::size_t base_dim = 96;
    std::size_t channels = 96;
    std::size_t patch = 4;
    std::size_t window = 7;
};

std::vector<SweepRow> sweep_report(SweepKind kind, SweepAxis axis, const std::vector<std::size_t>& values,
                                   const SweepOptions& opt = {});

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace fwnet
