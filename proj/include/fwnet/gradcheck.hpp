// Central finite-difference verification of the analytic backward passes.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fwnet/tensor.hpp"

namespace fwnet {

class EvaluationError : public Error {
public:
    using Error::Error;
};

inline constexpr double kFiniteDiffEps = 1e-5;

/// (f(θ+ε) − f(θ−ε)) / 2ε for every coordinate of every span. Coordinates are
/// perturbed in place and restored. f must read the spans' current values.
std::vector<std::vector<double>> finite_diff_scalar(const std::function<double()>& f,
                                                    std::span<const std::span<double>> params,
                                                    double eps = kFiniteDiffEps);

struct GradRow {
    std::string name;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t coordinates = 0;
    double tolerance = 0.0;
    bool passed = true;
};

/// Per-coordinate relative error |a − n| / max(|a|, |n|, 1e-8). A coordinate
/// fails when its relative error exceeds `tol` and its absolute error exceeds
/// `abs_floor`; the floor absorbs central-difference roundoff on gradients that
/// are identically zero.
GradRow compare_gradients(std::string name, std::span<const double> analytic, std::span<const double> numeric,
                          double tol, double abs_floor = 1e-8);

struct GradReport {
    std::vector<GradRow> rows;

    bool passed() const;
    std::vector<std::string> failures() const;
    std::string to_text() const;
    std::string to_csv() const;
};

/// Corrupts one analytic gradient coordinate before comparison (harness self-test).
struct GradFault {
    std::string tensor;  // row name, e.g. "eca.kernel"
    std::size_t coordinate = 0;
    double factor = -1.0;  // multiplier applied to the analytic value
};

struct GradSuiteOptions {
    double layer_tolerance = 1e-4;
    double model_tolerance = 1e-3;
    double eps = kFiniteDiffEps;
    std::size_t mini_samples = 4;  // sampled coordinates per tensor of the full toy model; 0 skips it
    std::optional<GradFault> fault;
};

/// Checks filter_enhance, wmsa, eca, se, ffn, layer_norm, patch_embed,
/// patch_merge, head, both block types, a reduced model in full and the toy
/// classifier on sampled coordinates.
GradReport run_suite(std::uint64_t seed, const GradSuiteOptions& options = {});

}  // namespace fwnet
