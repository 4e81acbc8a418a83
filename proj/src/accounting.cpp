#include "fwnet/accounting.hpp"

#include <sstream>

namespace fwnet {

std::uint64_t ceil_log2(std::uint64_t n) {
    if (n == 0) throw ArgumentError("ceil_log2: n must be positive");
    std::uint64_t bits = 0;
    while ((std::uint64_t{1} << bits) < n) ++bits;
    return bits;
}

std::uint64_t flops_msa(std::uint64_t h, std::uint64_t w, std::uint64_t c) {
    const std::uint64_t hw = h * w;
    return 4 * hw * c * c + 2 * hw * hw * c;
}

std::uint64_t flops_wmsa(std::uint64_t h, std::uint64_t w, std::uint64_t c, std::uint64_t m) {
    if (m == 0 || h % m != 0 || w % m != 0) {
        throw ArgumentError("flops_wmsa: window " + std::to_string(m) + " does not divide " + std::to_string(h) +
                            "x" + std::to_string(w));
    }
    const std::uint64_t hw = h * w;
    return 4 * hw * c * c + 2 * m * m * hw * c;
}

std::uint64_t flops_fe(std::uint64_t h, std::uint64_t w, std::uint64_t c) {
    const std::uint64_t hw = h * w;
    return 2 * hw * c * ceil_log2(hw) + hw * c;
}

void CostReport::add(std::string name, std::uint64_t params, std::uint64_t flops) {
    total_params += params;
    total_flops += flops;
    rows.push_back({std::move(name), params, flops});
}

namespace {

struct Sizes {
    std::uint64_t ffn_params(std::uint64_t c) const { return 2 * ratio * c * c + ratio * c + c; }
    std::uint64_t ratio;
};

CostReport build_report(const ModelConfig& cfg, bool with_flops) {
    cfg.validate();
    CostReport r;
    const Sizes sz{cfg.ffn_ratio};
    const std::uint64_t c0 = cfg.embed_dim;
    const std::uint64_t k = cfg.patch * cfg.patch * cfg.in_chans;
    const std::uint64_t r0 = cfg.stage_resolution(0);
    r.add("embed", k * c0 + c0 + 2 * c0, with_flops ? r0 * r0 * k * c0 : 0);

    const std::uint64_t m = cfg.window;
    const std::uint64_t span = 2 * m - 1;
    for (std::size_t s = 0; s < cfg.num_stages(); ++s) {
        const std::uint64_t c = cfg.stage_dim(s);
        const std::uint64_t res = cfg.stage_resolution(s);
        const std::uint64_t hw = res * res;
        const std::uint64_t ffn_flops = 2 * cfg.ffn_ratio * hw * c * c;
        for (std::size_t j = 0; j < cfg.depths[s]; ++j) {
            const std::string name = "stage" + std::to_string(s) + ".block" + std::to_string(j);
            if (j % 2 == 0) {
                const std::uint64_t params =
                    2 * c + (3 * c * c + 3 * c) + (c * c + c) + span * span * cfg.stage_heads(s) + 2 * c + sz.ffn_params(c);
                r.add(name + ".attn", params, with_flops ? flops_wmsa(res, res, c, m) + ffn_flops : 0);
                continue;
            }
            std::uint64_t params = 2 * c + sz.ffn_params(c);
            std::uint64_t flops = ffn_flops;
            if (cfg.variant != Variant::Win) {
                params += 2 * c + res * half_width(res) * c * 2;
                flops += flops_fe(res, res, c);
            }
            if (cfg.variant == Variant::FwNetEca) {
                params += 3;
                flops += 3 * c + hw * c;
            } else if (cfg.variant == Variant::FwNetSe) {
                const std::uint64_t hidden = c / cfg.se_reduction;
                params += 2 * c * hidden + hidden + c;
                flops += 2 * c * hidden + hw * c;
            }
            r.add(name + ".filter", params, with_flops ? flops : 0);
        }
        if (s + 1 < cfg.num_stages()) {
            const std::uint64_t out_hw = (res / 2) * (res / 2);
            r.add("stage" + std::to_string(s) + ".merge", 8 * c + 8 * c * c, with_flops ? out_hw * 8 * c * c : 0);
        }
    }
    const std::uint64_t cf = cfg.final_dim();
    const std::uint64_t classes = cfg.num_classes;
    r.add("head", 2 * cf + cf * classes + classes, with_flops ? cf * classes : 0);
    return r;
}

}  // namespace

CostReport count_params(const ModelConfig& config) { return build_report(config, false); }

CostReport model_flops(const ModelConfig& config, std::size_t resolution) {
    ModelConfig at = config;
    at.image_size = resolution;
    try {
        at.validate();
    } catch (const ConfigError& e) {
        throw ArgumentError("model_flops: resolution " + std::to_string(resolution) + " incompatible: " + e.what());
    }
    return build_report(at, true);
}

std::vector<SweepRow> sweep_report(SweepKind kind, SweepAxis axis, const std::vector<std::size_t>& values,
                                   const SweepOptions& opt) {
    if (values.empty()) throw ArgumentError("sweep_report: empty range");
    std::vector<SweepRow> rows;
    for (std::size_t value : values) {
        if (value == 0) throw ArgumentError("sweep_report: sweep values must be positive");
        std::uint64_t side = 0;
        std::uint64_t c = 0;
        if (axis == SweepAxis::Dimension) {
            c = value;
            if ((opt.base_side * opt.base_dim) % c != 0) {
                throw ArgumentError("sweep_report: dimension " + std::to_string(c) + " does not divide " +
                                    std::to_string(opt.base_side * opt.base_dim));
            }
            side = opt.base_side * opt.base_dim / c;
        } else {
            if (value % opt.patch != 0) {
                throw ArgumentError("sweep_report: resolution " + std::to_string(value) + " not divisible by patch " +
                                    std::to_string(opt.patch));
            }
            side = value / opt.patch;
            c = opt.channels;
        }
        if (kind == SweepKind::Params) {
            const std::uint64_t attn = 4 * c * c + 4 * c;
            rows.push_back({"msa", value, attn});
            rows.push_back({"wmsa", value, attn});
            rows.push_back({"fe", value, side * half_width(side) * c * 2});
        } else {
            rows.push_back({"msa", value, flops_msa(side, side, c)});
            if (side % opt.window == 0) rows.push_back({"wmsa", value, flops_wmsa(side, side, c, opt.window)});
            rows.push_back({"fe", value, flops_fe(side, side, c)});
        }
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "method,axis_value,count\n";
    for (const auto& r : rows) os << r.method << ',' << r.axis_value << ',' << r.count << '\n';
    return os.str();
}

}  // namespace fwnet
