#include "fwnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace fwnet {

double cosine_lr(const TrainOptions& opt, std::size_t step, std::size_t total) {
    if (total == 0) return opt.lr;
    const double t = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
    return opt.min_lr + (opt.lr - opt.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<EpochMetrics> train(FwNetModel& model, const Dataset& data, const TrainOptions& opt,
                                const std::function<void(const EpochMetrics&)>& on_epoch) {
    if (opt.batch_size == 0) throw ArgumentError("batch size must be positive");
    if (data.size() == 0) throw ArgumentError("empty training set");
    for (std::size_t label : data.labels) {
        if (label >= model.config.num_classes) {
            throw ArgumentError("label " + std::to_string(label) + " out of range for " +
                                std::to_string(model.config.num_classes) + " classes");
        }
    }

    const std::size_t n = data.size();
    const std::size_t steps_per_epoch = (n + opt.batch_size - 1) / opt.batch_size;
    const std::size_t total = steps_per_epoch * opt.epochs;
    std::mt19937_64 rng(opt.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    AdamState state;
    AdamWOptions adam;
    adam.weight_decay = opt.weight_decay;
    std::vector<EpochMetrics> history;
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < n; start += opt.batch_size) {
            const std::size_t end = std::min(n, start + opt.batch_size);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<std::size_t> labels;
            for (std::size_t i : idx) labels.push_back(data.labels[i]);

            auto result = model_backward(stack_batch(data, idx), labels, model);
            if (!std::isfinite(result.loss)) {
                throw TrainingError("non-finite loss " + std::to_string(result.loss) + " at epoch " +
                                    std::to_string(epoch) + ", step " + std::to_string(step) + " (lr " +
                                    std::to_string(cosine_lr(opt, step, total)) + ")");
            }
            const std::size_t classes = result.logits.dim(1);
            for (std::size_t b = 0; b < labels.size(); ++b) {
                const std::span<const double> row(result.logits.raw() + b * classes, classes);
                if (argmax(row) == labels[b]) ++correct;
            }
            loss_sum += result.loss * static_cast<double>(labels.size());

            adam.lr = cosine_lr(opt, step, total);
            adamw_step(model, result.grads, state, adam);
            ++step;
        }
        EpochMetrics m{epoch, loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
        history.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    return history;
}

double evaluate_accuracy(const FwNetModel& model, const Dataset& data, std::size_t batch_size) {
    if (data.size() == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
        const RealTensor logits = model_forward(stack_batch(data, idx), model);
        const std::size_t classes = logits.dim(1);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            if (argmax({logits.raw() + b * classes, classes}) == data.labels[idx[b]]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
    std::ostringstream os;
    os.precision(10);
    os << "epoch,train_loss,train_acc\n";
    for (const auto& r : rows) os << r.epoch << ',' << r.train_loss << ',' << r.train_acc << '\n';
    return os.str();
}

}  // namespace fwnet
