// Mini-batch AdamW training with a cosine learning-rate schedule.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fwnet/data.hpp"
#include "fwnet/model.hpp"

namespace fwnet {

class TrainingError : public Error {
public:
    using Error::Error;
};

struct TrainOptions {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double min_lr = 1e-5;
    double weight_decay = 0.05;
    std::uint64_t seed = 0;
};

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
};

/// lr at `step` of `total`: min_lr + (lr − min_lr)·(1 + cos(π·step/total))/2.
double cosine_lr(const TrainOptions& opt, std::size_t step, std::size_t total);

/// Trains `model` in place over shuffled mini-batches. Loss and accuracy are
/// averaged over the samples seen during each epoch. Throws TrainingError on a
/// non-finite loss.
std::vector<EpochMetrics> train(FwNetModel& model, const Dataset& data, const TrainOptions& opt,
                                const std::function<void(const EpochMetrics&)>& on_epoch = {});

std::size_t argmax(std::span<const double> v);

/// Fraction of `data` whose predicted class equals the label.
double evaluate_accuracy(const FwNetModel& model, const Dataset& data, std::size_t batch_size = 64);

std::string metrics_csv(const std::vector<EpochMetrics>& rows);

}  // namespace fwnet
