#pragma once

// Per-step metric rows with CSV output.

#include <filesystem>
#include <string>
#include <vector>

namespace neurodec {

struct TrainLog {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    void add(std::vector<double> row) { rows.push_back(std::move(row)); }
    // Column values in step order.
    std::vector<double> column(const std::string& name) const;
    // One row per epoch: step = last step of the epoch, other columns averaged.
    TrainLog per_epoch(std::size_t steps_per_epoch) const;
    void write_csv(const std::filesystem::path& path) const;
};

}  // namespace neurodec

#include <cstdint>
#include <functional>

#include "neurodec/optim.hpp"
#include "neurodec/rng.hpp"

namespace neurodec {

struct Schedule {
    std::size_t epochs = 1;
    std::size_t batch = 8;
    std::size_t max_steps = 0;  // caps epochs * ceil(n / batch) when > 0
    double lr = 1e-3;
    double min_lr = 0.0;
    double warmup_frac = 0.05;
    std::uint64_t seed = 0;
};

std::size_t total_steps(std::size_t n, std::size_t batch, std::size_t epochs, std::size_t max_steps);

// Shuffled mini-batches over [0, n) with warmup + cosine learning rate.
// `step_fn(batch_indices, rng)` runs one optimizer step and returns the
// logged metrics; the log row is {step, metrics..., lr}.
using StepFn = std::function<std::vector<double>(const std::vector<std::size_t>&, Rng&)>;
TrainLog train_loop(std::size_t n, const Schedule& sched, AdamW& opt, std::vector<std::string> metric_names,
                    const StepFn& step_fn, const std::function<void(const std::vector<double>&)>& on_step = {});

}  // namespace neurodec
