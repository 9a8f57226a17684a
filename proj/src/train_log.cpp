#include "neurodec/train_log.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace neurodec {

std::vector<double> TrainLog::column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw std::out_of_range("TrainLog: no column " + name);
    const auto c = static_cast<std::size_t>(it - columns.begin());
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
}

TrainLog TrainLog::per_epoch(std::size_t steps_per_epoch) const {
    TrainLog out;
    out.columns = columns;
    if (steps_per_epoch == 0) return out;
    for (std::size_t begin = 0; begin < rows.size(); begin += steps_per_epoch) {
        const std::size_t end = std::min(rows.size(), begin + steps_per_epoch);
        std::vector<double> avg(columns.size(), 0.0);
        for (std::size_t r = begin; r < end; ++r)
            for (std::size_t c = 0; c < columns.size(); ++c) avg[c] += rows[r][c];
        for (auto& v : avg) v /= static_cast<double>(end - begin);
        avg[0] = rows[end - 1][0];
        out.rows.push_back(std::move(avg));
    }
    return out;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "," : "") << columns[c];
    os << "\n" << std::setprecision(17);
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < r.size(); ++c) os << (c ? "," : "") << r[c];
        os << "\n";
    }
}

}  // namespace neurodec

#include <cmath>

namespace neurodec {

std::size_t total_steps(std::size_t n, std::size_t batch, std::size_t epochs, std::size_t max_steps) {
    const std::size_t steps = ((n + batch - 1) / batch) * epochs;
    return max_steps > 0 ? std::min(steps == 0 ? max_steps : steps, max_steps) : steps;
}

TrainLog train_loop(std::size_t n, const Schedule& sched, AdamW& opt, std::vector<std::string> metric_names,
                    const StepFn& step_fn, const std::function<void(const std::vector<double>&)>& on_step) {
    if (n == 0) throw std::invalid_argument("train_loop: no training data");
    if (sched.batch == 0) throw std::invalid_argument("train_loop: batch must be >= 1");
    const std::size_t steps = total_steps(n, sched.batch, sched.epochs, sched.max_steps);
    const auto warmup = static_cast<std::size_t>(std::llround(sched.warmup_frac * static_cast<double>(steps)));
    const std::size_t per_epoch = (n + sched.batch - 1) / sched.batch;
    const Rng root(sched.seed);
    TrainLog log;
    log.columns.push_back("step");
    for (auto& m : metric_names) log.columns.push_back(std::move(m));
    log.columns.push_back("lr");
    std::vector<std::size_t> order;
    for (std::size_t step = 0; step < steps; ++step) {
        const std::size_t pos = step % per_epoch;
        if (pos == 0) order = root.derive(1000000 + step / per_epoch).permutation(n);
        std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(pos * sched.batch),
                                       order.begin() + static_cast<std::ptrdiff_t>(std::min(n, (pos + 1) * sched.batch)));
        const double lr = warmup_cosine_lr(step, steps, warmup, sched.lr, sched.min_lr);
        opt.set_lr(lr);
        Rng step_rng = root.derive(step);
        std::vector<double> row{static_cast<double>(step)};
        for (double m : step_fn(batch, step_rng)) row.push_back(m);
        row.push_back(lr);
        log.add(std::move(row));
        if (on_step) on_step(log.rows.back());
    }
    return log;
}

}  // namespace neurodec
