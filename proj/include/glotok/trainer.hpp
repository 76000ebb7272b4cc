#pragma once

#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "glotok/config.hpp"
#include "glotok/data.hpp"
#include "glotok/error.hpp"
#include "glotok/model.hpp"
#include "glotok/optim.hpp"
#include "glotok/teacher.hpp"

namespace glotok {

// Owns the model, optimizer moments and the run RNG (batch order and pair
// subsampling). Single-threaded; everything is fixed by the config seed.
template <class T>
class Trainer {
public:
    Trainer(const TrainConfig& cfg, std::optional<TeacherDistribution> teacher)
        : cfg_(cfg), teacher_(std::move(teacher)), model_(cfg), rng_(cfg.seed) {
        model_.init(rng_);
        adam_.init(model_.params());
        if (teacher_ && teacher_->bins() != cfg_.bins)
            throw ValueError("trainer: teacher has " + std::to_string(teacher_->bins()) + " bins, config expects " +
                             std::to_string(cfg_.bins));
        if (teacher_ && teacher_->k() != cfg_.K_sem)
            std::clog << "note: teacher K=" << teacher_->k() << " differs from K_sem=" << cfg_.K_sem << '\n';
        if (cfg_.lambda_hist != 0.0 && !teacher_) throw ValueError("trainer: lambda_hist > 0 requires a teacher distribution");
    }

    const TrainConfig& config() const noexcept { return cfg_; }
    TokenizerModel<T>& model() noexcept { return model_; }
    const TokenizerModel<T>& model() const noexcept { return model_; }
    AdamState<T>& adam() noexcept { return adam_; }
    const AdamState<T>& adam() const noexcept { return adam_; }
    std::mt19937_64& rng() noexcept { return rng_; }
    const std::mt19937_64& rng() const noexcept { return rng_; }
    std::uint64_t steps_done() const noexcept { return step_; }
    void set_steps_done(std::uint64_t s) noexcept { step_ = s; }
    const std::optional<TeacherDistribution>& teacher() const noexcept { return teacher_; }

    // Batch indices without replacement via a partial Fisher-Yates shuffle.
    std::vector<std::size_t> sample_batch(std::size_t dataset_size) {
        if (dataset_size == 0) throw ValueError("trainer: dataset is empty");
        const std::size_t b = std::min(cfg_.batch, dataset_size);
        std::vector<std::size_t> idx(dataset_size);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < b; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, dataset_size - 1);
            std::swap(idx[i], idx[pick(rng_)]);
        }
        idx.resize(b);
        return idx;
    }

    // One optimizer step on `batch`. Throws NonFiniteError (parameters
    // untouched) if any loss term or gradient is NaN/Inf.
    LossBreakdown step(const Tensor<T>& batch) {
        model_.zero_grad();
        ForwardState<T> s;
        model_.forward(batch, s);
        LossBreakdown lb;
        // L_hist is computed (and logged) whenever a teacher exists, even at weight 0.
        auto grads = model_.losses(s, teacher_ ? &*teacher_ : nullptr, lb, &rng_);
        for (const auto& [name, v] : lb.named())
            if (!std::isfinite(v)) throw NonFiniteError(name, "training step aborted: loss term " + name + " is not finite");
        model_.backward(s, grads);
        const auto ps = model_.params();
        for (const auto* p : ps)
            if (!p->grad.all_finite())
                throw NonFiniteError(p->name, "training step aborted: non-finite gradient in " + p->name);
        adam_step(ps, adam_, cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);
        ++step_;
        return lb;
    }

    LossBreakdown step_on(const Tensor<float>& dataset) {
        const auto idx = sample_batch(dataset.dim(0));
        return step(gather_images<T>(dataset, idx));
    }

    // Forward-only losses on `batch` at the current parameters.
    LossBreakdown evaluate(const Tensor<T>& batch) const {
        ForwardState<T> s;
        model_.forward(batch, s);
        LossBreakdown lb;
        std::mt19937_64 scratch(0);
        model_.losses(s, teacher_ ? &*teacher_ : nullptr, lb, &scratch);
        return lb;
    }

private:
    TrainConfig cfg_;
    std::optional<TeacherDistribution> teacher_;
    TokenizerModel<T> model_;
    AdamState<T> adam_;
    std::mt19937_64 rng_;
    std::uint64_t step_ = 0;
};

// One JSON-lines record per step.
inline nlohmann::json step_record(std::uint64_t step, const LossBreakdown& lb) {
    nlohmann::json j;
    j["step"] = step;
    for (const auto& [k, v] : lb.named()) j[k] = v;
    return j;
}

} // namespace glotok
