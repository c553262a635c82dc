#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ded/tensor.hpp"

namespace ded::nn {

// Named parameters with gradients and AdamW moment buffers. One training loop
// owns a store exclusively; gradients accumulate across train-step calls until
// adamw_step consumes them.
class ParameterStore {
  public:
    Tensor& create(const std::string& name, Tensor init);
    bool has(const std::string& name) const { return entries_.count(name) > 0; }
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    Tensor& grad(const std::string& name);

    void zero_grads();
    std::vector<std::string> names() const;  // sorted
    int64_t parameter_count() const;

    int64_t step_count() const { return step_count_; }
    bool gradients_ready() const { return gradients_ready_; }
    void mark_gradients_ready() { gradients_ready_ = true; }

  private:
    struct Entry {
        Tensor value;
        Tensor grad;
        Tensor m;
        Tensor v;
    };
    std::map<std::string, Entry> entries_;
    int64_t step_count_ = 0;
    bool gradients_ready_ = false;

    friend void adamw_step(ParameterStore&, double, double, double, double, double);
    friend void load_checkpoint(ParameterStore&, const std::string&);
};

// Decoupled weight decay Adam with bias correction; increments the step
// counter. Throws MissingGradient when no backward pass populated gradients
// since the previous step.
void adamw_step(ParameterStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8, double weight_decay = 0.01);

// Linear warmup 0 -> peak over [0, warmup_steps], then cosine decay
// peak -> floor over [warmup_steps, total_steps].
struct LrSchedule {
    int64_t warmup_steps = 1000;
    double peak = 5e-5;
    double floor = 1e-5;
    int64_t total_steps = 0;
};
double lr_at(const LrSchedule& schedule, int64_t step);  // throws StepOutOfRange

// Central-difference gradient check. `forward(store, compute_grads)` must
// deterministically return the scalar loss, accumulating gradients into the
// store when compute_grads is true. Returns the max over parameters of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8), where |.| is the
// per-parameter L2 norm. Throws NonFiniteLoss when the loss is not finite.
double check_gradients(const std::function<double(ParameterStore&, bool)>& forward,
                       ParameterStore& store, double perturbation = 1e-3);

// Little-endian checkpoint: magic "DEDW", then per parameter (sorted by name)
// a (u32 name length, name bytes, u32 rank, u32 dims..., f32 values) record.
// Round-trips bit-exactly.
void save_checkpoint(const ParameterStore& store, const std::string& path);
void load_checkpoint(ParameterStore& store, const std::string& path);

}  // namespace ded::nn
