#include "ded/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "ded/error.hpp"

namespace ded::nn {

Tensor& ParameterStore::create(const std::string& name, Tensor init) {
    if (entries_.count(name) > 0) {
        throw Error("parameter '" + name + "' already exists");
    }
    Entry entry;
    entry.grad = Tensor::zeros(init.shape());
    entry.m = Tensor::zeros(init.shape());
    entry.v = Tensor::zeros(init.shape());
    entry.value = std::move(init);
    return entries_.emplace(name, std::move(entry)).first->second.value;
}

Tensor& ParameterStore::value(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw Error("unknown parameter '" + name + "'");
    }
    return it->second.value;
}

const Tensor& ParameterStore::value(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw Error("unknown parameter '" + name + "'");
    }
    return it->second.value;
}

Tensor& ParameterStore::grad(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw Error("unknown parameter '" + name + "'");
    }
    return it->second.grad;
}

void ParameterStore::zero_grads() {
    for (auto& [name, entry] : entries_) {
        entry.grad.zero();
    }
    gradients_ready_ = false;
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, entry] : entries_) {
        out.push_back(name);
    }
    return out;
}

int64_t ParameterStore::parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, entry] : entries_) {
        n += entry.value.size();
    }
    return n;
}

void adamw_step(ParameterStore& store, double lr, double beta1, double beta2, double eps,
                double weight_decay) {
    if (!store.gradients_ready_) {
        throw MissingGradient("adamw_step without populated gradients");
    }
    ++store.step_count_;
    const double t = static_cast<double>(store.step_count_);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (auto& [name, entry] : store.entries_) {
        float* p = entry.value.data();
        const float* g = entry.grad.data();
        float* m = entry.m.data();
        float* v = entry.v.data();
        const int64_t n = entry.value.size();
        for (int64_t i = 0; i < n; ++i) {
            const double gi = g[i];
            const double mi = beta1 * m[i] + (1.0 - beta1) * gi;
            const double vi = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double update = (mi / bc1) / (std::sqrt(vi / bc2) + eps) + weight_decay * p[i];
            p[i] = static_cast<float>(p[i] - lr * update);
        }
    }
    store.gradients_ready_ = false;
}

double lr_at(const LrSchedule& schedule, int64_t step) {
    if (schedule.floor < 0.0 || schedule.floor > schedule.peak ||
        schedule.warmup_steps > schedule.total_steps) {
        throw StepOutOfRange("invalid learning-rate schedule");
    }
    if (step < 0 || step > schedule.total_steps) {
        throw StepOutOfRange("step " + std::to_string(step) + " outside [0, total_steps]");
    }
    if (step <= schedule.warmup_steps) {
        if (schedule.warmup_steps == 0) {
            return schedule.peak;
        }
        return schedule.peak * static_cast<double>(step) /
               static_cast<double>(schedule.warmup_steps);
    }
    const double span = static_cast<double>(schedule.total_steps - schedule.warmup_steps);
    const double progress = static_cast<double>(step - schedule.warmup_steps) / span;
    return schedule.floor +
           0.5 * (schedule.peak - schedule.floor) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

double check_gradients(const std::function<double(ParameterStore&, bool)>& forward,
                       ParameterStore& store, double perturbation) {
    store.zero_grads();
    const double base = forward(store, true);
    if (!std::isfinite(base)) {
        throw NonFiniteLoss("gradient check: loss is not finite");
    }
    double max_rel = 0.0;
    for (const std::string& name : store.names()) {
        Tensor analytic = store.grad(name);  // copy before further forwards
        Tensor& value = store.value(name);
        double diff_sq = 0.0;
        double analytic_sq = 0.0;
        double numeric_sq = 0.0;
        for (int64_t i = 0; i < value.size(); ++i) {
            const float saved = value[i];
            auto eval_at = [&](double offset) {
                value[i] = static_cast<float>(saved + offset);
                const double loss = forward(store, false);
                if (!std::isfinite(loss)) {
                    value[i] = saved;
                    throw NonFiniteLoss("gradient check: perturbed loss is not finite");
                }
                return loss;
            };
            // five-point central stencil: O(h^4) truncation, which lets the
            // step stay large enough to rise above float32 rounding noise
            const double h = perturbation;
            const double numeric = (8.0 * (eval_at(h) - eval_at(-h)) -
                                    (eval_at(2.0 * h) - eval_at(-2.0 * h))) /
                                   (12.0 * h);
            value[i] = saved;
            const double a = analytic[i];
            diff_sq += (a - numeric) * (a - numeric);
            analytic_sq += a * a;
            numeric_sq += numeric * numeric;
        }
        // per-parameter relative error in the L2 norm
        const double denom =
            std::max({std::sqrt(analytic_sq), std::sqrt(numeric_sq), 1e-8});
        max_rel = std::max(max_rel, std::sqrt(diff_sq) / denom);
    }
    return max_rel;
}

// --- checkpoints ---

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out.write("DEDW", 4);
    for (const std::string& name : store.names()) {
        const Tensor& t = store.value(name);
        write_pod(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, static_cast<uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) {
            write_pod(out, static_cast<uint32_t>(t.dim(i)));
        }
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!out) {
        throw IoError("short write: " + path);
    }
}

void load_checkpoint(ParameterStore& store, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open for reading: " + path);
    }
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DEDW", 4) != 0) {
        throw IoError("bad checkpoint magic in " + path);
    }
    while (true) {
        const uint32_t name_len = read_pod<uint32_t>(in);
        if (in.eof()) {
            break;
        }
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t rank = read_pod<uint32_t>(in);
        std::vector<int64_t> shape(rank);
        for (uint32_t i = 0; i < rank; ++i) {
            shape[i] = static_cast<int64_t>(read_pod<uint32_t>(in));
        }
        Tensor t = Tensor::uninitialized(shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(float)));
        if (!in) {
            throw IoError("truncated checkpoint: " + path);
        }
        auto it = store.entries_.find(name);
        if (it == store.entries_.end()) {
            store.create(name, std::move(t));
        } else {
            it->second.value = std::move(t);
        }
    }
}

}  // namespace ded::nn
