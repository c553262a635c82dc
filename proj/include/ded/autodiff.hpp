#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ded/tensor.hpp"

namespace ded::nn {

class ParameterStore;

// Reverse-mode autodiff tape. Forward evaluation is eager; each op records a
// backward closure that accumulates into its parents' gradient buffers.
// Construct with grad_enabled=false for inference-only forwards (no closures,
// no saved activations beyond the values themselves).
class Tape {
  public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    // leaves
    int input(Tensor value);
    int param(ParameterStore& store, const std::string& name);
    // read-only parameter access for inference forwards (no gradient binding)
    int read_param(const ParameterStore& store, const std::string& name);

    // y = x @ w + b over the last dim; x [..., in], w [in, out], b [out] or -1
    int linear(int x, int w, int b);

    int add(int a, int b);  // same shape
    // y = x + suffix-broadcast: y's shape must be a trailing suffix of x's
    int add_broadcast(int x, int y);
    // x [B, T, W] + y [B, W] broadcast over T
    int add_batch_vec(int x, int y);
    int scale(int x, float s);
    int gelu(int x);
    int layer_norm(int x, int gain, int bias);  // normalizes the last dim, eps 1e-5

    // table [V, W] gathered by ids -> [ids.size(), W]
    int embedding(int table, std::vector<int32_t> ids);

    // x [R, W] gathered by row indices -> [indices.size(), W]
    int select_rows(int x, std::vector<int32_t> indices);

    // q [B, Tq, W], k/v [B, Tk, W]; multi-head scaled dot product attention.
    // causal masks j > i; kv_lens (optional, per batch) masks keys >= len.
    // Masking is additive -1e9 pre-softmax.
    int attention(int q, int k, int v, int heads, bool causal,
                  const std::vector<int>* kv_lens = nullptr);

    // logits [..., V] flattened to rows; loss = sum_i w_i * nll_i / sum_i w_i
    int softmax_cross_entropy(int logits, std::vector<int32_t> targets, std::vector<float> weights);

    // mean over all elements of (pred - target)^2
    int mse(int pred, Tensor target);

    // t [B] (float timesteps) -> [B, dim]: [sin(t*w_0..), cos(t*w_0..)],
    // w_i = exp(-ln(10000) * i / (dim/2)); differentiable in t
    int timestep_embed(int t, int dim);

    int reshape(int x, std::vector<int64_t> new_shape);
    int slice_rows(int x, int64_t start, int64_t count);  // x [R, W]
    int concat_rows(const std::vector<int>& xs);          // all [R_i, W]
    // out[b, r, :] = r in [offset_b, offset_b + y_rows) ? y[b, r - offset_b, :] : x[b, r, :]
    int splice_rows(int x, int y, std::vector<int> offsets);

    void backward(int loss);  // seeds d(loss)=1, runs the tape in reverse, then
                              // adds bound parameter gradients into their stores

    const Tensor& value(int node) const { return nodes_[static_cast<size_t>(node)].value; }
    const Tensor& grad(int node) const { return nodes_[static_cast<size_t>(node)].grad; }
    bool grad_enabled() const { return grad_enabled_; }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Tape&, int)> backward_fn;  // called with the node's own id
        bool requires_grad = false;
    };
    struct Binding {
        int node;
        ParameterStore* store;
        std::string name;
    };

    int push(Tensor value, bool requires_grad, std::function<void(Tape&, int)> backward_fn);
    Tensor& grad_buf(int node);
    bool track(int node) const {
        return grad_enabled_ && nodes_[static_cast<size_t>(node)].requires_grad;
    }

    std::vector<Node> nodes_;
    std::vector<Binding> bindings_;
    bool grad_enabled_;
};

}  // namespace ded::nn
