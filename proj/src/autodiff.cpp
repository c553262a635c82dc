#include "ded/autodiff.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>
#include <memory>

#include "ded/error.hpp"
#include "ded/nn.hpp"

namespace ded::nn {

namespace {

int64_t row_count(const Tensor& t) {
    int64_t rows = 1;
    for (int i = 0; i + 1 < t.rank(); ++i) {
        rows *= t.dim(i);
    }
    return rows;
}

// Small products accumulate in double (tight gradient checks); large ones go
// through BLAS where float accumulation is the price of throughput.
constexpr int64_t kDoubleGemmThreshold = 1 << 18;

void sgemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha,
           const float* a, int64_t lda, const float* b, int64_t ldb, float beta, float* c,
           int64_t ldc) {
    if (m * n * k <= kDoubleGemmThreshold) {
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int64_t p = 0; p < k; ++p) {
                    const float av = trans_a ? a[p * lda + i] : a[i * lda + p];
                    const float bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
                    acc += static_cast<double>(av) * bv;
                }
                float& dst = c[i * ldc + j];
                dst = static_cast<float>(alpha * acc + (beta == 0.0f ? 0.0 : beta * dst));
            }
        }
        return;
    }
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                beta, c, static_cast<int>(ldc));
}

constexpr float kMaskValue = -1e9f;
constexpr double kLayerNormEps = 1e-5;

}  // namespace

int Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&, int)> backward_fn) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad && grad_enabled_;
    if (node.requires_grad) {
        node.backward_fn = std::move(backward_fn);
    }
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::grad_buf(int node) {
    Node& n = nodes_[static_cast<size_t>(node)];
    if (n.grad.size() == 0) {
        n.grad = Tensor::zeros(n.value.shape());
    }
    return n.grad;
}

int Tape::input(Tensor value) { return push(std::move(value), false, nullptr); }

int Tape::param(ParameterStore& store, const std::string& name) {
    const int id = push(store.value(name), true, nullptr);
    if (grad_enabled_) {
        bindings_.push_back(Binding{id, &store, name});
    }
    return id;
}

int Tape::read_param(const ParameterStore& store, const std::string& name) {
    return push(store.value(name), false, nullptr);
}

int Tape::linear(int x, int w, int b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    if (xv.dim(xv.rank() - 1) != wv.dim(0)) {
        throw DimensionMismatch("linear: input width does not match weight rows");
    }
    const int64_t rows = row_count(xv);
    const int64_t in = xv.dim(xv.rank() - 1);
    const int64_t out = wv.dim(1);

    std::vector<int64_t> out_shape = xv.shape();
    out_shape.back() = out;
    Tensor y = Tensor::uninitialized(std::move(out_shape));
    sgemm(false, false, rows, out, in, 1.0f, xv.data(), in, wv.data(), out, 0.0f, y.data(), out);
    if (b >= 0) {
        const Tensor& bv = value(b);
        float* yd = y.data();
        for (int64_t r = 0; r < rows; ++r) {
            const float* bd = bv.data();
            for (int64_t j = 0; j < out; ++j) {
                yd[r * out + j] += bd[j];
            }
        }
    }

    const bool needs = track(x) || track(w) || (b >= 0 && track(b));
    return push(std::move(y), needs, [x, w, b, rows, in, out](Tape& t, int self) {
        const float* dy = t.grad(self).data();
        if (t.track(x)) {
            sgemm(false, true, rows, in, out, 1.0f, dy, out, t.value(w).data(), out, 1.0f,
                  t.grad_buf(x).data(), in);
        }
        if (t.track(w)) {
            sgemm(true, false, in, out, rows, 1.0f, t.value(x).data(), in, dy, out, 1.0f,
                  t.grad_buf(w).data(), out);
        }
        if (b >= 0 && t.track(b)) {
            float* db = t.grad_buf(b).data();
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t j = 0; j < out; ++j) {
                    db[j] += dy[r * out + j];
                }
            }
        }
    });
}

int Tape::add(int a, int b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) {
        throw DimensionMismatch("add: shape mismatch");
    }
    Tensor y = Tensor::uninitialized(av.shape());
    for (int64_t i = 0; i < av.size(); ++i) {
        y[i] = av[i] + bv[i];
    }
    return push(std::move(y), track(a) || track(b), [a, b](Tape& t, int self) {
        const Tensor& dy = t.grad(self);
        for (int operand : {a, b}) {
            if (t.track(operand)) {
                float* d = t.grad_buf(operand).data();
                for (int64_t i = 0; i < dy.size(); ++i) {
                    d[i] += dy[i];
                }
            }
        }
    });
}

int Tape::add_broadcast(int x, int y) {
    const Tensor& xv = value(x);
    const Tensor& yv = value(y);
    if (xv.size() % yv.size() != 0) {
        throw DimensionMismatch("add_broadcast: suffix size does not divide input size");
    }
    const int64_t ys = yv.size();
    Tensor out = Tensor::uninitialized(xv.shape());
    for (int64_t i = 0; i < xv.size(); ++i) {
        out[i] = xv[i] + yv[i % ys];
    }
    return push(std::move(out), track(x) || track(y), [x, y, ys](Tape& t, int self) {
        const Tensor& dout = t.grad(self);
        if (t.track(x)) {
            float* dx = t.grad_buf(x).data();
            for (int64_t i = 0; i < dout.size(); ++i) {
                dx[i] += dout[i];
            }
        }
        if (t.track(y)) {
            float* dy = t.grad_buf(y).data();
            for (int64_t i = 0; i < dout.size(); ++i) {
                dy[i % ys] += dout[i];
            }
        }
    });
}

int Tape::add_batch_vec(int x, int y) {
    const Tensor& xv = value(x);
    const Tensor& yv = value(y);
    if (xv.rank() != 3 || yv.rank() != 2 || xv.dim(0) != yv.dim(0) || xv.dim(2) != yv.dim(1)) {
        throw DimensionMismatch("add_batch_vec: expected x [B,T,W], y [B,W]");
    }
    const int64_t batch = xv.dim(0);
    const int64_t steps = xv.dim(1);
    const int64_t width = xv.dim(2);
    Tensor out = Tensor::uninitialized(xv.shape());
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t s = 0; s < steps; ++s) {
            const float* xr = xv.data() + (b * steps + s) * width;
            const float* yr = yv.data() + b * width;
            float* o = out.data() + (b * steps + s) * width;
            for (int64_t w = 0; w < width; ++w) {
                o[w] = xr[w] + yr[w];
            }
        }
    }
    return push(std::move(out), track(x) || track(y), [x, y, batch, steps, width](Tape& t, int self) {
        const float* dout = t.grad(self).data();
        if (t.track(x)) {
            float* dx = t.grad_buf(x).data();
            for (int64_t i = 0; i < batch * steps * width; ++i) {
                dx[i] += dout[i];
            }
        }
        if (t.track(y)) {
            float* dy = t.grad_buf(y).data();
            for (int64_t b = 0; b < batch; ++b) {
                for (int64_t s = 0; s < steps; ++s) {
                    const float* d = dout + (b * steps + s) * width;
                    for (int64_t w = 0; w < width; ++w) {
                        dy[b * width + w] += d[w];
                    }
                }
            }
        }
    });
}

int Tape::scale(int x, float s) {
    const Tensor& xv = value(x);
    Tensor y = Tensor::uninitialized(xv.shape());
    for (int64_t i = 0; i < xv.size(); ++i) {
        y[i] = xv[i] * s;
    }
    return push(std::move(y), track(x), [x, s](Tape& t, int self) {
        const Tensor& dy = t.grad(self);
        if (t.track(x)) {
            float* dx = t.grad_buf(x).data();
            for (int64_t i = 0; i < dy.size(); ++i) {
                dx[i] += dy[i] * s;
            }
        }
    });
}

int Tape::gelu(int x) {
    const Tensor& xv = value(x);
    Tensor y = Tensor::uninitialized(xv.shape());
    constexpr float c = 0.7978845608028654f;  // sqrt(2/pi)
    constexpr float a = 0.044715f;
    for (int64_t i = 0; i < xv.size(); ++i) {
        const float v = xv[i];
        y[i] = 0.5f * v * (1.0f + std::tanh(c * (v + a * v * v * v)));
    }
    return push(std::move(y), track(x), [x](Tape& t, int self) {
        if (!t.track(x)) {
            return;
        }
        constexpr float c = 0.7978845608028654f;
        constexpr float a = 0.044715f;
        const Tensor& dy = t.grad(self);
        const Tensor& xv = t.value(x);
        float* dx = t.grad_buf(x).data();
        for (int64_t i = 0; i < dy.size(); ++i) {
            const float v = xv[i];
            const float u = c * (v + a * v * v * v);
            const float th = std::tanh(u);
            const float du = c * (1.0f + 3.0f * a * v * v);
            dx[i] += dy[i] * (0.5f * (1.0f + th) + 0.5f * v * (1.0f - th * th) * du);
        }
    });
}

int Tape::layer_norm(int x, int gain, int bias) {
    const Tensor& xv = value(x);
    const int64_t width = xv.dim(xv.rank() - 1);
    const int64_t rows = row_count(xv);
    Tensor y = Tensor::uninitialized(xv.shape());
    auto stats = std::make_shared<std::vector<float>>(static_cast<size_t>(rows) * 2);
    const float* g = value(gain).data();
    const float* b = value(bias).data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = xv.data() + r * width;
        double mean = 0.0;
        for (int64_t j = 0; j < width; ++j) {
            mean += xr[j];
        }
        mean /= static_cast<double>(width);
        double var = 0.0;
        for (int64_t j = 0; j < width; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(width);
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        (*stats)[static_cast<size_t>(r) * 2] = static_cast<float>(mean);
        (*stats)[static_cast<size_t>(r) * 2 + 1] = static_cast<float>(rstd);
        float* yr = y.data() + r * width;
        for (int64_t j = 0; j < width; ++j) {
            yr[j] = static_cast<float>((xr[j] - mean) * rstd) * g[j] + b[j];
        }
    }
    const bool needs = track(x) || track(gain) || track(bias);
    return push(std::move(y), needs, [x, gain, bias, rows, width, stats](Tape& t, int self) {
        const float* dy = t.grad(self).data();
        const float* xd = t.value(x).data();
        const float* g = t.value(gain).data();
        for (int64_t r = 0; r < rows; ++r) {
            const float mean = (*stats)[static_cast<size_t>(r) * 2];
            const float rstd = (*stats)[static_cast<size_t>(r) * 2 + 1];
            const float* xr = xd + r * width;
            const float* dyr = dy + r * width;
            if (t.track(gain)) {
                float* dg = t.grad_buf(gain).data();
                for (int64_t j = 0; j < width; ++j) {
                    dg[j] += dyr[j] * (xr[j] - mean) * rstd;
                }
            }
            if (t.track(bias)) {
                float* db = t.grad_buf(bias).data();
                for (int64_t j = 0; j < width; ++j) {
                    db[j] += dyr[j];
                }
            }
            if (t.track(x)) {
                double m1 = 0.0;
                double m2 = 0.0;
                for (int64_t j = 0; j < width; ++j) {
                    const double dxhat = static_cast<double>(dyr[j]) * g[j];
                    const double xhat = (xr[j] - mean) * rstd;
                    m1 += dxhat;
                    m2 += dxhat * xhat;
                }
                m1 /= static_cast<double>(width);
                m2 /= static_cast<double>(width);
                float* dx = t.grad_buf(x).data() + r * width;
                for (int64_t j = 0; j < width; ++j) {
                    const double dxhat = static_cast<double>(dyr[j]) * g[j];
                    const double xhat = (xr[j] - mean) * rstd;
                    dx[j] += static_cast<float>(rstd * (dxhat - m1 - xhat * m2));
                }
            }
        }
    });
}

int Tape::embedding(int table, std::vector<int32_t> ids) {
    const Tensor& tv = value(table);
    const int64_t vocab = tv.dim(0);
    const int64_t width = tv.dim(1);
    Tensor y = Tensor::uninitialized({static_cast<int64_t>(ids.size()), width});
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= vocab) {
            throw IndexOutOfRange("embedding id " + std::to_string(ids[i]) + " out of range");
        }
        std::memcpy(y.data() + static_cast<int64_t>(i) * width, tv.data() + ids[i] * width,
                    sizeof(float) * static_cast<size_t>(width));
    }
    auto ids_ptr = std::make_shared<std::vector<int32_t>>(std::move(ids));
    return push(std::move(y), track(table), [table, ids_ptr, width](Tape& t, int self) {
        if (!t.track(table)) {
            return;
        }
        const float* dy = t.grad(self).data();
        float* dt = t.grad_buf(table).data();
        for (size_t i = 0; i < ids_ptr->size(); ++i) {
            float* row = dt + static_cast<int64_t>((*ids_ptr)[i]) * width;
            const float* src = dy + static_cast<int64_t>(i) * width;
            for (int64_t j = 0; j < width; ++j) {
                row[j] += src[j];
            }
        }
    });
}

int Tape::select_rows(int x, std::vector<int32_t> indices) {
    const Tensor& xv = value(x);
    if (xv.rank() != 2) {
        throw DimensionMismatch("select_rows expects a rank-2 input");
    }
    const int64_t rows = xv.dim(0);
    const int64_t width = xv.dim(1);
    Tensor y = Tensor::uninitialized({static_cast<int64_t>(indices.size()), width});
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= rows) {
            throw IndexOutOfRange("select_rows index out of range");
        }
        std::memcpy(y.data() + static_cast<int64_t>(i) * width, xv.data() + indices[i] * width,
                    sizeof(float) * static_cast<size_t>(width));
    }
    auto idx = std::make_shared<std::vector<int32_t>>(std::move(indices));
    return push(std::move(y), track(x), [x, idx, width](Tape& t, int self) {
        if (!t.track(x)) {
            return;
        }
        const float* dy = t.grad(self).data();
        float* dx = t.grad_buf(x).data();
        for (size_t i = 0; i < idx->size(); ++i) {
            float* row = dx + static_cast<int64_t>((*idx)[i]) * width;
            const float* src = dy + static_cast<int64_t>(i) * width;
            for (int64_t j = 0; j < width; ++j) {
                row[j] += src[j];
            }
        }
    });
}

int Tape::attention(int q, int k, int v, int heads, bool causal, const std::vector<int>* kv_lens) {
    const Tensor& qv = value(q);
    const Tensor& kv = value(k);
    const Tensor& vv = value(v);
    if (qv.rank() != 3 || kv.rank() != 3 || vv.rank() != 3) {
        throw DimensionMismatch("attention expects rank-3 inputs [B, T, W]");
    }
    const int64_t batch = qv.dim(0);
    const int64_t tq = qv.dim(1);
    const int64_t tk = kv.dim(1);
    const int64_t width = qv.dim(2);
    if (width % heads != 0) {
        throw DimensionMismatch("attention width not divisible by head count");
    }
    const int64_t hd = width / heads;
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));

    auto probs = std::make_shared<Tensor>(
        Tensor::uninitialized({batch, static_cast<int64_t>(heads), tq, tk}));
    auto lens = kv_lens != nullptr ? std::make_shared<std::vector<int>>(*kv_lens) : nullptr;

    Tensor out = Tensor::uninitialized(qv.shape());
    for (int64_t b = 0; b < batch; ++b) {
        const int64_t valid_k = lens != nullptr ? (*lens)[static_cast<size_t>(b)] : tk;
        for (int h = 0; h < heads; ++h) {
            const float* qp = qv.data() + b * tq * width + h * hd;
            const float* kp = kv.data() + b * tk * width + h * hd;
            const float* vp = vv.data() + b * tk * width + h * hd;
            float* sp = probs->data() + ((b * heads + h) * tq) * tk;
            sgemm(false, true, tq, tk, hd, inv_sqrt, qp, width, kp, width, 0.0f, sp, tk);
            for (int64_t i = 0; i < tq; ++i) {
                float* row = sp + i * tk;
                const int64_t limit = causal ? std::min<int64_t>(i + 1, valid_k) : valid_k;
                for (int64_t j = limit; j < tk; ++j) {
                    row[j] += kMaskValue;
                }
                double row_max = -1e30;
                for (int64_t j = 0; j < tk; ++j) {
                    row_max = std::max(row_max, static_cast<double>(row[j]));
                }
                double denom = 0.0;
                for (int64_t j = 0; j < tk; ++j) {
                    const double e = std::exp(static_cast<double>(row[j]) - row_max);
                    row[j] = static_cast<float>(e);
                    denom += e;
                }
                const float inv = static_cast<float>(1.0 / denom);
                for (int64_t j = 0; j < tk; ++j) {
                    row[j] *= inv;
                }
            }
            sgemm(false, false, tq, hd, tk, 1.0f, sp, tk, vp, width, 0.0f,
                  out.data() + b * tq * width + h * hd, width);
        }
    }

    const bool needs = track(q) || track(k) || track(v);
    return push(std::move(out), needs,
                [q, k, v, heads, batch, tq, tk, width, hd, inv_sqrt, probs](Tape& t, int self) {
                    const float* dout = t.grad(self).data();
                    std::vector<float> dp(static_cast<size_t>(tq) * tk);
                    const bool need_q = t.track(q);
                    const bool need_k = t.track(k);
                    const bool need_v = t.track(v);
                    for (int64_t b = 0; b < batch; ++b) {
                        for (int h = 0; h < heads; ++h) {
                            const float* p = probs->data() + ((b * heads + h) * tq) * tk;
                            const float* dyo = dout + b * tq * width + h * hd;
                            const float* vp = t.value(v).data() + b * tk * width + h * hd;
                            if (need_v) {
                                sgemm(true, false, tk, hd, tq, 1.0f, p, tk, dyo, width, 1.0f,
                                      t.grad_buf(v).data() + b * tk * width + h * hd, width);
                            }
                            if (!need_q && !need_k) {
                                continue;
                            }
                            sgemm(false, true, tq, tk, hd, 1.0f, dyo, width, vp, width, 0.0f,
                                  dp.data(), tk);
                            for (int64_t i = 0; i < tq; ++i) {
                                const float* pr = p + i * tk;
                                float* dpr = dp.data() + i * tk;
                                double dot = 0.0;
                                for (int64_t j = 0; j < tk; ++j) {
                                    dot += static_cast<double>(dpr[j]) * pr[j];
                                }
                                for (int64_t j = 0; j < tk; ++j) {
                                    dpr[j] = pr[j] * (dpr[j] - static_cast<float>(dot));
                                }
                            }
                            const float* qp = t.value(q).data() + b * tq * width + h * hd;
                            const float* kp = t.value(k).data() + b * tk * width + h * hd;
                            if (need_q) {
                                sgemm(false, false, tq, hd, tk, inv_sqrt, dp.data(), tk, kp, width,
                                      1.0f, t.grad_buf(q).data() + b * tq * width + h * hd, width);
                            }
                            if (need_k) {
                                sgemm(true, false, tk, hd, tq, inv_sqrt, dp.data(), tk, qp, width,
                                      1.0f, t.grad_buf(k).data() + b * tk * width + h * hd, width);
                            }
                        }
                    }
                });
}

int Tape::softmax_cross_entropy(int logits, std::vector<int32_t> targets,
                                std::vector<float> weights) {
    const Tensor& zv = value(logits);
    const int64_t vocab = zv.dim(zv.rank() - 1);
    const int64_t rows = row_count(zv);
    if (static_cast<int64_t>(targets.size()) != rows ||
        static_cast<int64_t>(weights.size()) != rows) {
        throw DimensionMismatch("softmax_cross_entropy: targets/weights length mismatch");
    }
    double weight_sum = 0.0;
    for (float w : weights) {
        weight_sum += w;
    }
    auto lse = std::make_shared<std::vector<double>>(static_cast<size_t>(rows), 0.0);
    double loss = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        if (weights[static_cast<size_t>(r)] == 0.0f) {
            continue;
        }
        const float* zr = zv.data() + r * vocab;
        double zmax = -1e30;
        for (int64_t j = 0; j < vocab; ++j) {
            zmax = std::max(zmax, static_cast<double>(zr[j]));
        }
        double denom = 0.0;
        for (int64_t j = 0; j < vocab; ++j) {
            denom += std::exp(static_cast<double>(zr[j]) - zmax);
        }
        const double l = zmax + std::log(denom);
        (*lse)[static_cast<size_t>(r)] = l;
        loss += weights[static_cast<size_t>(r)] *
                (l - static_cast<double>(zr[targets[static_cast<size_t>(r)]]));
    }
    if (weight_sum > 0.0) {
        loss /= weight_sum;
    }
    auto tgt = std::make_shared<std::vector<int32_t>>(std::move(targets));
    auto wts = std::make_shared<std::vector<float>>(std::move(weights));
    return push(Tensor::scalar(static_cast<float>(loss)), track(logits),
                [logits, tgt, wts, lse, rows, vocab, weight_sum](Tape& t, int self) {
                    if (!t.track(logits) || weight_sum == 0.0) {
                        return;
                    }
                    const float gout = t.grad(self)[0];
                    const float* zd = t.value(logits).data();
                    float* dz = t.grad_buf(logits).data();
                    for (int64_t r = 0; r < rows; ++r) {
                        const float w = (*wts)[static_cast<size_t>(r)];
                        if (w == 0.0f) {
                            continue;
                        }
                        const double coeff = gout * w / weight_sum;
                        const float* zr = zd + r * vocab;
                        float* dzr = dz + r * vocab;
                        const double l = (*lse)[static_cast<size_t>(r)];
                        const int32_t target = (*tgt)[static_cast<size_t>(r)];
                        for (int64_t j = 0; j < vocab; ++j) {
                            const double p = std::exp(static_cast<double>(zr[j]) - l);
                            dzr[j] += static_cast<float>(coeff * (p - (j == target ? 1.0 : 0.0)));
                        }
                    }
                });
}

int Tape::mse(int pred, Tensor target) {
    const Tensor& pv = value(pred);
    if (!pv.same_shape(target)) {
        throw DimensionMismatch("mse: shape mismatch");
    }
    const int64_t n = pv.size();
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pv[i]) - target[i];
        loss += d * d;
    }
    loss /= static_cast<double>(n);
    auto tgt = std::make_shared<Tensor>(std::move(target));
    return push(Tensor::scalar(static_cast<float>(loss)), track(pred),
                [pred, tgt, n](Tape& t, int self) {
                    if (!t.track(pred)) {
                        return;
                    }
                    const float gout = t.grad(self)[0];
                    const float* p = t.value(pred).data();
                    float* dp = t.grad_buf(pred).data();
                    const float c = 2.0f * gout / static_cast<float>(n);
                    for (int64_t i = 0; i < n; ++i) {
                        dp[i] += c * (p[i] - (*tgt)[i]);
                    }
                });
}

int Tape::timestep_embed(int t_node, int dim) {
    if (dim % 2 != 0) {
        throw DimensionMismatch("timestep_embed dim must be even");
    }
    const Tensor& tv = value(t_node);
    const int64_t batch = tv.size();
    const int half = dim / 2;
    Tensor y = Tensor::uninitialized({batch, static_cast<int64_t>(dim)});
    for (int64_t b = 0; b < batch; ++b) {
        const double tval = tv[b];
        for (int i = 0; i < half; ++i) {
            const double w = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
            y.data()[b * dim + i] = static_cast<float>(std::sin(tval * w));
            y.data()[b * dim + half + i] = static_cast<float>(std::cos(tval * w));
        }
    }
    return push(std::move(y), track(t_node), [t_node, dim, half, batch](Tape& t, int self) {
        if (!t.track(t_node)) {
            return;
        }
        const float* dy = t.grad(self).data();
        const Tensor& tv = t.value(t_node);
        float* dt = t.grad_buf(t_node).data();
        for (int64_t b = 0; b < batch; ++b) {
            const double tval = tv[b];
            double acc = 0.0;
            for (int i = 0; i < half; ++i) {
                const double w = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
                acc += w * std::cos(tval * w) * dy[b * dim + i];
                acc -= w * std::sin(tval * w) * dy[b * dim + half + i];
            }
            dt[b] += static_cast<float>(acc);
        }
    });
}

int Tape::reshape(int x, std::vector<int64_t> new_shape) {
    const Tensor& xv = value(x);
    Tensor y = Tensor::uninitialized(new_shape);
    if (y.size() != xv.size()) {
        throw DimensionMismatch("reshape: element count changed");
    }
    std::memcpy(y.data(), xv.data(), sizeof(float) * static_cast<size_t>(xv.size()));
    return push(std::move(y), track(x), [x](Tape& t, int self) {
        if (!t.track(x)) {
            return;
        }
        const Tensor& dy = t.grad(self);
        float* dx = t.grad_buf(x).data();
        for (int64_t i = 0; i < dy.size(); ++i) {
            dx[i] += dy[i];
        }
    });
}

int Tape::slice_rows(int x, int64_t start, int64_t count) {
    const Tensor& xv = value(x);
    if (xv.rank() != 2) {
        throw DimensionMismatch("slice_rows expects a rank-2 input");
    }
    const int64_t width = xv.dim(1);
    if (start < 0 || start + count > xv.dim(0)) {
        throw IndexOutOfRange("slice_rows out of range");
    }
    Tensor y = Tensor::uninitialized({count, width});
    std::memcpy(y.data(), xv.data() + start * width,
                sizeof(float) * static_cast<size_t>(count * width));
    return push(std::move(y), track(x), [x, start, count, width](Tape& t, int self) {
        if (!t.track(x)) {
            return;
        }
        const float* dy = t.grad(self).data();
        float* dx = t.grad_buf(x).data() + start * width;
        for (int64_t i = 0; i < count * width; ++i) {
            dx[i] += dy[i];
        }
    });
}

int Tape::concat_rows(const std::vector<int>& xs) {
    if (xs.empty()) {
        throw DimensionMismatch("concat_rows: empty input list");
    }
    const int64_t width = value(xs[0]).dim(1);
    int64_t rows = 0;
    bool needs = false;
    for (int x : xs) {
        if (value(x).rank() != 2 || value(x).dim(1) != width) {
            throw DimensionMismatch("concat_rows: width mismatch");
        }
        rows += value(x).dim(0);
        needs = needs || track(x);
    }
    Tensor y = Tensor::uninitialized({rows, width});
    int64_t at = 0;
    for (int x : xs) {
        const Tensor& xv = value(x);
        std::memcpy(y.data() + at * width, xv.data(),
                    sizeof(float) * static_cast<size_t>(xv.size()));
        at += xv.dim(0);
    }
    auto parts = std::make_shared<std::vector<int>>(xs);
    return push(std::move(y), needs, [parts, width](Tape& t, int self) {
        const float* dy = t.grad(self).data();
        int64_t at = 0;
        for (int x : *parts) {
            const int64_t n = t.value(x).size();
            if (t.track(x)) {
                float* dx = t.grad_buf(x).data();
                for (int64_t i = 0; i < n; ++i) {
                    dx[i] += dy[at * width + i];
                }
            }
            at += t.value(x).dim(0);
        }
    });
}

int Tape::splice_rows(int x, int y, std::vector<int> offsets) {
    const Tensor& xv = value(x);
    const Tensor& yv = value(y);
    if (xv.rank() != 3 || yv.rank() != 3 || xv.dim(0) != yv.dim(0) || xv.dim(2) != yv.dim(2)) {
        throw DimensionMismatch("splice_rows expects x [B,R,W], y [B,Ry,W]");
    }
    const int64_t batch = xv.dim(0);
    const int64_t rows = xv.dim(1);
    const int64_t yrows = yv.dim(1);
    const int64_t width = xv.dim(2);
    Tensor out = xv;
    for (int64_t b = 0; b < batch; ++b) {
        const int64_t off = offsets[static_cast<size_t>(b)];
        if (off < 0 || off + yrows > rows) {
            throw IndexOutOfRange("splice_rows offset out of range");
        }
        std::memcpy(out.data() + (b * rows + off) * width, yv.data() + b * yrows * width,
                    sizeof(float) * static_cast<size_t>(yrows * width));
    }
    auto offs = std::make_shared<std::vector<int>>(std::move(offsets));
    return push(std::move(out), track(x) || track(y),
                [x, y, offs, batch, rows, yrows, width](Tape& t, int self) {
                    const float* dout = t.grad(self).data();
                    for (int64_t b = 0; b < batch; ++b) {
                        const int64_t off = (*offs)[static_cast<size_t>(b)];
                        if (t.track(y)) {
                            float* dy = t.grad_buf(y).data() + b * yrows * width;
                            const float* src = dout + (b * rows + off) * width;
                            for (int64_t i = 0; i < yrows * width; ++i) {
                                dy[i] += src[i];
                            }
                        }
                        if (t.track(x)) {
                            float* dx = t.grad_buf(x).data() + b * rows * width;
                            const float* src = dout + b * rows * width;
                            for (int64_t r = 0; r < rows; ++r) {
                                if (r >= off && r < off + yrows) {
                                    continue;  // replaced rows do not flow back to x
                                }
                                for (int64_t w = 0; w < width; ++w) {
                                    dx[r * width + w] += src[r * width + w];
                                }
                            }
                        }
                    }
                });
}

void Tape::backward(int loss) {
    if (!grad_enabled_) {
        throw Error("backward called on a no-grad tape");
    }
    if (value(loss).size() != 1) {
        throw DimensionMismatch("backward expects a scalar loss");
    }
    grad_buf(loss)[0] = 1.0f;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        Node& node = nodes_[static_cast<size_t>(i)];
        if (node.requires_grad && node.backward_fn && node.grad.size() != 0) {
            node.backward_fn(*this, i);
        }
    }
    for (const Binding& binding : bindings_) {
        const Tensor& g = nodes_[static_cast<size_t>(binding.node)].grad;
        if (g.size() == 0) {
            continue;  // parameter not on the path to the loss
        }
        Tensor& dst = binding.store->grad(binding.name);
        for (int64_t i = 0; i < g.size(); ++i) {
            dst[i] += g[i];
        }
        binding.store->mark_gradients_ready();
    }
}

}  // namespace ded::nn
