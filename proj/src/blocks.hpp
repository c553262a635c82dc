#pragma once

// Internal transformer building blocks shared by the drafter and the diffuser
// model graphs. Pre-norm residual layout throughout.

#include <string>

#include "ded/autodiff.hpp"
#include "ded/nn.hpp"
#include "ded/rng.hpp"

namespace ded::nn {

// Resolves parameter names to tape nodes, binding gradients only when a
// mutable store is supplied (training).
struct ParamSource {
    Tape& tape;
    ParameterStore* mutable_store = nullptr;
    const ParameterStore* const_store = nullptr;

    int operator()(const std::string& name) const {
        return mutable_store != nullptr ? tape.param(*mutable_store, name)
                                        : tape.read_param(*const_store, name);
    }
};

inline ParamSource params_of(Tape& tape, ParameterStore& store) {
    return ParamSource{tape, &store, nullptr};
}
inline ParamSource params_of(Tape& tape, const ParameterStore& store) {
    return ParamSource{tape, nullptr, &store};
}

inline void create_linear(ParameterStore& p, const std::string& name, int in, int out, float std,
                          Rng& rng) {
    p.create(name + ".w", randn({in, out}, std, rng));
    p.create(name + ".b", Tensor::zeros({out}));
}

inline int apply_linear(const ParamSource& P, const std::string& name, int x) {
    return P.tape.linear(x, P(name + ".w"), P(name + ".b"));
}

inline void create_layer_norm(ParameterStore& p, const std::string& name, int width) {
    p.create(name + ".g", Tensor::full({width}, 1.0f));
    p.create(name + ".b", Tensor::zeros({width}));
}

inline int apply_layer_norm(const ParamSource& P, const std::string& name, int x) {
    return P.tape.layer_norm(x, P(name + ".g"), P(name + ".b"));
}

inline void create_attention(ParameterStore& p, const std::string& prefix, int width, float std,
                             Rng& rng) {
    create_linear(p, prefix + ".wq", width, width, std, rng);
    create_linear(p, prefix + ".wk", width, width, std, rng);
    create_linear(p, prefix + ".wv", width, width, std, rng);
    create_linear(p, prefix + ".wo", width, width, std, rng);
}

// x + attn(ln(x)); self attention over x's positions
inline int self_attention_block(const ParamSource& P, const std::string& prefix, int x, int heads,
                                bool causal) {
    Tape& t = P.tape;
    const int normed = apply_layer_norm(P, prefix + ".ln1", x);
    const int q = apply_linear(P, prefix + ".attn.wq", normed);
    const int k = apply_linear(P, prefix + ".attn.wk", normed);
    const int v = apply_linear(P, prefix + ".attn.wv", normed);
    const int att = t.attention(q, k, v, heads, causal);
    return t.add(x, apply_linear(P, prefix + ".attn.wo", att));
}

// x + xattn(ln(x), cond); keys/values from the conditioning sequence
inline int cross_attention_block(const ParamSource& P, const std::string& prefix, int x, int cond,
                                 const std::vector<int>& cond_lens, int heads) {
    Tape& t = P.tape;
    const int normed = apply_layer_norm(P, prefix + ".lnx", x);
    const int q = apply_linear(P, prefix + ".xattn.wq", normed);
    const int k = apply_linear(P, prefix + ".xattn.wk", cond);
    const int v = apply_linear(P, prefix + ".xattn.wv", cond);
    const int att = t.attention(q, k, v, heads, false, &cond_lens);
    return t.add(x, apply_linear(P, prefix + ".xattn.wo", att));
}

// x + w2(gelu(w1(ln(x))))
inline int ffn_block(const ParamSource& P, const std::string& prefix, int x) {
    Tape& t = P.tape;
    const int normed = apply_layer_norm(P, prefix + ".ln2", x);
    return t.add(x, apply_linear(P, prefix + ".ffn.w2",
                                 t.gelu(apply_linear(P, prefix + ".ffn.w1", normed))));
}

inline void create_self_attention_block(ParameterStore& p, const std::string& prefix, int width,
                                        int ffn_mult, float std, Rng& rng) {
    create_layer_norm(p, prefix + ".ln1", width);
    create_attention(p, prefix + ".attn", width, std, rng);
    create_layer_norm(p, prefix + ".ln2", width);
    create_linear(p, prefix + ".ffn.w1", width, width * ffn_mult, std, rng);
    create_linear(p, prefix + ".ffn.w2", width * ffn_mult, width, std, rng);
}

inline void create_cross_attention_block(ParameterStore& p, const std::string& prefix, int width,
                                         float std, Rng& rng) {
    create_layer_norm(p, prefix + ".lnx", width);
    create_attention(p, prefix + ".xattn", width, std, rng);
}

}  // namespace ded::nn
