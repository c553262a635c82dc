#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "ded/autodiff.hpp"
#include "ded/error.hpp"
#include "ded/nn.hpp"
#include "ded/rng.hpp"
#include "ded/tensor.hpp"

using namespace ded;
using namespace ded::nn;

TEST_CASE("lr schedule matches the pinned points exactly") {
    LrSchedule s;
    s.total_steps = 60000;
    CHECK(lr_at(s, 0) == 0.0);
    CHECK(lr_at(s, 1000) == 5e-5);
    CHECK(lr_at(s, 60000) == 1e-5);
    CHECK(lr_at(s, 500) == doctest::Approx(2.5e-5).epsilon(1e-12));
    // cosine midpoint
    CHECK(lr_at(s, (1000 + 60000) / 2) == doctest::Approx((5e-5 + 1e-5) / 2).epsilon(1e-9));
    CHECK_THROWS_AS(lr_at(s, -1), StepOutOfRange);
    CHECK_THROWS_AS(lr_at(s, 60001), StepOutOfRange);
}

TEST_CASE("adamw single-step hand oracle") {
    ParameterStore store;
    store.create("w", Tensor::scalar(1.0f));

    // no backward yet -> MissingGradient
    CHECK_THROWS_AS(adamw_step(store, 0.1), MissingGradient);

    store.grad("w")[0] = 1.0f;
    store.mark_gradients_ready();
    adamw_step(store, 0.1, 0.9, 0.999, 1e-8, 0.0);
    // m_hat = 1, v_hat = 1: w = 1 - 0.1 * 1/(1 + 1e-8)
    CHECK(std::fabs(store.value("w")[0] - (1.0 - 0.1 / (1.0 + 1e-8))) < 1e-6);

    // zero gradient, zero decay: unchanged except adaptive term of zero grad
    ParameterStore frozen;
    frozen.create("w", Tensor::scalar(2.5f));
    frozen.grad("w")[0] = 0.0f;
    frozen.mark_gradients_ready();
    adamw_step(frozen, 0.1, 0.9, 0.999, 1e-8, 0.0);
    CHECK(frozen.value("w")[0] == 2.5f);

    // decay-only path scales by (1 - lr*decay)
    ParameterStore decayed;
    decayed.create("w", Tensor::scalar(2.0f));
    decayed.grad("w")[0] = 0.0f;
    decayed.mark_gradients_ready();
    adamw_step(decayed, 0.1, 0.9, 0.999, 1e-8, 0.01);
    CHECK(decayed.value("w")[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-7));
}

TEST_CASE("adamw is deterministic across stores with identical state") {
    auto run = [] {
        Rng rng(5);
        ParameterStore store;
        store.create("w", randn({4, 4}, 0.5f, rng));
        for (int step = 0; step < 5; ++step) {
            Rng grng(100 + step);
            Tensor& g = store.grad("w");
            for (int64_t i = 0; i < g.size(); ++i) {
                g[i] += grng.next_gaussian();
            }
            store.mark_gradients_ready();
            adamw_step(store, 1e-2);
            store.zero_grads();
        }
        return store.value("w");
    };
    const Tensor a = run();
    const Tensor b = run();
    for (int64_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] == b[i]);
    }
}

TEST_CASE("cross entropy of a uniform prediction is ln K") {
    Tape tape;
    const int k = 37;
    const int id = tape.input(Tensor::zeros({5, k}));
    const int loss = tape.softmax_cross_entropy(id, {0, 1, 2, 3, 4}, {1, 1, 1, 1, 1});
    CHECK(tape.value(loss)[0] == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-5));
}

TEST_CASE("attention rows are a proper softmax (V = ones probe)") {
    Rng rng(17);
    Tape tape(false);
    const int q = tape.input(randn({2, 6, 8}, 1.0f, rng));
    const int kk = tape.input(randn({2, 6, 8}, 1.0f, rng));
    const int v = tape.input(Tensor::full({2, 6, 8}, 1.0f));
    for (bool causal : {false, true}) {
        const int out = tape.attention(q, kk, v, 2, causal);
        const Tensor& o = tape.value(out);
        for (int64_t i = 0; i < o.size(); ++i) {
            CHECK(o[i] == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
}

TEST_CASE("causal masking blocks future positions") {
    Rng rng(3);
    // with causal attention, output at position 0 ignores later k/v rows
    Tensor k1 = randn({1, 4, 8}, 1.0f, rng);
    Tensor v1 = randn({1, 4, 8}, 1.0f, rng);
    Tensor q1 = randn({1, 4, 8}, 1.0f, rng);
    Tensor k2 = k1;
    Tensor v2 = v1;
    for (int64_t i = 8; i < 32; ++i) {
        k2[i] += 5.0f;  // perturb rows 1..3
        v2[i] -= 3.0f;
    }
    Tape tape(false);
    const int a = tape.attention(tape.input(q1), tape.input(k1), tape.input(v1), 2, true);
    const int b = tape.attention(tape.input(q1), tape.input(k2), tape.input(v2), 2, true);
    for (int64_t w = 0; w < 8; ++w) {
        CHECK(tape.value(a)[w] == tape.value(b)[w]);  // position 0 identical
    }
    // kv length mask does the same for cross attention
    const int c = tape.attention(tape.input(q1), tape.input(k1), tape.input(v1), 2, false);
    std::vector<int> lens{4};
    const int d = tape.attention(tape.input(q1), tape.input(k1), tape.input(v1), 2, false, &lens);
    for (int64_t i = 0; i < 32; ++i) {
        CHECK(tape.value(c)[i] == tape.value(d)[i]);
    }
}

namespace {

// gradient check driver: builds a loss from a parameter set through `graph`
double layer_check(const std::function<int(Tape&, ParameterStore&)>& graph, ParameterStore& store,
                   double eps) {
    return check_gradients(
        [&](ParameterStore& s, bool grads) {
            Tape tape(grads);
            const int loss = graph(tape, s);
            const double value = tape.value(loss)[0];
            if (grads) {
                tape.backward(loss);
            }
            return value;
        },
        store, eps);
}

}  // namespace

TEST_CASE("gradient check: linear layer") {
    Rng rng(21);
    ParameterStore store;
    store.create("w", randn({6, 5}, 0.6f, rng));
    store.create("b", randn({5}, 0.3f, rng));
    const Tensor x = randn({7, 6}, 1.0f, rng);
    const Tensor target = randn({7, 5}, 1.0f, rng);
    const double err = layer_check(
        [&](Tape& t, ParameterStore& s) {
            const int y = t.linear(t.input(x), t.param(s, "w"), t.param(s, "b"));
            return t.mse(y, target);
        },
        store, 2e-2);
    CHECK(err < 1e-3);
}

TEST_CASE("gradient check: embedding + layer norm + gelu") {
    Rng rng(22);
    ParameterStore store;
    store.create("table", randn({9, 6}, 0.8f, rng));
    store.create("g", Tensor::full({6}, 1.0f));
    store.create("b", randn({6}, 0.2f, rng));
    const Tensor target = randn({4, 6}, 1.0f, rng);
    const double err = layer_check(
        [&](Tape& t, ParameterStore& s) {
            const int e = t.embedding(t.param(s, "table"), {3, 1, 4, 1});
            const int n = t.layer_norm(e, t.param(s, "g"), t.param(s, "b"));
            return t.mse(t.gelu(n), target);
        },
        store, 2e-2);
    CHECK(err < 1e-3);
}

TEST_CASE("gradient check: attention (causal, masked)") {
    Rng rng(23);
    ParameterStore store;
    store.create("wq", randn({8, 8}, 0.6f, rng));
    store.create("wk", randn({8, 8}, 0.6f, rng));
    store.create("wv", randn({8, 8}, 0.6f, rng));
    const Tensor x = randn({2, 5, 8}, 1.0f, rng);
    const Tensor ctx = randn({2, 6, 8}, 1.0f, rng);
    const Tensor target = randn({2, 5, 8}, 1.0f, rng);
    std::vector<int> lens{4, 6};

    for (int mode = 0; mode < 2; ++mode) {
        const double err = layer_check(
            [&](Tape& t, ParameterStore& s) {
                const int xi = t.input(x);
                const int q = t.linear(xi, t.param(s, "wq"), -1);
                int out;
                if (mode == 0) {
                    const int k = t.linear(xi, t.param(s, "wk"), -1);
                    const int v = t.linear(xi, t.param(s, "wv"), -1);
                    out = t.attention(q, k, v, 2, true);
                } else {
                    const int ci = t.input(ctx);
                    const int k = t.linear(ci, t.param(s, "wk"), -1);
                    const int v = t.linear(ci, t.param(s, "wv"), -1);
                    out = t.attention(q, k, v, 2, false, &lens);
                }
                return t.mse(out, target);
            },
            store, 2e-2);
        CHECK(err < 1e-3);
    }
}

TEST_CASE("gradient check: softmax cross entropy") {
    Rng rng(24);
    ParameterStore store;
    store.create("w", randn({6, 11}, 0.8f, rng));
    const Tensor x = randn({5, 6}, 1.0f, rng);
    const double err = layer_check(
        [&](Tape& t, ParameterStore& s) {
            const int logits = t.linear(t.input(x), t.param(s, "w"), -1);
            return t.softmax_cross_entropy(logits, {1, 7, 2, 9, 0}, {1.0f, 0.0f, 1.0f, 1.0f, 0.5f});
        },
        store, 2e-2);
    CHECK(err < 1e-3);
}

TEST_CASE("gradient check: sinusoidal timestep embedding") {
    Rng rng(25);
    ParameterStore store;
    store.create("t", Tensor::from({3}, (const float[]){3.0f, 17.0f, 55.0f}));
    store.create("w", randn({8, 4}, 0.6f, rng));
    const Tensor target = randn({3, 4}, 1.0f, rng);
    const double err = layer_check(
        [&](Tape& t, ParameterStore& s) {
            const int emb = t.timestep_embed(t.param(s, "t"), 8);
            return t.mse(t.linear(emb, t.param(s, "w"), -1), target);
        },
        store, 2e-2);
    CHECK(err < 1e-3);
}

TEST_CASE("gradient check: two-layer perceptron and shape ops") {
    Rng rng(26);
    ParameterStore store;
    store.create("w1", randn({6, 8}, 0.7f, rng));
    store.create("b1", randn({8}, 0.2f, rng));
    store.create("w2", randn({8, 3}, 0.7f, rng));
    store.create("pos", randn({4, 6}, 0.4f, rng));
    const Tensor x = randn({2, 4, 6}, 1.0f, rng);
    const Tensor target = randn({8, 3}, 1.0f, rng);
    const double err = layer_check(
        [&](Tape& t, ParameterStore& s) {
            int h = t.add_broadcast(t.input(x), t.param(s, "pos"));
            h = t.linear(h, t.param(s, "w1"), t.param(s, "b1"));
            h = t.gelu(h);
            h = t.linear(h, t.param(s, "w2"), -1);
            h = t.reshape(h, {8, 3});
            return t.mse(h, target);
        },
        store, 2e-2);
    CHECK(err < 1e-3);

    // constant function: both gradients zero
    ParameterStore konst;
    konst.create("w", randn({3, 3}, 0.5f, rng));
    const double cerr = layer_check(
        [&](Tape& t, ParameterStore&) {
            (void)t;
            Tape local(false);
            return t.input(Tensor::scalar(4.0f));
        },
        konst, 2e-2);
    CHECK(cerr == 0.0);
}

TEST_CASE("gradient check: splice, concat, slice, batch vec") {
    Rng rng(27);
    ParameterStore store;
    store.create("y", randn({2, 2, 4}, 0.8f, rng));
    store.create("tvec", randn({2, 4}, 0.8f, rng));
    store.create("a", randn({3, 4}, 0.8f, rng));
    store.create("b", randn({2, 4}, 0.8f, rng));
    const Tensor x = randn({2, 5, 4}, 1.0f, rng);
    const Tensor target = randn({2, 5, 4}, 1.0f, rng);
    const Tensor target2 = randn({2, 4}, 1.0f, rng);
    const double err = layer_check(
        [&](Tape& t, ParameterStore& s) {
            const int spliced = t.splice_rows(t.input(x), t.param(s, "y"), {1, 3});
            const int shifted = t.add_batch_vec(spliced, t.param(s, "tvec"));
            return t.mse(shifted, target);
        },
        store, 2e-2);
    CHECK(err < 1e-3);

    ParameterStore store2;
    store2.create("a", randn({3, 4}, 0.8f, rng));
    store2.create("b", randn({2, 4}, 0.8f, rng));
    const double err2 = layer_check(
        [&](Tape& t, ParameterStore& s) {
            const int cat = t.concat_rows({t.param(s, "a"), t.param(s, "b")});
            const int sl = t.slice_rows(cat, 1, 2);
            return t.mse(t.scale(sl, 1.7f), target2);
        },
        store2, 2e-2);
    CHECK(err2 < 1e-3);
}

TEST_CASE("check_gradients raises NonFiniteLoss") {
    ParameterStore store;
    store.create("w", Tensor::scalar(1.0f));
    CHECK_THROWS_AS(check_gradients(
                        [](ParameterStore&, bool) {
                            return std::numeric_limits<double>::quiet_NaN();
                        },
                        store, 1e-3),
                    NonFiniteLoss);
}

TEST_CASE("checkpoint round-trip is bit exact") {
    Rng rng(28);
    ParameterStore store;
    store.create("alpha", randn({3, 4}, 1.0f, rng));
    store.create("beta.gamma", randn({2, 2, 2}, 1.0f, rng));
    store.create("z", Tensor::scalar(0.25f));
    const std::string path = "test_ckpt_tmp.dedw";
    save_checkpoint(store, path);

    ParameterStore back;
    load_checkpoint(back, path);
    for (const std::string& name : store.names()) {
        const Tensor& a = store.value(name);
        const Tensor& b = back.value(name);
        REQUIRE(a.shape() == b.shape());
        for (int64_t i = 0; i < a.size(); ++i) {
            CHECK(a[i] == b[i]);
        }
    }
    // writing the loaded store reproduces identical bytes
    const std::string path2 = "test_ckpt_tmp2.dedw";
    save_checkpoint(back, path2);
    auto slurp = [](const std::string& p) {
        FILE* f = fopen(p.c_str(), "rb");
        REQUIRE(f != nullptr);
        std::string s;
        char buf[4096];
        size_t n;
        while ((n = fread(buf, 1, sizeof(buf), f)) > 0) {
            s.append(buf, n);
        }
        fclose(f);
        return s;
    };
    CHECK(slurp(path) == slurp(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("gradients accumulate across backward calls") {
    Rng rng(29);
    ParameterStore store;
    store.create("w", randn({3, 3}, 0.5f, rng));
    const Tensor x = randn({2, 3}, 1.0f, rng);
    const Tensor target = randn({2, 3}, 1.0f, rng);
    auto run_once = [&](ParameterStore& s) {
        Tape tape;
        const int loss = tape.mse(tape.linear(tape.input(x), tape.param(s, "w"), -1), target);
        tape.backward(loss);
    };
    store.zero_grads();
    run_once(store);
    const Tensor once = store.grad("w");
    run_once(store);
    for (int64_t i = 0; i < once.size(); ++i) {
        CHECK(store.grad("w")[i] == doctest::Approx(2.0f * once[i]).epsilon(1e-6));
    }
}
