#include "ded/drafter.hpp"

#include <algorithm>
#include <cmath>

#include "blocks.hpp"
#include "ded/autodiff.hpp"
#include "ded/error.hpp"
#include "ded/rng.hpp"

namespace ded {

using nn::ParamSource;
using nn::Tape;
using nn::Tensor;

namespace {

constexpr float kInitStd = 0.02f;

void create_decoder_params(nn::ParameterStore& p, const DrafterConfig& cfg, Rng& rng) {
    p.create("tok_emb", nn::randn({cfg.vocab_size, cfg.width}, kInitStd, rng));
    p.create("pos_emb", nn::randn({cfg.context, cfg.width}, kInitStd, rng));
    for (int i = 0; i < cfg.blocks; ++i) {
        nn::create_self_attention_block(p, "blk" + std::to_string(i), cfg.width, cfg.ffn_mult,
                                        kInitStd, rng);
    }
    nn::create_layer_norm(p, "ln_f", cfg.width);
}

// hidden states [B, T, W] for PAD-padded id rows
int decoder_hidden(const ParamSource& P, const DrafterConfig& cfg,
                   const std::vector<int32_t>& flat_ids, int batch, int t) {
    Tape& tape = P.tape;
    int h = tape.embedding(P("tok_emb"), flat_ids);
    h = tape.reshape(h, {batch, t, cfg.width});
    h = tape.add_broadcast(h, tape.slice_rows(P("pos_emb"), 0, t));
    for (int i = 0; i < cfg.blocks; ++i) {
        const std::string prefix = "blk" + std::to_string(i);
        h = nn::self_attention_block(P, prefix, h, cfg.heads, /*causal=*/true);
        h = nn::ffn_block(P, prefix, h);
    }
    return nn::apply_layer_norm(P, "ln_f", h);
}

std::vector<int32_t> drafter_sequence(const Vocabulary& vocab,
                                      const std::vector<int32_t>& prompt_ids,
                                      const DraftTokens* draft) {
    std::vector<int32_t> seq;
    seq.reserve(prompt_ids.size() + kDraftLen + 3);
    seq.push_back(Vocabulary::kBos);
    seq.insert(seq.end(), prompt_ids.begin(), prompt_ids.end());
    seq.push_back(Vocabulary::kDraftOpen);
    if (draft != nullptr) {
        for (int32_t q : draft->indices) {
            seq.push_back(vocab.draft_base() + q);
        }
        seq.push_back(Vocabulary::kDraftClose);
    }
    return seq;
}

}  // namespace

DrafterModel DrafterModel::init(const DrafterConfig& config, uint64_t seed) {
    DrafterModel model;
    model.config = config;
    Rng rng(seed);
    create_decoder_params(model.params, config, rng);
    nn::create_linear(model.params, "head", config.width, config.vocab_size, kInitStd, rng);
    return model;
}

double drafter_train_step(DrafterModel& model, const Vocabulary& vocab,
                          std::span<const DraftExample> batch) {
    const DrafterConfig& cfg = model.config;
    const int b = static_cast<int>(batch.size());
    int t = 0;
    std::vector<std::vector<int32_t>> seqs;
    seqs.reserve(batch.size());
    for (const DraftExample& ex : batch) {
        seqs.push_back(drafter_sequence(vocab, ex.prompt_ids, &ex.draft));
        if (static_cast<int>(seqs.back().size()) > cfg.context) {
            throw ContextOverflow("drafter sequence of " + std::to_string(seqs.back().size()) +
                                  " tokens exceeds context " + std::to_string(cfg.context));
        }
        t = std::max(t, static_cast<int>(seqs.back().size()));
    }

    std::vector<int32_t> flat_ids(static_cast<size_t>(b) * t, Vocabulary::kPad);
    std::vector<int32_t> targets(static_cast<size_t>(b) * t, 0);
    std::vector<float> weights(static_cast<size_t>(b) * t, 0.0f);
    for (int i = 0; i < b; ++i) {
        const auto& seq = seqs[static_cast<size_t>(i)];
        const size_t len = seq.size();
        const size_t prompt_len = batch[static_cast<size_t>(i)].prompt_ids.size();
        for (size_t p = 0; p < len; ++p) {
            flat_ids[static_cast<size_t>(i) * t + p] = seq[p];
        }
        // position p predicts seq[p+1]; the loss covers targets strictly after
        // <DRAFT> (draft body and </DRAFT>), i.e. p+1 >= prompt_len + 2
        for (size_t p = 0; p + 1 < len; ++p) {
            targets[static_cast<size_t>(i) * t + p] = seq[p + 1];
            if (p + 1 >= prompt_len + 2) {
                weights[static_cast<size_t>(i) * t + p] = 1.0f;
            }
        }
    }

    Tape tape;
    const ParamSource P = nn::params_of(tape, model.params);
    const int hidden = decoder_hidden(P, cfg, flat_ids, b, t);
    const int logits = nn::apply_linear(P, "head", hidden);
    const int loss = tape.softmax_cross_entropy(logits, std::move(targets), std::move(weights));
    const double loss_value = tape.value(loss)[0];
    tape.backward(loss);
    return loss_value;
}

DraftTokens sample_draft(const DrafterModel& model, const Vocabulary& vocab,
                         const std::vector<int32_t>& prompt_ids, float temperature, int top_k,
                         uint64_t seed) {
    const DrafterConfig& cfg = model.config;
    Rng rng(seed);
    std::vector<int32_t> seq = drafter_sequence(vocab, prompt_ids, nullptr);
    if (static_cast<int>(seq.size()) + kDraftLen + 1 > cfg.context) {
        throw ContextOverflow("prompt too long for drafter context");
    }
    const int base = vocab.draft_base();
    const int k_tokens = vocab.draft_count();

    DraftTokens out;
    std::vector<double> probs(static_cast<size_t>(k_tokens));
    for (int step = 0; step < kDraftLen; ++step) {
        Tape tape(/*grad_enabled=*/false);
        const ParamSource P = nn::params_of(tape, model.params);
        const int t = static_cast<int>(seq.size());
        const int hidden = decoder_hidden(P, cfg, seq, 1, t);
        const int logits = nn::apply_linear(P, "head", hidden);
        const float* row = tape.value(logits).data() + static_cast<int64_t>(t - 1) * cfg.vocab_size;

        // constrained decoding: only draft-block ids are reachable
        int32_t picked = 0;
        if (temperature <= 0.0f) {
            for (int q = 1; q < k_tokens; ++q) {
                if (row[base + q] > row[base + picked]) {
                    picked = q;
                }
            }
        } else {
            double zmax = -1e30;
            for (int q = 0; q < k_tokens; ++q) {
                zmax = std::max(zmax, static_cast<double>(row[base + q]));
            }
            for (int q = 0; q < k_tokens; ++q) {
                probs[static_cast<size_t>(q)] =
                    std::exp((static_cast<double>(row[base + q]) - zmax) / temperature);
            }
            if (top_k > 0 && top_k < k_tokens) {
                std::vector<int> order(static_cast<size_t>(k_tokens));
                for (int q = 0; q < k_tokens; ++q) {
                    order[static_cast<size_t>(q)] = q;
                }
                std::sort(order.begin(), order.end(), [&](int a, int c) {
                    if (probs[static_cast<size_t>(a)] != probs[static_cast<size_t>(c)]) {
                        return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(c)];
                    }
                    return a < c;
                });
                for (int rank = top_k; rank < k_tokens; ++rank) {
                    probs[static_cast<size_t>(order[static_cast<size_t>(rank)])] = 0.0;
                }
            }
            double total = 0.0;
            for (double p : probs) {
                total += p;
            }
            const double u = rng.next_double() * total;
            double cum = 0.0;
            picked = static_cast<int32_t>(k_tokens - 1);
            for (int q = 0; q < k_tokens; ++q) {
                cum += probs[static_cast<size_t>(q)];
                if (u < cum) {
                    picked = q;
                    break;
                }
            }
        }
        out.indices[static_cast<size_t>(step)] = picked;
        seq.push_back(base + picked);
    }
    return out;  // </DRAFT> forced; the wrapper is valid by construction
}

// --- continuous regression drafter ---

ContinuousDrafter ContinuousDrafter::init(const DrafterConfig& config, uint64_t seed) {
    ContinuousDrafter model;
    model.config = config;
    Rng rng(seed);
    create_decoder_params(model.params, config, rng);
    nn::create_linear(model.params, "grid_head", config.width, kNumCells * kRgbFeatureDim,
                      kInitStd, rng);
    return model;
}

namespace {

// last non-pad hidden row per example -> [B, cells*3] prediction
int continuous_prediction(const ParamSource& P, const DrafterConfig& cfg,
                          const std::vector<int32_t>& flat_ids, int batch, int t,
                          std::vector<int32_t> last_index) {
    Tape& tape = P.tape;
    const int hidden = decoder_hidden(P, cfg, flat_ids, batch, t);
    const int flat = tape.reshape(hidden, {static_cast<int64_t>(batch) * t, cfg.width});
    const int last = tape.select_rows(flat, std::move(last_index));
    return nn::apply_linear(P, "grid_head", last);
}

}  // namespace

double continuous_drafter_train_step(ContinuousDrafter& model, const Vocabulary& vocab,
                                     std::span<const ContinuousDraftExample> batch) {
    const DrafterConfig& cfg = model.config;
    const int b = static_cast<int>(batch.size());
    int t = 0;
    std::vector<std::vector<int32_t>> seqs;
    for (const auto& ex : batch) {
        seqs.push_back(drafter_sequence(vocab, ex.prompt_ids, nullptr));
        t = std::max(t, static_cast<int>(seqs.back().size()));
    }
    if (t > cfg.context) {
        throw ContextOverflow("prompt too long for drafter context");
    }

    std::vector<int32_t> flat_ids(static_cast<size_t>(b) * t, Vocabulary::kPad);
    std::vector<int32_t> last_index(static_cast<size_t>(b));
    Tensor targets = Tensor::uninitialized({b, kNumCells * kRgbFeatureDim});
    for (int i = 0; i < b; ++i) {
        const auto& seq = seqs[static_cast<size_t>(i)];
        for (size_t p = 0; p < seq.size(); ++p) {
            flat_ids[static_cast<size_t>(i) * t + p] = seq[p];
        }
        last_index[static_cast<size_t>(i)] =
            static_cast<int32_t>(i * t + static_cast<int>(seq.size()) - 1);
        const FeatureGrid& g = batch[static_cast<size_t>(i)].target;
        std::copy(g.values.begin(), g.values.end(),
                  targets.data() + static_cast<int64_t>(i) * kNumCells * kRgbFeatureDim);
    }

    Tape tape;
    const ParamSource P = nn::params_of(tape, model.params);
    const int pred = continuous_prediction(P, cfg, flat_ids, b, t, std::move(last_index));
    const int loss = tape.mse(pred, std::move(targets));
    const double loss_value = tape.value(loss)[0];
    tape.backward(loss);
    return loss_value;
}

FeatureGrid predict_continuous_draft(const ContinuousDrafter& model, const Vocabulary& vocab,
                                     const std::vector<int32_t>& prompt_ids) {
    Tape tape(/*grad_enabled=*/false);
    const ParamSource P = nn::params_of(tape, model.params);
    const std::vector<int32_t> seq = drafter_sequence(vocab, prompt_ids, nullptr);
    const int t = static_cast<int>(seq.size());
    const int pred =
        continuous_prediction(P, model.config, seq, 1, t, {static_cast<int32_t>(t - 1)});
    FeatureGrid grid(kRgbFeatureDim);
    const float* data = tape.value(pred).data();
    for (size_t i = 0; i < grid.values.size(); ++i) {
        grid.values[i] = std::clamp(data[i], 0.0f, 1.0f);
    }
    return grid;
}

}  // namespace ded
