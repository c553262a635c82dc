#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ded/nn.hpp"
#include "ded/tokenizer.hpp"
#include "ded/vocab.hpp"

namespace ded {

// Decoder-only autoregressive model mapping a prompt to a visual draft. The
// draft is always generated inside the wrapper with constrained decoding, so
// sampled output parses unconditionally.
struct DrafterConfig {
    int vocab_size = 0;
    int context = 96;
    int width = 128;
    int blocks = 2;
    int heads = 4;
    int ffn_mult = 4;
};

struct DrafterModel {
    DrafterConfig config;
    nn::ParameterStore params;

    static DrafterModel init(const DrafterConfig& config, uint64_t seed);
};

struct DraftExample {
    std::vector<int32_t> prompt_ids;  // word ids, no control tokens
    DraftTokens draft;
};

// Teacher-forced step over [BOS, prompt, <DRAFT>, body, </DRAFT>]; the loss
// covers draft-body positions and </DRAFT> only (prompt and <DRAFT> are
// conditioning). Accumulates gradients; returns mean nats per predicted token.
// Throws ContextOverflow when a sequence exceeds the model context.
double drafter_train_step(DrafterModel& model, const Vocabulary& vocab,
                          std::span<const DraftExample> batch);

// Constrained ancestral sampling: exactly kDraftLen body tokens restricted to
// the draft-token block, wrapper forced. temperature 0 = argmax; top_k 0
// disables top-k filtering. Deterministic given the seed.
DraftTokens sample_draft(const DrafterModel& model, const Vocabulary& vocab,
                         const std::vector<int32_t>& prompt_ids, float temperature, int top_k,
                         uint64_t seed);

// Regression drafter for the continuous draft variant: predicts the 8x8x3
// block-mean grid directly from the prompt (no sampling; the prediction is
// the conditional mean, which is exactly why continuous drafts underperform).
struct ContinuousDrafter {
    DrafterConfig config;  // head dimensions derived from the grid
    nn::ParameterStore params;

    static ContinuousDrafter init(const DrafterConfig& config, uint64_t seed);
};

struct ContinuousDraftExample {
    std::vector<int32_t> prompt_ids;
    FeatureGrid target;  // 3-channel grid
};

double continuous_drafter_train_step(ContinuousDrafter& model, const Vocabulary& vocab,
                                     std::span<const ContinuousDraftExample> batch);

FeatureGrid predict_continuous_draft(const ContinuousDrafter& model, const Vocabulary& vocab,
                                     const std::vector<int32_t>& prompt_ids);

}  // namespace ded
