#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ded/tokenizer.hpp"
#include "ded/world.hpp"

namespace ded {

enum class DiscrepancyKind : uint8_t {
    missing_object = 0,
    extra_object,
    count_mismatch,
    color_mismatch,
    relation_violation,
};
const char* to_string(DiscrepancyKind k);

// One prompt-draft mismatch. `expected`/`observed` are canonical phrases used
// verbatim by serialize_evaluation, so they stay inside the closed vocabulary.
struct Discrepancy {
    DiscrepancyKind kind;
    int constraint_ref;     // object or relation index; -1 for extra_object
    std::string expected;   // e.g. "four green squares"
    std::string observed;   // e.g. "five", "none", "red", "right of"
    int expected_count = 0; // count_mismatch only
    int observed_count = 0;
    bool operator==(const Discrepancy&) const = default;
};

// Ordered diagnosis: object-constraint order, then relation order, then
// extras in cell order. Consistent iff empty.
struct Evaluation {
    std::vector<Discrepancy> discrepancies;
    bool consistent() const { return discrepancies.empty(); }
    bool operator==(const Evaluation&) const = default;
};

// Cell classifiers. Semantic layout: background iff fill < 0.3, else argmax
// shape correlation plus nearest palette color of the fill-normalized RGB.
// RGB layout: background iff max channel < 0.22; fill proxy = max channel;
// shape = nearest template fill fraction; color as above.
std::optional<std::pair<Shape, Color>> classify_semantic_cell(const float* feature);
std::optional<std::pair<Shape, Color>> classify_rgb_cell(const float* feature);

// Grid decode dispatching on feature dimension (8 = semantic, 3 = RGB).
Scene decode_feature_grid(const FeatureGrid& grid);

// Dequantize then classify each cell.
Scene decode_draft_to_scene(const DraftTokens& tokens, const Codebook& codebook);

// Core diagnosis over an already-decoded scene.
Evaluation evaluate_scene(const PromptSpec& spec, const Scene& scene);

// Decode the draft and diagnose it against the prompt. Empty iff the decoded
// scene passes every check constraint.
Evaluation evaluate(const PromptSpec& spec, const DraftTokens& tokens, const Codebook& codebook);

// Variant-aware entry point (token drafts decode through their codebook; the
// continuous payload decodes through the RGB cell rule).
Evaluation evaluate_payload(const PromptSpec& spec, const DraftPayload& payload,
                            const VariantCodebooks& codebooks);

// Canonical text, deterministic and word-tokenizable by the shared
// vocabulary. Consistent drafts render as
//   "evaluation: draft satisfies the prompt."
// and otherwise
//   "evaluation: fix: <clause>; <clause>; ..."
// with extra objects aggregated into one final clause.
std::string serialize_evaluation(const Evaluation& evaluation);

}  // namespace ded
