#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ded/vocab.hpp"
#include "ded/world.hpp"

namespace ded {

inline constexpr int kFeatureDim = 8;     // semantic per-cell features
inline constexpr int kRgbFeatureDim = 3;  // raw block-mean RGB features
inline constexpr int kDraftLen = kNumCells;
inline constexpr int kDefaultCodebookSize = 64;

// 8x8 grid of per-cell feature vectors, row-major cells.
struct FeatureGrid {
    int dim = kFeatureDim;
    std::vector<float> values;  // kNumCells * dim

    FeatureGrid() : values(static_cast<size_t>(kNumCells) * kFeatureDim, 0.0f) {}
    explicit FeatureGrid(int d) : dim(d), values(static_cast<size_t>(kNumCells) * d, 0.0f) {}

    float* cell(int i) { return values.data() + static_cast<size_t>(i) * dim; }
    const float* cell(int i) const { return values.data() + static_cast<size_t>(i) * dim; }
    bool operator==(const FeatureGrid&) const = default;
};

// Semantic cell features: [mean R, mean G, mean B (each /255), fill fraction,
// corr(circle), corr(square), corr(triangle), corr(cross)], where corr is the
// normalized binary correlation |mask & tmpl| / sqrt(|mask|*|tmpl|) of the
// cell's occupancy mask (any non-black pixel) against each shape template,
// and 0 for an empty mask.
FeatureGrid extract_features(const RasterImage& image);

// Raw per-cell [mean R, mean G, mean B] / 255 (the pixel-reconstruction
// feature space used by the non-semantic draft variants).
FeatureGrid block_rgb_features(const RasterImage& image);

struct Codebook {
    int entry_count = 0;  // K
    int dim = 0;          // C
    std::vector<float> entries;  // K * C, row-major
    int trained_iterations = 0;
    double final_inertia = 0.0;
    std::vector<double> inertia_trace;  // inertia after init and after each iteration

    const float* entry(int k) const { return entries.data() + static_cast<size_t>(k) * dim; }
    float* entry(int k) { return entries.data() + static_cast<size_t>(k) * dim; }
};

// k-means with deterministic farthest-point initialization. Empty clusters are
// re-seeded to the point currently farthest from its assigned centroid. The
// result satisfies the non-degeneracy invariant (no two entries within 1e-6).
// Throws InsufficientData when the stream holds fewer than K distinct vectors.
Codebook train_codebook(const std::vector<float>& vectors, int dim, int k, int iterations,
                        uint64_t seed);

// Fixed-length visual draft: one codebook index per grid cell.
struct DraftTokens {
    std::array<int32_t, kDraftLen> indices{};
    bool operator==(const DraftTokens&) const = default;
};

// Nearest codebook entry per cell under L2; ties break to the lowest index.
DraftTokens quantize(const FeatureGrid& features, const Codebook& codebook);

// Inverse lookup; quantize(dequantize(d)) == d given non-degeneracy.
FeatureGrid dequantize(const DraftTokens& tokens, const Codebook& codebook);

// Wrapper serialization into vocabulary ids:
//   [<DRAFT>, base+q_1, ..., base+q_N, </DRAFT>], always N+2 ids.
std::vector<int32_t> serialize_draft(const DraftTokens& tokens, const Vocabulary& vocab);

// Strict inverse of serialize_draft. Throws BadWrapper on missing/misplaced
// markers, BadLength on a body that is not exactly N tokens, OutOfRange on
// ids outside the draft block.
DraftTokens parse_draft(const std::vector<int32_t>& ids, const Vocabulary& vocab);

// Log/text form: "<DRAFT> v12 v7 ... </DRAFT>".
std::string draft_to_text(const DraftTokens& tokens);
DraftTokens draft_from_text(const std::string& text);

enum class DraftVariant : uint8_t { semantic_vq = 0, continuous_latent, reconstruction_vq };
const char* to_string(DraftVariant v);

struct VariantCodebooks {
    const Codebook* semantic = nullptr;        // trained on extract_features
    const Codebook* reconstruction = nullptr;  // trained on block_rgb_features
};

// A draft in one of the three studied representations. Token variants carry
// indices; the continuous variant carries the raw 3-channel block-mean grid.
struct DraftPayload {
    DraftVariant variant = DraftVariant::semantic_vq;
    std::optional<DraftTokens> tokens;
    std::optional<FeatureGrid> continuous;
};

// Builds the draft payload for an image under the requested variant.
// Throws UntrainedVariant when the needed codebook is missing.
DraftPayload make_draft(const RasterImage& image, DraftVariant variant,
                        const VariantCodebooks& codebooks);

// Little-endian binary codebook file: magic "DEDC", u32 K, u32 C, K*C f32.
void write_codebook(const Codebook& codebook, const std::string& path);
Codebook read_codebook(const std::string& path);

// FNV-1a hash of the serialized entries, hex string (dataset manifests).
std::string codebook_id(const Codebook& codebook);

}  // namespace ded
