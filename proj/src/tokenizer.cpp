#include "ded/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "ded/error.hpp"
#include "ded/rng.hpp"

namespace ded {

FeatureGrid extract_features(const RasterImage& image) {
    FeatureGrid grid(kFeatureDim);
    std::array<const std::array<uint8_t, 64>*, kNumShapes> templates;
    std::array<int, kNumShapes> template_fill;
    for (int s = 0; s < kNumShapes; ++s) {
        templates[s] = &shape_template(static_cast<Shape>(s));
        template_fill[s] = shape_fill_count(static_cast<Shape>(s));
    }
    for (int row = 0; row < kGridCells; ++row) {
        for (int col = 0; col < kGridCells; ++col) {
            const int x0 = col * kCellPixels;
            const int y0 = row * kCellPixels;
            std::array<uint8_t, 64> mask{};
            int mask_count = 0;
            double sum[3] = {0.0, 0.0, 0.0};
            for (int y = 0; y < kCellPixels; ++y) {
                for (int x = 0; x < kCellPixels; ++x) {
                    bool on = false;
                    for (int ch = 0; ch < 3; ++ch) {
                        const uint8_t v = image.at(x0 + x, y0 + y, ch);
                        sum[ch] += v;
                        on = on || v > 0;
                    }
                    mask[y * kCellPixels + x] = on ? 1 : 0;
                    mask_count += on ? 1 : 0;
                }
            }
            float* f = grid.cell(row * kGridCells + col);
            for (int ch = 0; ch < 3; ++ch) {
                f[ch] = static_cast<float>(sum[ch] / (64.0 * 255.0));
            }
            f[3] = static_cast<float>(mask_count) / 64.0f;
            for (int s = 0; s < kNumShapes; ++s) {
                if (mask_count == 0) {
                    f[4 + s] = 0.0f;
                    continue;
                }
                int overlap = 0;
                for (int i = 0; i < 64; ++i) {
                    overlap += (mask[i] & (*templates[s])[i]);
                }
                f[4 + s] = static_cast<float>(
                    overlap / std::sqrt(static_cast<double>(mask_count) * template_fill[s]));
            }
        }
    }
    return grid;
}

FeatureGrid block_rgb_features(const RasterImage& image) {
    FeatureGrid grid(kRgbFeatureDim);
    for (int row = 0; row < kGridCells; ++row) {
        for (int col = 0; col < kGridCells; ++col) {
            const int x0 = col * kCellPixels;
            const int y0 = row * kCellPixels;
            double sum[3] = {0.0, 0.0, 0.0};
            for (int y = 0; y < kCellPixels; ++y) {
                for (int x = 0; x < kCellPixels; ++x) {
                    for (int ch = 0; ch < 3; ++ch) {
                        sum[ch] += image.at(x0 + x, y0 + y, ch);
                    }
                }
            }
            float* f = grid.cell(row * kGridCells + col);
            for (int ch = 0; ch < 3; ++ch) {
                f[ch] = static_cast<float>(sum[ch] / (64.0 * 255.0));
            }
        }
    }
    return grid;
}

// --- codebook training ---

namespace {

double sq_distance(const float* a, const float* b, int dim) {
    double d = 0.0;
    for (int i = 0; i < dim; ++i) {
        const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        d += diff * diff;
    }
    return d;
}

size_t count_distinct(const std::vector<float>& vectors, int dim) {
    std::unordered_set<std::string> seen;
    const size_t n = vectors.size() / static_cast<size_t>(dim);
    for (size_t i = 0; i < n; ++i) {
        seen.emplace(reinterpret_cast<const char*>(vectors.data() + i * dim),
                     sizeof(float) * static_cast<size_t>(dim));
    }
    return seen.size();
}

}  // namespace

Codebook train_codebook(const std::vector<float>& vectors, int dim, int k, int iterations,
                        uint64_t seed) {
    if (dim <= 0 || vectors.size() % static_cast<size_t>(dim) != 0) {
        throw DimensionMismatch("feature stream size is not a multiple of the dimension");
    }
    const size_t n = vectors.size() / static_cast<size_t>(dim);
    if (count_distinct(vectors, dim) < static_cast<size_t>(k)) {
        throw InsufficientData("need at least K distinct vectors to train a K-entry codebook");
    }

    Codebook cb;
    cb.entry_count = k;
    cb.dim = dim;
    cb.entries.resize(static_cast<size_t>(k) * dim);

    auto point = [&](size_t i) { return vectors.data() + i * static_cast<size_t>(dim); };

    // farthest-point initialization: seeded first pick, then greedy max-min
    Rng rng(seed);
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    size_t first = static_cast<size_t>(rng.next_below(n));
    std::memcpy(cb.entry(0), point(first), sizeof(float) * static_cast<size_t>(dim));
    for (int c = 1; c < k; ++c) {
        size_t best = 0;
        double best_dist = -1.0;
        for (size_t i = 0; i < n; ++i) {
            const double d = sq_distance(point(i), cb.entry(c - 1), dim);
            if (d < min_dist[i]) {
                min_dist[i] = d;
            }
            if (min_dist[i] > best_dist) {
                best_dist = min_dist[i];
                best = i;
            }
        }
        std::memcpy(cb.entry(c), point(best), sizeof(float) * static_cast<size_t>(dim));
    }

    std::vector<int> assignment(n, 0);
    std::vector<double> dist_to_centroid(n, 0.0);
    auto assign_all = [&]() {
        double inertia = 0.0;
        for (size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = sq_distance(point(i), cb.entry(c), dim);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            assignment[i] = best;
            dist_to_centroid[i] = best_d;
            inertia += best_d;
        }
        return inertia;
    };

    double inertia = assign_all();
    cb.inertia_trace.push_back(inertia);
    for (int iter = 0; iter < iterations; ++iter) {
        std::vector<double> sums(static_cast<size_t>(k) * dim, 0.0);
        std::vector<int64_t> counts(static_cast<size_t>(k), 0);
        for (size_t i = 0; i < n; ++i) {
            const float* p = point(i);
            double* s = sums.data() + static_cast<size_t>(assignment[i]) * dim;
            for (int d = 0; d < dim; ++d) {
                s[d] += p[d];
            }
            ++counts[static_cast<size_t>(assignment[i])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] == 0) {
                // re-seed to the point farthest from its current centroid
                size_t far = 0;
                double far_d = -1.0;
                for (size_t i = 0; i < n; ++i) {
                    if (dist_to_centroid[i] > far_d) {
                        far_d = dist_to_centroid[i];
                        far = i;
                    }
                }
                std::memcpy(cb.entry(c), point(far), sizeof(float) * static_cast<size_t>(dim));
                dist_to_centroid[far] = 0.0;
            } else {
                float* e = cb.entry(c);
                for (int d = 0; d < dim; ++d) {
                    e[d] = static_cast<float>(sums[static_cast<size_t>(c) * dim + d] /
                                              static_cast<double>(counts[static_cast<size_t>(c)]));
                }
            }
        }
        inertia = assign_all();
        cb.inertia_trace.push_back(inertia);
    }

    // enforce non-degeneracy: replace near-duplicate entries by distinct,
    // currently-uncovered points
    constexpr double kMinSeparationSq = 1e-6 * 1e-6;
    for (int c = 1; c < k; ++c) {
        bool degenerate = false;
        for (int prev = 0; prev < c; ++prev) {
            if (sq_distance(cb.entry(c), cb.entry(prev), dim) < kMinSeparationSq) {
                degenerate = true;
                break;
            }
        }
        if (!degenerate) {
            continue;
        }
        size_t best = n;
        double best_d = -1.0;
        for (size_t i = 0; i < n; ++i) {
            double nearest = std::numeric_limits<double>::infinity();
            for (int c2 = 0; c2 < k; ++c2) {
                nearest = std::min(nearest, sq_distance(point(i), cb.entry(c2), dim));
            }
            if (nearest >= kMinSeparationSq && nearest > best_d) {
                best_d = nearest;
                best = i;
            }
        }
        if (best == n) {
            throw InsufficientData("cannot separate codebook entries: data too degenerate");
        }
        std::memcpy(cb.entry(c), point(best), sizeof(float) * static_cast<size_t>(dim));
        inertia = assign_all();
    }

    cb.trained_iterations = iterations;
    cb.final_inertia = inertia;
    return cb;
}

// --- quantization ---

DraftTokens quantize(const FeatureGrid& features, const Codebook& codebook) {
    if (features.dim != codebook.dim) {
        throw DimensionMismatch("feature dimension " + std::to_string(features.dim) +
                                " does not match codebook dimension " +
                                std::to_string(codebook.dim));
    }
    DraftTokens tokens;
    for (int i = 0; i < kNumCells; ++i) {
        const float* f = features.cell(i);
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int c = 0; c < codebook.entry_count; ++c) {
            const double d = sq_distance(f, codebook.entry(c), codebook.dim);
            if (d < best_d) {  // strict: ties keep the lowest index
                best_d = d;
                best = c;
            }
        }
        tokens.indices[static_cast<size_t>(i)] = best;
    }
    return tokens;
}

FeatureGrid dequantize(const DraftTokens& tokens, const Codebook& codebook) {
    FeatureGrid grid(codebook.dim);
    for (int i = 0; i < kNumCells; ++i) {
        const int32_t q = tokens.indices[static_cast<size_t>(i)];
        if (q < 0 || q >= codebook.entry_count) {
            throw IndexOutOfRange("draft token " + std::to_string(q) + " outside codebook of " +
                                  std::to_string(codebook.entry_count) + " entries");
        }
        std::memcpy(grid.cell(i), codebook.entry(q),
                    sizeof(float) * static_cast<size_t>(codebook.dim));
    }
    return grid;
}

// --- wrapper serialization ---

std::vector<int32_t> serialize_draft(const DraftTokens& tokens, const Vocabulary& vocab) {
    std::vector<int32_t> ids;
    ids.reserve(kDraftLen + 2);
    ids.push_back(Vocabulary::kDraftOpen);
    for (int32_t q : tokens.indices) {
        ids.push_back(vocab.draft_base() + q);
    }
    ids.push_back(Vocabulary::kDraftClose);
    return ids;
}

DraftTokens parse_draft(const std::vector<int32_t>& ids, const Vocabulary& vocab) {
    if (ids.empty() || ids.front() != Vocabulary::kDraftOpen) {
        throw BadWrapper("draft sequence does not start with <DRAFT>");
    }
    if (ids.back() != Vocabulary::kDraftClose) {
        throw BadWrapper("draft sequence does not end with </DRAFT>");
    }
    if (ids.size() != static_cast<size_t>(kDraftLen) + 2) {
        throw BadLength("draft body has " + std::to_string(ids.size() - 2) + " tokens, expected " +
                        std::to_string(kDraftLen));
    }
    DraftTokens tokens;
    for (int i = 0; i < kDraftLen; ++i) {
        const int32_t id = ids[static_cast<size_t>(i) + 1];
        if (id == Vocabulary::kDraftOpen || id == Vocabulary::kDraftClose) {
            throw BadWrapper("wrapper marker inside draft body");
        }
        if (!vocab.is_draft_token(id)) {
            throw OutOfRange("id " + std::to_string(id) + " outside the draft token block");
        }
        tokens.indices[static_cast<size_t>(i)] = id - vocab.draft_base();
    }
    return tokens;
}

std::string draft_to_text(const DraftTokens& tokens) {
    std::string out = "<DRAFT>";
    for (int32_t q : tokens.indices) {
        out += " v";
        out += std::to_string(q);
    }
    out += " </DRAFT>";
    return out;
}

DraftTokens draft_from_text(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) {
        words.push_back(w);
    }
    if (words.empty() || words.front() != "<DRAFT>") {
        throw BadWrapper("draft text does not start with <DRAFT>");
    }
    if (words.back() != "</DRAFT>") {
        throw BadWrapper("draft text does not end with </DRAFT>");
    }
    if (words.size() != static_cast<size_t>(kDraftLen) + 2) {
        throw BadLength("draft text body has " + std::to_string(words.size() - 2) +
                        " tokens, expected " + std::to_string(kDraftLen));
    }
    DraftTokens tokens;
    for (int i = 0; i < kDraftLen; ++i) {
        const std::string& tok = words[static_cast<size_t>(i) + 1];
        if (tok.size() < 2 || tok[0] != 'v' ||
            tok.find_first_not_of("0123456789", 1) != std::string::npos) {
            throw BadWrapper("bad draft token text '" + tok + "'");
        }
        tokens.indices[static_cast<size_t>(i)] = std::stoi(tok.substr(1));
    }
    return tokens;
}

const char* to_string(DraftVariant v) {
    switch (v) {
        case DraftVariant::semantic_vq: return "semantic_vq";
        case DraftVariant::continuous_latent: return "continuous_latent";
        case DraftVariant::reconstruction_vq: return "reconstruction_vq";
    }
    return "";
}

DraftPayload make_draft(const RasterImage& image, DraftVariant variant,
                        const VariantCodebooks& codebooks) {
    DraftPayload payload;
    payload.variant = variant;
    switch (variant) {
        case DraftVariant::semantic_vq:
            if (codebooks.semantic == nullptr) {
                throw UntrainedVariant("semantic_vq requires a trained semantic codebook");
            }
            payload.tokens = quantize(extract_features(image), *codebooks.semantic);
            break;
        case DraftVariant::reconstruction_vq:
            if (codebooks.reconstruction == nullptr) {
                throw UntrainedVariant(
                    "reconstruction_vq requires a trained reconstruction codebook");
            }
            payload.tokens = quantize(block_rgb_features(image), *codebooks.reconstruction);
            break;
        case DraftVariant::continuous_latent:
            payload.continuous = block_rgb_features(image);
            break;
    }
    return payload;
}

// --- codebook persistence ---

void write_codebook(const Codebook& codebook, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out.write("DEDC", 4);
    const uint32_t k = static_cast<uint32_t>(codebook.entry_count);
    const uint32_t c = static_cast<uint32_t>(codebook.dim);
    out.write(reinterpret_cast<const char*>(&k), 4);
    out.write(reinterpret_cast<const char*>(&c), 4);
    out.write(reinterpret_cast<const char*>(codebook.entries.data()),
              static_cast<std::streamsize>(codebook.entries.size() * sizeof(float)));
    if (!out) {
        throw IoError("short write: " + path);
    }
}

Codebook read_codebook(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open for reading: " + path);
    }
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DEDC", 4) != 0) {
        throw IoError("bad codebook magic in " + path);
    }
    uint32_t k = 0;
    uint32_t c = 0;
    in.read(reinterpret_cast<char*>(&k), 4);
    in.read(reinterpret_cast<char*>(&c), 4);
    Codebook cb;
    cb.entry_count = static_cast<int>(k);
    cb.dim = static_cast<int>(c);
    cb.entries.resize(static_cast<size_t>(k) * c);
    in.read(reinterpret_cast<char*>(cb.entries.data()),
            static_cast<std::streamsize>(cb.entries.size() * sizeof(float)));
    if (!in) {
        throw IoError("short read: " + path);
    }
    return cb;
}

std::string codebook_id(const Codebook& codebook) {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix_bytes = [&h](const void* data, size_t len) {
        const auto* p = static_cast<const uint8_t*>(data);
        for (size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ull;
        }
    };
    const uint32_t k = static_cast<uint32_t>(codebook.entry_count);
    const uint32_t c = static_cast<uint32_t>(codebook.dim);
    mix_bytes(&k, 4);
    mix_bytes(&c, 4);
    mix_bytes(codebook.entries.data(), codebook.entries.size() * sizeof(float));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace ded
