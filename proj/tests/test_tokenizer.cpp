#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <limits>

#include "ded/error.hpp"
#include "ded/rng.hpp"
#include "ded/tokenizer.hpp"
#include "ded/vocab.hpp"
#include "ded/world.hpp"

using namespace ded;

namespace {

// Brute-force nearest neighbor, double precision: the quantizer oracle.
int nearest_entry(const float* v, const Codebook& cb) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < cb.entry_count; ++k) {
        double d = 0.0;
        for (int c = 0; c < cb.dim; ++c) {
            const double diff = static_cast<double>(v[c]) - cb.entry(k)[c];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

Codebook toy_codebook(int k, int dim, uint64_t seed) {
    Rng rng(seed);
    Codebook cb;
    cb.entry_count = k;
    cb.dim = dim;
    cb.entries.resize(static_cast<size_t>(k) * dim);
    for (auto& v : cb.entries) {
        v = rng.next_float();
    }
    return cb;
}

// Clean renders yield only 25 distinct cell features (24 shape-color combos
// plus background), so codebook corpora mix in pixel noise to cover the
// degraded cells the quantizer must also represent.
RasterImage noisy_render(const Scene& scene, Rng& rng) {
    RasterImage img = render(scene);
    const size_t flips = img.pixels.size() / 3 / 50;  // 2% of pixels
    for (size_t f = 0; f < flips; ++f) {
        const size_t p = rng.next_below(img.pixels.size() / 3);
        for (int ch = 0; ch < 3; ++ch) {
            img.pixels[p * 3 + ch] = static_cast<uint8_t>(rng.next_below(256));
        }
    }
    return img;
}

std::vector<float> feature_corpus(int scenes, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> vectors;
    for (int i = 0; i < scenes; ++i) {
        const auto cat = static_cast<PromptCategory>(rng.next_below(kNumCategories));
        const PromptSpec spec = sample_prompt_spec(cat, rng);
        const Scene scene = sample_scene(spec, rng.next_u64());
        const RasterImage img = i % 2 == 0 ? render(scene) : noisy_render(scene, rng);
        const FeatureGrid grid = extract_features(img);
        vectors.insert(vectors.end(), grid.values.begin(), grid.values.end());
    }
    return vectors;
}

}  // namespace

TEST_CASE("extract_features on an all-black image is zero") {
    const FeatureGrid grid = extract_features(RasterImage{});
    for (float v : grid.values) {
        CHECK(v == 0.0f);
    }
}

TEST_CASE("extract_features matches the template-derived golden vector") {
    // Golden values hand-derived from the template bitmaps:
    // fills circle=40, square=64, triangle=32, cross=28; overlaps with circle:
    // square 40, triangle 18, cross 16.
    Scene scene;
    scene.objects = {{Shape::circle, Color::red, 2, 3}};
    const FeatureGrid grid = extract_features(render(scene));
    const float* f = grid.cell(2 * kGridCells + 3);
    const double fill = 40.0 / 64.0;
    CHECK(f[0] == doctest::Approx(fill).epsilon(1e-6));
    CHECK(f[1] == 0.0f);
    CHECK(f[2] == 0.0f);
    CHECK(f[3] == doctest::Approx(fill).epsilon(1e-6));
    CHECK(f[4] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(f[5] == doctest::Approx(40.0 / std::sqrt(40.0 * 64.0)).epsilon(1e-6));
    CHECK(f[6] == doctest::Approx(18.0 / std::sqrt(40.0 * 32.0)).epsilon(1e-6));
    CHECK(f[7] == doctest::Approx(16.0 / std::sqrt(40.0 * 28.0)).epsilon(1e-6));
    // cells around it stay empty
    CHECK(grid.cell(0)[3] == 0.0f);

    // determinism
    CHECK(extract_features(render(scene)) == grid);
}

TEST_CASE("block_rgb_features are scaled block means") {
    Scene scene;
    scene.objects = {{Shape::square, Color::yellow, 0, 0}};
    const FeatureGrid grid = block_rgb_features(render(scene));
    CHECK(grid.dim == kRgbFeatureDim);
    CHECK(grid.cell(0)[0] == doctest::Approx(1.0));
    CHECK(grid.cell(0)[1] == doctest::Approx(1.0));
    CHECK(grid.cell(0)[2] == 0.0f);
    CHECK(grid.cell(1)[0] == 0.0f);
}

TEST_CASE("train_codebook: K=1 yields the component-wise mean") {
    const std::vector<float> data = {0.0f, 0.0f, 1.0f, 2.0f, 2.0f, 4.0f};
    const Codebook cb = train_codebook(data, 2, 1, 5, 42);
    CHECK(cb.entry(0)[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(cb.entry(0)[1] == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("train_codebook: two separated clusters recover brute-force centroids") {
    Rng rng(987);
    std::vector<float> data;
    double m0[2] = {0.0, 0.0};
    double m1[2] = {0.0, 0.0};
    const int n = 200;
    for (int i = 0; i < n; ++i) {
        const float eps0 = (rng.next_float() - 0.5f) * 0.01f;
        const float eps1 = (rng.next_float() - 0.5f) * 0.01f;
        const bool hi = i % 2 == 1;
        const float x = (hi ? 10.0f : 0.0f) + eps0;
        const float y = (hi ? 10.0f : 0.0f) + eps1;
        data.push_back(x);
        data.push_back(y);
        (hi ? m1 : m0)[0] += x;
        (hi ? m1 : m0)[1] += y;
    }
    for (double* m : {m0, m1}) {
        m[0] /= n / 2;
        m[1] /= n / 2;
    }
    const Codebook cb = train_codebook(data, 2, 2, 20, 7);
    // order-insensitive match against the oracle means
    const bool first_is_low = cb.entry(0)[0] < 5.0f;
    const float* lo = first_is_low ? cb.entry(0) : cb.entry(1);
    const float* hi = first_is_low ? cb.entry(1) : cb.entry(0);
    CHECK(std::fabs(lo[0] - m0[0]) < 1e-3);
    CHECK(std::fabs(lo[1] - m0[1]) < 1e-3);
    CHECK(std::fabs(hi[0] - m1[0]) < 1e-3);
    CHECK(std::fabs(hi[1] - m1[1]) < 1e-3);
}

TEST_CASE("train_codebook: exactly K distinct vectors become the codebook") {
    std::vector<float> data;
    for (int i = 0; i < 8; ++i) {
        data.push_back(static_cast<float>(i));
        data.push_back(static_cast<float>(i * 2));
    }
    const Codebook cb = train_codebook(data, 2, 8, 10, 3);
    // every input appears exactly once among the entries
    for (int i = 0; i < 8; ++i) {
        int found = 0;
        for (int k = 0; k < 8; ++k) {
            if (cb.entry(k)[0] == static_cast<float>(i) &&
                cb.entry(k)[1] == static_cast<float>(i * 2)) {
                ++found;
            }
        }
        CHECK(found == 1);
    }
    CHECK(cb.final_inertia == doctest::Approx(0.0));
}

TEST_CASE("train_codebook errors and invariants") {
    CHECK_THROWS_AS(train_codebook({1.0f, 1.0f, 1.0f, 1.0f}, 2, 2, 5, 0), InsufficientData);

    const std::vector<float> corpus = feature_corpus(120, 555);
    const Codebook cb = train_codebook(corpus, kFeatureDim, 32, 15, 99);

    // inertia is non-increasing across iterations
    for (size_t i = 1; i < cb.inertia_trace.size(); ++i) {
        CHECK(cb.inertia_trace[i] <= cb.inertia_trace[i - 1] + 1e-9);
    }

    // non-degeneracy
    for (int a = 0; a < cb.entry_count; ++a) {
        for (int b = a + 1; b < cb.entry_count; ++b) {
            double d = 0.0;
            for (int c = 0; c < cb.dim; ++c) {
                const double diff = static_cast<double>(cb.entry(a)[c]) - cb.entry(b)[c];
                d += diff * diff;
            }
            CHECK(d >= 1e-12);
        }
    }

    // determinism
    const Codebook cb2 = train_codebook(corpus, kFeatureDim, 32, 15, 99);
    CHECK(cb.entries == cb2.entries);
}

TEST_CASE("quantize equals the exhaustive nearest-neighbor oracle") {
    const Codebook cb = toy_codebook(17, kFeatureDim, 31337);
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        FeatureGrid grid;
        for (auto& v : grid.values) {
            v = rng.next_float();
        }
        const DraftTokens tokens = quantize(grid, cb);
        for (int i = 0; i < kNumCells; ++i) {
            CHECK(tokens.indices[i] == nearest_entry(grid.cell(i), cb));
        }
    }
}

TEST_CASE("quantize: codeword identity and tie-breaking") {
    const Codebook cb = toy_codebook(kDefaultCodebookSize, kFeatureDim, 5);
    for (int k = 0; k < cb.entry_count; ++k) {
        FeatureGrid grid;
        for (int i = 0; i < kNumCells; ++i) {
            for (int c = 0; c < kFeatureDim; ++c) {
                grid.cell(i)[c] = cb.entry(k)[c];
            }
        }
        const DraftTokens tokens = quantize(grid, cb);
        for (int i = 0; i < kNumCells; ++i) {
            CHECK(tokens.indices[i] == k);
        }
    }

    // exact tie between entries 2 and 5 resolves to 2
    Codebook tie;
    tie.entry_count = 6;
    tie.dim = 1;
    tie.entries = {10.0f, 11.0f, 1.0f, 12.0f, 13.0f, 3.0f};
    FeatureGrid grid(1);
    for (int i = 0; i < kNumCells; ++i) {
        grid.cell(i)[0] = 2.0f;  // equidistant from entries 2 (=1) and 5 (=3)
    }
    const DraftTokens tokens = quantize(grid, tie);
    CHECK(tokens.indices[0] == 2);

    FeatureGrid wrong(3);
    CHECK_THROWS_AS(quantize(wrong, tie), DimensionMismatch);
}

TEST_CASE("dequantize round-trips and validates indices") {
    const Codebook cb = toy_codebook(23, kFeatureDim, 777);
    Rng rng(888);
    for (int trial = 0; trial < 200; ++trial) {
        DraftTokens d;
        for (auto& q : d.indices) {
            q = static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(cb.entry_count)));
        }
        CHECK(quantize(dequantize(d, cb), cb) == d);
    }

    DraftTokens all_zero;
    const FeatureGrid grid = dequantize(all_zero, cb);
    for (int i = 0; i < kNumCells; ++i) {
        for (int c = 0; c < kFeatureDim; ++c) {
            CHECK(grid.cell(i)[c] == cb.entry(0)[c]);
        }
    }

    DraftTokens bad;
    bad.indices[10] = 23;
    CHECK_THROWS_AS(dequantize(bad, cb), IndexOutOfRange);
}

TEST_CASE("draft wrapper serialization") {
    const Vocabulary vocab(kDefaultCodebookSize);
    Rng rng(1);
    DraftTokens d;
    for (auto& q : d.indices) {
        q = static_cast<int32_t>(rng.next_below(kDefaultCodebookSize));
    }

    const std::vector<int32_t> ids = serialize_draft(d, vocab);
    CHECK(ids.size() == 66);
    CHECK(ids.front() == Vocabulary::kDraftOpen);
    CHECK(ids.back() == Vocabulary::kDraftClose);
    CHECK(parse_draft(ids, vocab) == d);

    DraftTokens zeros;
    const std::vector<int32_t> zids = serialize_draft(zeros, vocab);
    for (int i = 1; i <= kDraftLen; ++i) {
        CHECK(zids[i] == vocab.draft_base());
    }

    // malformed mutations raise their designated errors
    std::vector<int32_t> missing_close = ids;
    missing_close.pop_back();
    missing_close.push_back(vocab.draft_base());
    CHECK_THROWS_AS(parse_draft(missing_close, vocab), BadWrapper);

    std::vector<int32_t> short_body = ids;
    short_body.erase(short_body.begin() + 1);
    CHECK_THROWS_AS(parse_draft(short_body, vocab), BadLength);

    std::vector<int32_t> out_of_range = ids;
    out_of_range[5] = vocab.draft_base() + vocab.draft_count();
    CHECK_THROWS_AS(parse_draft(out_of_range, vocab), OutOfRange);

    // text form
    const std::string text = draft_to_text(d);
    CHECK(text.substr(0, 8) == "<DRAFT> ");
    CHECK(draft_from_text(text) == d);
}

TEST_CASE("make_draft produces each variant") {
    Rng rng(31);
    const std::vector<float> semantic_corpus = feature_corpus(150, 1001);
    const Codebook semantic = train_codebook(semantic_corpus, kFeatureDim, 48, 15, 2);

    std::vector<float> rgb_corpus;
    {
        Rng crng(77);
        for (int i = 0; i < 150; ++i) {
            const auto cat = static_cast<PromptCategory>(crng.next_below(kNumCategories));
            const Scene scene = sample_scene(sample_prompt_spec(cat, crng), crng.next_u64());
            const RasterImage img = i % 2 == 0 ? render(scene) : noisy_render(scene, crng);
            const FeatureGrid g = block_rgb_features(img);
            rgb_corpus.insert(rgb_corpus.end(), g.values.begin(), g.values.end());
        }
    }
    const Codebook recon = train_codebook(rgb_corpus, kRgbFeatureDim, 48, 15, 2);
    const VariantCodebooks cbs{&semantic, &recon};

    const Scene scene = sample_scene(parse_prompt("three cyan crosses"), 9);
    const RasterImage img = render(scene);

    const DraftPayload sem = make_draft(img, DraftVariant::semantic_vq, cbs);
    REQUIRE(sem.tokens.has_value());
    CHECK(*sem.tokens == quantize(extract_features(img), semantic));

    const DraftPayload rec = make_draft(img, DraftVariant::reconstruction_vq, cbs);
    REQUIRE(rec.tokens.has_value());
    CHECK(*rec.tokens == quantize(block_rgb_features(img), recon));

    const DraftPayload cont = make_draft(img, DraftVariant::continuous_latent, cbs);
    REQUIRE(cont.continuous.has_value());
    CHECK(*cont.continuous == block_rgb_features(img));

    const DraftPayload black = make_draft(RasterImage{}, DraftVariant::continuous_latent, cbs);
    for (float v : black.continuous->values) {
        CHECK(v == 0.0f);
    }

    CHECK_THROWS_AS(make_draft(img, DraftVariant::semantic_vq, VariantCodebooks{}),
                    UntrainedVariant);

    // reconstruction round-trip MSE decomposes into block variance plus the
    // quantization penalty (means are block-orthogonal to residuals)
    double cont_mse = 0.0;
    double recon_mse = 0.0;
    double quant_penalty = 0.0;
    int images = 0;
    for (int i = 0; i < 100; ++i) {
        const auto cat = static_cast<PromptCategory>(rng.next_below(kNumCategories));
        const RasterImage im = render(sample_scene(sample_prompt_spec(cat, rng), rng.next_u64()));
        const FeatureGrid mean = block_rgb_features(im);
        const FeatureGrid qmean = dequantize(quantize(mean, recon), recon);
        for (int cell = 0; cell < kNumCells; ++cell) {
            const int row = cell / kGridCells;
            const int col = cell % kGridCells;
            for (int y = 0; y < kCellPixels; ++y) {
                for (int x = 0; x < kCellPixels; ++x) {
                    for (int ch = 0; ch < 3; ++ch) {
                        const double pix = im.at(col * 8 + x, row * 8 + y, ch) / 255.0;
                        const double dm = pix - mean.cell(cell)[ch];
                        const double dq = pix - qmean.cell(cell)[ch];
                        cont_mse += dm * dm;
                        recon_mse += dq * dq;
                    }
                }
            }
            for (int ch = 0; ch < 3; ++ch) {
                const double dqm = static_cast<double>(mean.cell(cell)[ch]) - qmean.cell(cell)[ch];
                quant_penalty += 64.0 * dqm * dqm;
            }
        }
        ++images;
    }
    CHECK(recon_mse >= cont_mse - 1e-6);
    CHECK(recon_mse == doctest::Approx(cont_mse + quant_penalty).epsilon(1e-6));
    CHECK(images == 100);
}

TEST_CASE("codebook file round-trip is bit exact") {
    const Codebook cb = toy_codebook(19, 5, 12345);
    const std::string path = "test_codebook_tmp.dedc";
    write_codebook(cb, path);
    const Codebook back = read_codebook(path);
    CHECK(back.entry_count == cb.entry_count);
    CHECK(back.dim == cb.dim);
    CHECK(back.entries == cb.entries);
    CHECK(codebook_id(back) == codebook_id(cb));
    std::remove(path.c_str());
}

TEST_CASE("vocabulary basics") {
    const Vocabulary vocab(kDefaultCodebookSize);
    CHECK(vocab.draft_count() == kDefaultCodebookSize);
    CHECK(vocab.is_draft_token(vocab.draft_base()));
    CHECK_FALSE(vocab.is_draft_token(vocab.draft_base() - 1));
    CHECK(vocab.id_of("red") > 0);
    CHECK_THROWS_AS(vocab.id_of("crimson"), OutOfRange);

    const std::string text = "evaluation: fix: expected four green squares, draft shows five";
    const std::vector<int32_t> ids = vocab.encode_words(text);
    CHECK(vocab.decode_words(ids) == text);

    const std::string path = "test_vocab_tmp.txt";
    vocab.save(path);
    const Vocabulary loaded = Vocabulary::load(path);
    CHECK(loaded.size() == vocab.size());
    CHECK(loaded.draft_base() == vocab.draft_base());
    CHECK(loaded.draft_count() == vocab.draft_count());
    CHECK(loaded.id_of("red") == vocab.id_of("red"));
    std::remove(path.c_str());
}
