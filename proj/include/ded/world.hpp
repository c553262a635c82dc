#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ded/rng.hpp"

namespace ded {

// The closed toy universe: prompts describe colored shapes with counts and
// spatial relations; scenes place them on an 8x8 cell grid; images are
// deterministic 64x64 rasterizations. Everything downstream (drafting,
// evaluation, diffusion, benchmarking) is anchored by the exact constraint
// verifier `check` defined here.

inline constexpr int kGridCells = 8;                       // cells per side
inline constexpr int kCellPixels = 8;                      // pixels per cell side
inline constexpr int kImageSize = kGridCells * kCellPixels;  // 64
inline constexpr int kNumCells = kGridCells * kGridCells;    // 64
inline constexpr int kMaxObjectCount = 6;

enum class Shape : uint8_t { circle = 0, square, triangle, cross };
enum class Color : uint8_t { red = 0, green, blue, yellow, magenta, cyan };
enum class RelationKind : uint8_t { left_of = 0, right_of, above, below };
enum class PromptCategory : uint8_t {
    single_object = 0,
    two_object,
    counting,
    colors,
    position,
    attr_binding,
};

inline constexpr int kNumShapes = 4;
inline constexpr int kNumColors = 6;
inline constexpr int kNumCategories = 6;

const char* to_string(Shape s);
const char* to_string(Color c);
const char* to_string(RelationKind r);        // "left of", "right of", "above", "below"
const char* to_string(PromptCategory c);      // snake_case names
std::array<uint8_t, 3> color_rgb(Color c);    // saturated palette

// 8x8 binary occupancy template, row-major; 1 = shape pixel.
const std::array<uint8_t, 64>& shape_template(Shape s);
int shape_fill_count(Shape s);  // number of set template pixels

struct ObjectSpec {
    Shape shape;
    Color color;
    int count;  // in [1, 6]
    bool operator==(const ObjectSpec&) const = default;
};

struct RelationSpec {
    int subject_index;
    RelationKind kind;
    int object_index;
    bool operator==(const RelationSpec&) const = default;
};

struct PromptSpec {
    std::vector<ObjectSpec> objects;      // non-empty
    std::vector<RelationSpec> relations;  // operand indices valid, operand counts = 1
    PromptCategory category;
    bool operator==(const PromptSpec&) const = default;
};

struct PlacedObject {
    Shape shape;
    Color color;
    int cell_row;
    int cell_col;
    bool operator==(const PlacedObject&) const = default;
};

// Placed objects in canonical (row, col) order; at most one object per cell.
struct Scene {
    std::vector<PlacedObject> objects;
    bool operator==(const Scene&) const = default;
    void normalize();  // sort into canonical cell order
};

// 64x64 RGB image, 8-bit channels, row-major.
struct RasterImage {
    std::array<uint8_t, kImageSize * kImageSize * 3> pixels{};

    uint8_t& at(int x, int y, int c) { return pixels[(y * kImageSize + x) * 3 + c]; }
    uint8_t at(int x, int y, int c) const { return pixels[(y * kImageSize + x) * 3 + c]; }
    bool operator==(const RasterImage&) const = default;
};

struct ConstraintRecord {
    enum class Kind : uint8_t { object_multiplicity, relation, no_extras };
    Kind kind;
    int index;     // object/relation index; -1 for no_extras
    bool pass;
    int expected;  // multiplicity records only
    int observed;
};

struct ConstraintReport {
    std::vector<ConstraintRecord> records;
    double alignment_score;  // passing records / total records, exactly

    bool all_pass() const { return alignment_score == 1.0; }
};

// Parses the closed prompt grammar:
//   prompt    := objphrase (" and " objphrase)* | objphrase " " rel " " objphrase
//   objphrase := countword " " color " " shape["s"]
//   countword in {a, one..six} ("a" means 1); plural "s" iff count > 1
//   rel in {left of, right of, above, below}; relation operands must have count 1
// Throws MalformedPrompt on any deviation, including count/plural disagreement.
PromptSpec parse_prompt(const std::string& text);

// Canonical text; parse_prompt(render_prompt_text(s)) == s for every valid spec.
std::string render_prompt_text(const PromptSpec& spec);

// Canonical object phrase, e.g. "a red circle" / "four green squares".
std::string object_phrase(const ObjectSpec& spec);

// Count words "one".."six" (n in [1, 6]).
const char* count_word(int n);

// Category inference used by parse_prompt (fixed local convention).
PromptCategory infer_category(const std::vector<ObjectSpec>& objects,
                              const std::vector<RelationSpec>& relations);

// Rejection-samples a scene satisfying every constraint of `spec` (uniform
// cells, at most 10,000 attempts). Deterministic given seed.
// Throws Unsatisfiable when the attempt budget runs out.
Scene sample_scene(const PromptSpec& spec, uint64_t seed);

// Uniformly samples a valid PromptSpec of the given category (used by the
// dataset builders and the benchmark suite generator).
PromptSpec sample_prompt_spec(PromptCategory category, Rng& rng);

// Deterministic rasterization: each object is its shape template stamped in
// its pure palette color on black background.
RasterImage render(const Scene& scene);

// Per-cell template/color matching; a cell holds an object iff its best match
// has at least 0.8 of the cell's pixels within `tolerance` per channel.
// detect_scene(render(s), 0) == s for every valid scene.
Scene detect_scene(const RasterImage& image, int tolerance);

// One record per object spec (exact multiplicity), one per relation (strict
// inequality on cells, operands required to be unique), plus one "no extras"
// record that fails iff the scene contains an object matching no spec.
ConstraintReport check(const PromptSpec& spec, const Scene& scene);

// Binary PPM (P6, maxval 255) persistence.
void write_ppm(const RasterImage& image, const std::string& path);
RasterImage read_ppm(const std::string& path);

}  // namespace ded
