#include "ded/world.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ded/error.hpp"

namespace ded {

namespace {

// Shape templates, one bit per pixel. Chosen so that fill counts are pairwise
// distinct (64/40/32/28) and pairwise template correlations stay well below 1,
// which gives the downstream cell classifier a comfortable margin.
constexpr std::array<uint8_t, 8> kCircleRows{0b00111100, 0b01111110, 0b11100111, 0b11000011,
                                             0b11000011, 0b11100111, 0b01111110, 0b00111100};
constexpr std::array<uint8_t, 8> kSquareRows{0b11111111, 0b11111111, 0b11111111, 0b11111111,
                                             0b11111111, 0b11111111, 0b11111111, 0b11111111};
constexpr std::array<uint8_t, 8> kTriangleRows{0b00011000, 0b00011000, 0b00111100, 0b00111100,
                                               0b01111110, 0b01111110, 0b11111111, 0b00000000};
constexpr std::array<uint8_t, 8> kCrossRows{0b00011000, 0b00011000, 0b00011000, 0b11111111,
                                            0b11111111, 0b00011000, 0b00011000, 0b00011000};

std::array<uint8_t, 64> expand_rows(const std::array<uint8_t, 8>& rows) {
    std::array<uint8_t, 64> out{};
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            out[y * 8 + x] = (rows[y] >> (7 - x)) & 1;
        }
    }
    return out;
}

const std::array<std::array<uint8_t, 64>, kNumShapes>& all_templates() {
    static const std::array<std::array<uint8_t, 64>, kNumShapes> t = {
        expand_rows(kCircleRows), expand_rows(kSquareRows), expand_rows(kTriangleRows),
        expand_rows(kCrossRows)};
    return t;
}

const char* kShapeNames[kNumShapes] = {"circle", "square", "triangle", "cross"};
const char* kShapeNamesPlural[kNumShapes] = {"circles", "squares", "triangles", "crosses"};
const char* kColorNames[kNumColors] = {"red", "green", "blue", "yellow", "magenta", "cyan"};
const char* kCountWords[kMaxObjectCount + 1] = {"", "one", "two", "three", "four", "five", "six"};

constexpr std::array<std::array<uint8_t, 3>, kNumColors> kPalette = {{
    {255, 0, 0},
    {0, 255, 0},
    {0, 0, 255},
    {255, 255, 0},
    {255, 0, 255},
    {0, 255, 255},
}};

}  // namespace

const char* to_string(Shape s) { return kShapeNames[static_cast<int>(s)]; }
const char* to_string(Color c) { return kColorNames[static_cast<int>(c)]; }

const char* to_string(RelationKind r) {
    switch (r) {
        case RelationKind::left_of: return "left of";
        case RelationKind::right_of: return "right of";
        case RelationKind::above: return "above";
        case RelationKind::below: return "below";
    }
    return "";
}

const char* to_string(PromptCategory c) {
    switch (c) {
        case PromptCategory::single_object: return "single_object";
        case PromptCategory::two_object: return "two_object";
        case PromptCategory::counting: return "counting";
        case PromptCategory::colors: return "colors";
        case PromptCategory::position: return "position";
        case PromptCategory::attr_binding: return "attr_binding";
    }
    return "";
}

std::array<uint8_t, 3> color_rgb(Color c) { return kPalette[static_cast<int>(c)]; }

const std::array<uint8_t, 64>& shape_template(Shape s) {
    return all_templates()[static_cast<int>(s)];
}

int shape_fill_count(Shape s) {
    const auto& t = shape_template(s);
    int n = 0;
    for (uint8_t v : t) {
        n += v;
    }
    return n;
}

void Scene::normalize() {
    std::sort(objects.begin(), objects.end(), [](const PlacedObject& a, const PlacedObject& b) {
        if (a.cell_row != b.cell_row) return a.cell_row < b.cell_row;
        if (a.cell_col != b.cell_col) return a.cell_col < b.cell_col;
        return false;
    });
}

// --- prompt grammar ---

namespace {

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (c == ' ') {
            if (!cur.empty()) {
                words.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) {
        words.push_back(cur);
    }
    return words;
}

int parse_count_word(const std::string& w) {
    if (w == "a") return 1;
    for (int i = 1; i <= kMaxObjectCount; ++i) {
        if (w == kCountWords[i]) return i;
    }
    return -1;
}

int parse_color_word(const std::string& w) {
    for (int i = 0; i < kNumColors; ++i) {
        if (w == kColorNames[i]) return i;
    }
    return -1;
}

// Returns shape index, sets `plural`; -1 when the word is not a shape.
int parse_shape_word(const std::string& w, bool& plural) {
    for (int i = 0; i < kNumShapes; ++i) {
        if (w == kShapeNames[i]) {
            plural = false;
            return i;
        }
        if (w == kShapeNamesPlural[i]) {
            plural = true;
            return i;
        }
    }
    return -1;
}

struct PhraseParse {
    ObjectSpec spec;
    size_t count_word_pos;
};

const std::string& require_token(const std::vector<std::string>& words, size_t pos,
                                 const char* expected) {
    if (pos >= words.size()) {
        static const std::string kEnd = "<end>";
        throw MalformedPrompt(pos, expected, kEnd);
    }
    return words[pos];
}

PhraseParse parse_objphrase(const std::vector<std::string>& words, size_t& pos) {
    PhraseParse out;
    out.count_word_pos = pos;
    const std::string& cw = require_token(words, pos, "count word (a|one..six)");
    const int count = parse_count_word(cw);
    if (count < 0) {
        throw MalformedPrompt(pos, "count word (a|one..six)", cw);
    }
    ++pos;
    const std::string& colw = require_token(words, pos, "color");
    const int color = parse_color_word(colw);
    if (color < 0) {
        throw MalformedPrompt(pos, "color (red|green|blue|yellow|magenta|cyan)", colw);
    }
    ++pos;
    const std::string& shw = require_token(words, pos, "shape");
    bool plural = false;
    const int shape = parse_shape_word(shw, plural);
    if (shape < 0) {
        throw MalformedPrompt(pos, "shape (circle|square|triangle|cross)[s]", shw);
    }
    if (plural != (count > 1)) {
        throw MalformedPrompt(pos, plural ? "singular shape for count 1" : "plural shape for count > 1",
                              shw);
    }
    ++pos;
    out.spec = ObjectSpec{static_cast<Shape>(shape), static_cast<Color>(color), count};
    return out;
}

}  // namespace

PromptCategory infer_category(const std::vector<ObjectSpec>& objects,
                              const std::vector<RelationSpec>& relations) {
    if (!relations.empty()) {
        return PromptCategory::position;
    }
    for (const auto& o : objects) {
        if (o.count > 1) {
            return PromptCategory::counting;
        }
    }
    if (objects.size() == 2) {
        const bool colors_differ = objects[0].color != objects[1].color;
        const bool shapes_differ = objects[0].shape != objects[1].shape;
        if (colors_differ && shapes_differ) {
            return PromptCategory::attr_binding;
        }
        if (colors_differ) {
            return PromptCategory::colors;
        }
        return PromptCategory::two_object;
    }
    if (objects.size() > 2) {
        return PromptCategory::two_object;
    }
    return PromptCategory::single_object;
}

PromptSpec parse_prompt(const std::string& text) {
    const std::vector<std::string> words = split_words(text);
    size_t pos = 0;
    PromptSpec spec;

    PhraseParse first = parse_objphrase(words, pos);
    spec.objects.push_back(first.spec);

    if (pos < words.size() && (words[pos] == "left" || words[pos] == "right" ||
                               words[pos] == "above" || words[pos] == "below")) {
        RelationKind kind;
        if (words[pos] == "above") {
            kind = RelationKind::above;
            ++pos;
        } else if (words[pos] == "below") {
            kind = RelationKind::below;
            ++pos;
        } else {
            kind = words[pos] == "left" ? RelationKind::left_of : RelationKind::right_of;
            ++pos;
            const std::string& of = require_token(words, pos, "'of'");
            if (of != "of") {
                throw MalformedPrompt(pos, "'of'", of);
            }
            ++pos;
        }
        if (first.spec.count != 1) {
            throw MalformedPrompt(first.count_word_pos, "count 1 relation operand (a|one)",
                                  words[first.count_word_pos]);
        }
        PhraseParse second = parse_objphrase(words, pos);
        if (second.spec.count != 1) {
            throw MalformedPrompt(second.count_word_pos, "count 1 relation operand (a|one)",
                                  words[second.count_word_pos]);
        }
        spec.objects.push_back(second.spec);
        spec.relations.push_back(RelationSpec{0, kind, 1});
    } else {
        while (pos < words.size()) {
            if (words[pos] != "and") {
                throw MalformedPrompt(pos, "'and', relation, or end of prompt", words[pos]);
            }
            ++pos;
            spec.objects.push_back(parse_objphrase(words, pos).spec);
        }
    }
    if (pos != words.size()) {
        throw MalformedPrompt(pos, "end of prompt", words[pos]);
    }
    spec.category = infer_category(spec.objects, spec.relations);
    return spec;
}

namespace {

std::string render_objphrase(const ObjectSpec& o) {
    std::string out = o.count == 1 ? "a" : kCountWords[o.count];
    out += ' ';
    out += kColorNames[static_cast<int>(o.color)];
    out += ' ';
    out += o.count > 1 ? kShapeNamesPlural[static_cast<int>(o.shape)]
                       : kShapeNames[static_cast<int>(o.shape)];
    return out;
}

}  // namespace

std::string render_prompt_text(const PromptSpec& spec) {
    if (!spec.relations.empty()) {
        const RelationSpec& r = spec.relations.front();
        return render_objphrase(spec.objects[r.subject_index]) + ' ' + to_string(r.kind) + ' ' +
               render_objphrase(spec.objects[r.object_index]);
    }
    std::string out;
    for (size_t i = 0; i < spec.objects.size(); ++i) {
        if (i > 0) {
            out += " and ";
        }
        out += render_objphrase(spec.objects[i]);
    }
    return out;
}

// --- scenes ---

Scene sample_scene(const PromptSpec& spec, uint64_t seed) {
    int total = 0;
    for (const auto& o : spec.objects) {
        total += o.count;
    }
    if (total > kNumCells) {
        throw Unsatisfiable("prompt requests more objects than grid cells");
    }
    Rng rng(seed);
    constexpr int kMaxAttempts = 10000;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        std::array<int, kNumCells> free_cells;
        for (int i = 0; i < kNumCells; ++i) {
            free_cells[i] = i;
        }
        int free_count = kNumCells;
        Scene scene;
        scene.objects.reserve(total);
        for (const auto& o : spec.objects) {
            for (int k = 0; k < o.count; ++k) {
                const int pick = static_cast<int>(rng.next_below(static_cast<uint64_t>(free_count)));
                const int cell = free_cells[pick];
                free_cells[pick] = free_cells[--free_count];
                scene.objects.push_back(PlacedObject{o.shape, o.color, cell / kGridCells,
                                                     cell % kGridCells});
            }
        }
        scene.normalize();
        if (check(spec, scene).all_pass()) {
            return scene;
        }
    }
    throw Unsatisfiable("no satisfying placement within attempt budget for '" +
                        render_prompt_text(spec) + "'");
}

PromptSpec sample_prompt_spec(PromptCategory category, Rng& rng) {
    auto rand_shape = [&rng] { return static_cast<Shape>(rng.next_below(kNumShapes)); };
    auto rand_color = [&rng] { return static_cast<Color>(rng.next_below(kNumColors)); };
    auto other_shape = [&rng](Shape s) {
        return static_cast<Shape>((static_cast<int>(s) + 1 + rng.next_below(kNumShapes - 1)) %
                                  kNumShapes);
    };
    auto other_color = [&rng](Color c) {
        return static_cast<Color>((static_cast<int>(c) + 1 + rng.next_below(kNumColors - 1)) %
                                  kNumColors);
    };

    PromptSpec spec;
    switch (category) {
        case PromptCategory::single_object:
            spec.objects.push_back({rand_shape(), rand_color(), 1});
            break;
        case PromptCategory::two_object: {
            const Shape s0 = rand_shape();
            const Color c = rand_color();
            spec.objects.push_back({s0, c, 1});
            spec.objects.push_back({other_shape(s0), c, 1});
            break;
        }
        case PromptCategory::counting:
            spec.objects.push_back(
                {rand_shape(), rand_color(), 2 + static_cast<int>(rng.next_below(5))});
            break;
        case PromptCategory::colors: {
            const Shape s = rand_shape();
            const Color c0 = rand_color();
            spec.objects.push_back({s, c0, 1});
            spec.objects.push_back({s, other_color(c0), 1});
            break;
        }
        case PromptCategory::position: {
            const Shape s0 = rand_shape();
            const Color c0 = rand_color();
            Shape s1 = rand_shape();
            Color c1 = rand_color();
            while (s1 == s0 && c1 == c0) {  // operands must be distinguishable
                s1 = rand_shape();
                c1 = rand_color();
            }
            spec.objects.push_back({s0, c0, 1});
            spec.objects.push_back({s1, c1, 1});
            spec.relations.push_back(
                {0, static_cast<RelationKind>(rng.next_below(4)), 1});
            break;
        }
        case PromptCategory::attr_binding: {
            const Shape s0 = rand_shape();
            const Color c0 = rand_color();
            spec.objects.push_back({s0, c0, 1});
            spec.objects.push_back({other_shape(s0), other_color(c0), 1});
            break;
        }
    }
    spec.category = infer_category(spec.objects, spec.relations);
    return spec;
}

RasterImage render(const Scene& scene) {
    RasterImage img;
    for (const auto& obj : scene.objects) {
        const auto& tmpl = shape_template(obj.shape);
        const auto rgb = color_rgb(obj.color);
        const int x0 = obj.cell_col * kCellPixels;
        const int y0 = obj.cell_row * kCellPixels;
        for (int y = 0; y < kCellPixels; ++y) {
            for (int x = 0; x < kCellPixels; ++x) {
                if (tmpl[y * kCellPixels + x]) {
                    img.at(x0 + x, y0 + y, 0) = rgb[0];
                    img.at(x0 + x, y0 + y, 1) = rgb[1];
                    img.at(x0 + x, y0 + y, 2) = rgb[2];
                }
            }
        }
    }
    return img;
}

Scene detect_scene(const RasterImage& image, int tolerance) {
    Scene scene;
    for (int row = 0; row < kGridCells; ++row) {
        for (int col = 0; col < kGridCells; ++col) {
            const int x0 = col * kCellPixels;
            const int y0 = row * kCellPixels;
            int best_matches = -1;
            Shape best_shape = Shape::circle;
            Color best_color = Color::red;
            for (int s = 0; s < kNumShapes; ++s) {
                const auto& tmpl = all_templates()[s];
                for (int c = 0; c < kNumColors; ++c) {
                    const auto rgb = kPalette[c];
                    int matches = 0;
                    for (int y = 0; y < kCellPixels; ++y) {
                        for (int x = 0; x < kCellPixels; ++x) {
                            const bool on = tmpl[y * kCellPixels + x] != 0;
                            bool ok = true;
                            for (int ch = 0; ch < 3; ++ch) {
                                const int expected = on ? rgb[ch] : 0;
                                const int got = image.at(x0 + x, y0 + y, ch);
                                if (std::abs(got - expected) > tolerance) {
                                    ok = false;
                                    break;
                                }
                            }
                            matches += ok ? 1 : 0;
                        }
                    }
                    if (matches > best_matches) {
                        best_matches = matches;
                        best_shape = static_cast<Shape>(s);
                        best_color = static_cast<Color>(c);
                    }
                }
            }
            if (best_matches * 5 >= kCellPixels * kCellPixels * 4) {  // >= 0.8 match fraction
                scene.objects.push_back(PlacedObject{best_shape, best_color, row, col});
            }
        }
    }
    return scene;  // already in canonical row-major order
}

namespace {

bool relation_holds(RelationKind kind, const PlacedObject& subject, const PlacedObject& object) {
    switch (kind) {
        case RelationKind::left_of: return subject.cell_col < object.cell_col;
        case RelationKind::right_of: return subject.cell_col > object.cell_col;
        case RelationKind::above: return subject.cell_row < object.cell_row;
        case RelationKind::below: return subject.cell_row > object.cell_row;
    }
    return false;
}

}  // namespace

ConstraintReport check(const PromptSpec& spec, const Scene& scene) {
    ConstraintReport report;
    for (size_t i = 0; i < spec.objects.size(); ++i) {
        const ObjectSpec& o = spec.objects[i];
        int observed = 0;
        for (const auto& p : scene.objects) {
            if (p.shape == o.shape && p.color == o.color) {
                ++observed;
            }
        }
        report.records.push_back(ConstraintRecord{ConstraintRecord::Kind::object_multiplicity,
                                                  static_cast<int>(i), observed == o.count,
                                                  o.count, observed});
    }
    for (size_t j = 0; j < spec.relations.size(); ++j) {
        const RelationSpec& r = spec.relations[j];
        const ObjectSpec& so = spec.objects[r.subject_index];
        const ObjectSpec& oo = spec.objects[r.object_index];
        const PlacedObject* subject = nullptr;
        const PlacedObject* object = nullptr;
        int subject_count = 0;
        int object_count = 0;
        for (const auto& p : scene.objects) {
            if (p.shape == so.shape && p.color == so.color) {
                subject = &p;
                ++subject_count;
            }
            if (p.shape == oo.shape && p.color == oo.color) {
                object = &p;
                ++object_count;
            }
        }
        const bool pass = subject_count == 1 && object_count == 1 &&
                          relation_holds(r.kind, *subject, *object);
        report.records.push_back(ConstraintRecord{ConstraintRecord::Kind::relation,
                                                  static_cast<int>(j), pass, 0, 0});
    }
    int extras = 0;
    for (const auto& p : scene.objects) {
        bool referenced = false;
        for (const auto& o : spec.objects) {
            if (p.shape == o.shape && p.color == o.color) {
                referenced = true;
                break;
            }
        }
        extras += referenced ? 0 : 1;
    }
    report.records.push_back(
        ConstraintRecord{ConstraintRecord::Kind::no_extras, -1, extras == 0, 0, extras});

    int passes = 0;
    for (const auto& rec : report.records) {
        passes += rec.pass ? 1 : 0;
    }
    report.alignment_score = static_cast<double>(passes) / static_cast<double>(report.records.size());
    return report;
}

// --- PPM persistence ---

void write_ppm(const RasterImage& image, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out << "P6\n" << kImageSize << ' ' << kImageSize << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) {
        throw IoError("short write: " + path);
    }
}

RasterImage read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open for reading: " + path);
    }
    std::string magic;
    int w = 0;
    int h = 0;
    int maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || w != kImageSize || h != kImageSize || maxval != 255) {
        throw IoError("unsupported PPM header in " + path);
    }
    in.get();  // single whitespace after maxval
    RasterImage img;
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!in) {
        throw IoError("short read: " + path);
    }
    return img;
}

}  // namespace ded
