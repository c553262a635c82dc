#include "ded/vocab.hpp"

#include <fstream>

#include "ded/error.hpp"

namespace ded {

namespace {

const char* kControlTokens[] = {"<PAD>", "<BOS>", "<EOS>", "<DRAFT>", "</DRAFT>",
                                "<PROMPT_SEG>", "<DRAFT_SEG>", "<EVAL_SEG>"};

// Closed word list: prompt grammar words first, then the evaluation template
// words, then standalone punctuation.
const char* kWords[] = {
    "a", "one", "two", "three", "four", "five", "six",
    "red", "green", "blue", "yellow", "magenta", "cyan",
    "circle", "square", "triangle", "cross",
    "circles", "squares", "triangles", "crosses",
    "left", "right", "of", "above", "below", "and",
    "evaluation:", "fix:", "draft", "satisfies", "the", "prompt",
    "expected", "shows", "none", "many", "same", "row", "column",
    "extra", "objects", "missing",
    ",", ".", ";",
};

bool is_attached_punct(const std::string& s) { return s == "," || s == "." || s == ";"; }

}  // namespace

Vocabulary::Vocabulary(int draft_token_count) {
    for (const char* t : kControlTokens) {
        tokens_.emplace_back(t);
    }
    for (const char* w : kWords) {
        tokens_.emplace_back(w);
    }
    draft_base_ = static_cast<int32_t>(tokens_.size());
    draft_count_ = draft_token_count;
    for (int k = 0; k < draft_token_count; ++k) {
        tokens_.push_back("v" + std::to_string(k));
    }
    build_index();
}

void Vocabulary::build_index() {
    index_.clear();
    for (size_t i = 0; i < tokens_.size(); ++i) {
        index_[tokens_[i]] = static_cast<int32_t>(i);
    }
}

int32_t Vocabulary::id_of(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) {
        throw OutOfRange("unknown token '" + token + "'");
    }
    return it->second;
}

const std::string& Vocabulary::token_string(int32_t id) const {
    if (id < 0 || id >= size()) {
        throw OutOfRange("token id " + std::to_string(id) + " outside vocabulary");
    }
    return tokens_[static_cast<size_t>(id)];
}

std::vector<int32_t> Vocabulary::encode_words(const std::string& text) const {
    std::vector<int32_t> ids;
    std::string cur;
    auto flush = [&] {
        if (cur.empty()) {
            return;
        }
        const char last = cur.back();
        if (cur.size() > 1 && (last == ',' || last == '.' || last == ';')) {
            cur.pop_back();
            ids.push_back(id_of(cur));
            ids.push_back(id_of(std::string(1, last)));
        } else {
            ids.push_back(id_of(cur));
        }
        cur.clear();
    };
    for (char c : text) {
        if (c == ' ') {
            flush();
        } else {
            cur.push_back(c);
        }
    }
    flush();
    return ids;
}

std::string Vocabulary::decode_words(const std::vector<int32_t>& ids) const {
    std::string out;
    for (int32_t id : ids) {
        const std::string& tok = token_string(id);
        if (!out.empty() && !is_attached_punct(tok)) {
            out += ' ';
        }
        out += tok;
    }
    return out;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    for (const auto& t : tokens_) {
        out << t << '\n';
    }
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open for reading: " + path);
    }
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        v.tokens_.push_back(line);
    }
    // draft block = trailing run of vN tokens
    int32_t base = static_cast<int32_t>(v.tokens_.size());
    while (base > 0) {
        const std::string& t = v.tokens_[static_cast<size_t>(base - 1)];
        if (t.size() < 2 || t[0] != 'v' ||
            t.find_first_not_of("0123456789", 1) != std::string::npos) {
            break;
        }
        --base;
    }
    v.draft_base_ = base;
    v.draft_count_ = static_cast<int32_t>(v.tokens_.size()) - base;
    v.build_index();
    return v;
}

}  // namespace ded
