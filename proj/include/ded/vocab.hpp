#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace ded {

// Shared token vocabulary: a handful of control tokens, the closed word list
// covering prompts and evaluation texts, then one contiguous block of draft
// tokens v0..v{K-1} appended at the end.
class Vocabulary {
  public:
    static constexpr int32_t kPad = 0;
    static constexpr int32_t kBos = 1;
    static constexpr int32_t kEos = 2;
    static constexpr int32_t kDraftOpen = 3;
    static constexpr int32_t kDraftClose = 4;
    static constexpr int32_t kPromptSeg = 5;
    static constexpr int32_t kDraftSeg = 6;
    static constexpr int32_t kEvalSeg = 7;

    explicit Vocabulary(int draft_token_count);

    int32_t size() const { return static_cast<int32_t>(tokens_.size()); }
    int32_t draft_base() const { return draft_base_; }
    int32_t draft_count() const { return draft_count_; }
    bool is_draft_token(int32_t id) const {
        return id >= draft_base_ && id < draft_base_ + draft_count_;
    }

    int32_t id_of(const std::string& token) const;  // throws OutOfRange on unknown tokens
    const std::string& token_string(int32_t id) const;

    // Word-level encoding of prompt / evaluation text. Trailing ',' '.' ';'
    // split off as their own tokens; decode_words re-attaches them, so the
    // two functions are inverse on canonical texts.
    std::vector<int32_t> encode_words(const std::string& text) const;
    std::string decode_words(const std::vector<int32_t>& ids) const;

    // Line-delimited token list; id = line number.
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

  private:
    Vocabulary() = default;
    void build_index();

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int32_t> index_;
    int32_t draft_base_ = 0;
    int32_t draft_count_ = 0;
};

}  // namespace ded
