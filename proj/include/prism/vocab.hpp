#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace prism {

using TokenId = std::uint32_t;

struct VocabSpec {
    std::size_t n_entities = 8;
    std::size_t n_subjects = 32;
    std::size_t n_values = 32;
};

enum class TokenKind { Unknown, Function, Entity, Subject, Value };

// Word-level toy vocabulary for the slot grammar
//   fact:     "the <entity> of <subject> is <value> ."
//   question: "what is the <entity> of <subject> ?"
// Ids are laid out as: <unk>, function words, entities, subjects, values.
class Vocabulary {
public:
    static constexpr TokenId kUnk = 0;
    static constexpr TokenId kThe = 1;
    static constexpr TokenId kOf = 2;
    static constexpr TokenId kIs = 3;
    static constexpr TokenId kPeriod = 4;
    static constexpr TokenId kWhat = 5;
    static constexpr TokenId kQuestion = 6;
    static constexpr std::size_t kFunctionWords = 7;

    static Vocabulary standard(const VocabSpec& spec = {});

    const VocabSpec& spec() const { return spec_; }
    std::size_t size() const { return words_.size(); }

    const std::string& word(TokenId id) const;
    TokenId id(std::string_view word) const;  // kUnk when absent
    TokenKind kind(TokenId id) const;

    TokenId entity(std::size_t i) const;
    TokenId subject(std::size_t i) const;
    TokenId value(std::size_t i) const;

    // Lower-cases, splits "." and "?" off as their own tokens, then splits on
    // whitespace. Unknown words map to kUnk.
    std::vector<TokenId> tokenize(std::string_view text) const;
    std::string detokenize(std::span<const TokenId> tokens) const;

    std::vector<TokenId> fact(TokenId entity, TokenId subject, TokenId value) const;
    std::vector<TokenId> question(TokenId entity, TokenId subject) const;
    // "the <entity> of <subject> is" — cloze form of the same question.
    std::vector<TokenId> cloze(TokenId entity, TokenId subject) const;

private:
    VocabSpec spec_;
    std::vector<std::string> words_;
    std::unordered_map<std::string, TokenId> index_;
};

}  // namespace prism
