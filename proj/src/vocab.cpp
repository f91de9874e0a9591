#include "prism/vocab.hpp"

#include <cctype>
#include <sstream>
#include <stdexcept>

namespace prism {

Vocabulary Vocabulary::standard(const VocabSpec& spec) {
    if (spec.n_entities == 0 || spec.n_subjects == 0 || spec.n_values == 0) {
        throw std::invalid_argument("vocabulary needs at least one entity, subject and value");
    }
    Vocabulary v;
    v.spec_ = spec;
    v.words_ = {"<unk>", "the", "of", "is", ".", "what", "?"};
    for (std::size_t i = 0; i < spec.n_entities; ++i) v.words_.push_back("ent" + std::to_string(i));
    for (std::size_t i = 0; i < spec.n_subjects; ++i) v.words_.push_back("subj" + std::to_string(i));
    for (std::size_t i = 0; i < spec.n_values; ++i) v.words_.push_back("val" + std::to_string(i));
    for (std::size_t i = 0; i < v.words_.size(); ++i) v.index_.emplace(v.words_[i], static_cast<TokenId>(i));
    return v;
}

const std::string& Vocabulary::word(TokenId id) const {
    if (id >= words_.size()) throw std::out_of_range("token id " + std::to_string(id) + " out of vocabulary");
    return words_[id];
}

TokenId Vocabulary::id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? kUnk : it->second;
}

TokenKind Vocabulary::kind(TokenId id) const {
    if (id == kUnk || id >= words_.size()) return TokenKind::Unknown;
    if (id < kFunctionWords) return TokenKind::Function;
    std::size_t rel = id - kFunctionWords;
    if (rel < spec_.n_entities) return TokenKind::Entity;
    rel -= spec_.n_entities;
    if (rel < spec_.n_subjects) return TokenKind::Subject;
    return TokenKind::Value;
}

TokenId Vocabulary::entity(std::size_t i) const {
    if (i >= spec_.n_entities) throw std::out_of_range("entity index");
    return static_cast<TokenId>(kFunctionWords + i);
}

TokenId Vocabulary::subject(std::size_t i) const {
    if (i >= spec_.n_subjects) throw std::out_of_range("subject index");
    return static_cast<TokenId>(kFunctionWords + spec_.n_entities + i);
}

TokenId Vocabulary::value(std::size_t i) const {
    if (i >= spec_.n_values) throw std::out_of_range("value index");
    return static_cast<TokenId>(kFunctionWords + spec_.n_entities + spec_.n_subjects + i);
}

std::vector<TokenId> Vocabulary::tokenize(std::string_view text) const {
    std::string spaced;
    spaced.reserve(text.size() * 2);
    for (char c : text) {
        if (c == '.' || c == '?') {
            spaced.push_back(' ');
            spaced.push_back(c);
            spaced.push_back(' ');
        } else {
            spaced.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    std::istringstream in(spaced);
    std::vector<TokenId> out;
    for (std::string w; in >> w;) out.push_back(id(w));
    return out;
}

std::string Vocabulary::detokenize(std::span<const TokenId> tokens) const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i] < words_.size() ? words_[tokens[i]] : words_[kUnk];
    }
    return out;
}

std::vector<TokenId> Vocabulary::fact(TokenId entity, TokenId subject, TokenId value) const {
    return {kThe, entity, kOf, subject, kIs, value, kPeriod};
}

std::vector<TokenId> Vocabulary::question(TokenId entity, TokenId subject) const {
    return {kWhat, kIs, kThe, entity, kOf, subject, kQuestion};
}

std::vector<TokenId> Vocabulary::cloze(TokenId entity, TokenId subject) const {
    return {kThe, entity, kOf, subject, kIs};
}

}  // namespace prism
