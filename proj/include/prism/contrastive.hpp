#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "prism/model.hpp"
#include "prism/vocab.hpp"

namespace prism::contrastive {

using linalg::Matrix;

class ContrastiveError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ContrastiveTriplet {
    std::vector<TokenId> context;
    std::vector<TokenId> relevant;
    std::vector<TokenId> irrelevant;

    void validate() const;
    friend bool operator==(const ContrastiveTriplet&, const ContrastiveTriplet&) = default;
};

constexpr std::size_t kFactsPerContext = 3;

// n_pairs context pairs, each context holding kFactsPerContext facts over
// subjects not shared with its partner. Pair p contributes (A, qA, qB) and
// (B, qB, qA), in that order.
std::vector<ContrastiveTriplet> generate_triplets(std::uint64_t seed, std::size_t n_pairs,
                                                  const Vocabulary& vocab = Vocabulary::standard());

// One line per triplet: three tab-separated lists of space-separated decimal ids.
std::string serialize_triplets(std::span<const ContrastiveTriplet> triplets);
std::vector<ContrastiveTriplet> parse_triplets(const std::string& text);
void save_triplets(std::span<const ContrastiveTriplet> triplets, const std::filesystem::path& path);
std::vector<ContrastiveTriplet> load_triplets(const std::filesystem::path& path);

// FNV-1a 64 over the serialized triplet bytes, then the model seed's 8 bytes.
std::uint64_t data_fingerprint(std::span<const ContrastiveTriplet> triplets, std::uint64_t model_seed);
std::uint64_t data_fingerprint_bytes(const std::string& bytes, std::uint64_t model_seed);

enum class Channel : std::uint8_t { Key = 0, Value = 1 };

const char* to_string(Channel c);

struct BankEntry {
    Matrix h;        // context only
    Matrix h_plus;   // context + relevant question
    Matrix h_minus;  // context + irrelevant question
};

struct RepresentationBank {
    Channel channel = Channel::Key;
    std::size_t n_samples = 0;
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t head_dim = 0;
    std::vector<BankEntry> entries;  // layer-major

    const BankEntry& at(std::size_t layer, std::size_t head) const;
    BankEntry& at(std::size_t layer, std::size_t head);
};

// Three unsteered forwards per triplet; row i of every matrix is the
// channel's vector at the final prompt token of triplet i.
RepresentationBank extract_bank(const model::ToyModel& model, std::span<const ContrastiveTriplet> triplets,
                                Channel channel);

// Both channels from a single set of forwards.
std::pair<RepresentationBank, RepresentationBank> extract_banks(const model::ToyModel& model,
                                                                std::span<const ContrastiveTriplet> triplets);

}  // namespace prism::contrastive
