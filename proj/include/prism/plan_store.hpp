#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "prism/learner.hpp"

namespace prism::store {

using learner::SteeringPlan;

inline constexpr char kMagic[8] = {'P', 'R', 'S', 'M', 'P', 'L', 'A', 'N'};
inline constexpr std::uint32_t kVersion = 1;

enum class FormatErrorKind { Io, BadMagic, VersionMismatch, Truncated, DimMismatch, NotOrthonormal, InvalidField };

const char* to_string(FormatErrorKind k);

class PlanFormatError : public std::runtime_error {
public:
    PlanFormatError(FormatErrorKind kind, const std::string& message,
                    std::optional<std::size_t> record = std::nullopt);

    FormatErrorKind kind() const { return kind_; }
    // Index of the failing head record (K records first, then V), when known.
    std::optional<std::size_t> record_index() const { return record_; }

private:
    FormatErrorKind kind_;
    std::optional<std::size_t> record_;
};

struct PlanDims {
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t head_dim = 0;
};

// Canonical little-endian bytes. Identical plans give identical bytes.
std::string encode_plan(const SteeringPlan& plan);
SteeringPlan decode_plan(const std::string& bytes, const std::optional<PlanDims>& expected = std::nullopt);

// Writes to a sibling temp file and renames it into place.
void save_plan(const SteeringPlan& plan, const std::filesystem::path& path);
SteeringPlan load_plan(const std::filesystem::path& path, const std::optional<PlanDims>& expected = std::nullopt);

// Lossy, human-readable: config, gains and per-head (D, w, k). No bases.
std::string plan_summary_json(const SteeringPlan& plan);

}  // namespace prism::store
