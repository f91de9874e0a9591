#pragma once

#include <span>
#include <string>
#include <vector>

#include "prism/learner.hpp"
#include "prism/model.hpp"

namespace prism::steering {

using learner::HeadProjection;
using learner::SteeringPlan;
using model::HighlightMask;

// x + g·w·B(Bᵀx). Returns x unchanged (bit for bit) when g·w = 0 or rank = 0.
std::vector<double> apply_key_edit(std::span<const double> k, const HeadProjection& proj, double g_k);
std::vector<double> apply_value_edit(std::span<const double> v, const HeadProjection& proj, double g_v);
void apply_edit_in_place(std::span<double> x, const HeadProjection& proj, double g);

class SteeringHook final : public model::KvHook {
public:
    SteeringHook(const SteeringPlan& plan, HighlightMask mask);

    const HighlightMask& mask() const override { return mask_; }
    void edit_key(std::size_t layer, std::size_t head, std::span<double> key) const override;
    void edit_value(std::size_t layer, std::size_t head, std::span<double> value) const override;

    bool keys_enabled() const { return keys_on_; }
    bool values_enabled() const { return values_on_; }
    const SteeringPlan& plan() const { return *plan_; }
    // One entry per head whose subspace factor 1 + g·w is ≤ 0 (sign flip).
    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    const SteeringPlan* plan_;
    HighlightMask mask_;
    bool keys_on_;
    bool values_on_;
    std::vector<std::string> warnings_;
};

// The plan must outlive the hook. Throws when the plan does not match the model.
SteeringHook make_hook(const SteeringPlan& plan, HighlightMask mask, const model::ModelConfig& model);

}  // namespace prism::steering
