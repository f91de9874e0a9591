#include "prism/steering.hpp"

#include <cstdio>

namespace prism::steering {

void apply_edit_in_place(std::span<double> x, const HeadProjection& proj, double g) {
    if (x.size() != proj.basis.dim()) {
        throw learner::LearnerError("edit: vector dim " + std::to_string(x.size()) + " does not match basis dim " +
                                    std::to_string(proj.basis.dim()));
    }
    const double gw = g * proj.weight;
    if (gw == 0.0 || proj.rank() == 0) return;
    const std::size_t k = proj.rank();
    std::vector<double> coeff(k);
    for (std::size_t i = 0; i < k; ++i) coeff[i] = linalg::dot(proj.basis.vector(i), x) * gw;
    std::vector<double> delta(x.size(), 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        auto b = proj.basis.vector(i);
        for (std::size_t j = 0; j < x.size(); ++j) delta[j] += coeff[i] * b[j];
    }
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += delta[j];
}

std::vector<double> apply_key_edit(std::span<const double> k, const HeadProjection& proj, double g_k) {
    std::vector<double> out(k.begin(), k.end());
    apply_edit_in_place(out, proj, g_k);
    return out;
}

std::vector<double> apply_value_edit(std::span<const double> v, const HeadProjection& proj, double g_v) {
    std::vector<double> out(v.begin(), v.end());
    apply_edit_in_place(out, proj, g_v);
    return out;
}

SteeringHook::SteeringHook(const SteeringPlan& plan, HighlightMask mask)
    : plan_(&plan),
      mask_(std::move(mask)),
      keys_on_(plan.g_k != 0.0),
      values_on_(plan.g_v != 0.0 && plan.has_values()) {
    auto scan = [&](const std::vector<HeadProjection>& heads, double g) {
        for (const auto& hp : heads) {
            if (hp.rank() == 0 || 1.0 + g * hp.weight > 0.0) continue;
            char buf[160];
            std::snprintf(buf, sizeof buf, "%s L%zu H%zu: 1 + g*w = %.6g <= 0, subspace component flips sign",
                          contrastive::to_string(hp.channel), hp.layer, hp.head, 1.0 + g * hp.weight);
            warnings_.emplace_back(buf);
        }
    };
    if (keys_on_) scan(plan.key_heads, plan.g_k);
    if (values_on_) scan(plan.value_heads, plan.g_v);
}

void SteeringHook::edit_key(std::size_t layer, std::size_t head, std::span<double> key) const {
    if (!keys_on_) return;
    apply_edit_in_place(key, plan_->key_head(layer, head), plan_->g_k);
}

void SteeringHook::edit_value(std::size_t layer, std::size_t head, std::span<double> value) const {
    if (!values_on_) return;
    apply_edit_in_place(value, plan_->value_head(layer, head), plan_->g_v);
}

SteeringHook make_hook(const SteeringPlan& plan, HighlightMask mask, const model::ModelConfig& model) {
    plan.validate();
    if (plan.n_layers != model.n_layers || plan.n_heads != model.n_heads || plan.head_dim != model.head_dim) {
        throw learner::LearnerError("plan dims (L=" + std::to_string(plan.n_layers) + ", n_h=" +
                                    std::to_string(plan.n_heads) + ", d=" + std::to_string(plan.head_dim) +
                                    ") do not match the model");
    }
    return SteeringHook(plan, std::move(mask));
}

}  // namespace prism::steering
