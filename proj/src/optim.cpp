#include "otl/optim.hpp"

#include "otl/errors.hpp"

namespace otl {

void Sgd::step(ParameterSet& params, const Gradients& grads) {
    for (const auto& [name, p] : params) {
        auto it = grads.find(name);
        if (it == grads.end()) throw KeyError("no gradient for parameter '" + name + "'");
        if (it->second.shape() != p.shape()) throw ShapeError("gradient shape mismatch for '" + name + "'");
    }
    for (auto& [name, p] : params) {
        const Tensor& g = grads.at(name);
        auto [vit, inserted] = velocity_.try_emplace(name, p.shape());
        Tensor& v = vit->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = momentum_ * v[i] - lr_ * g[i];
            p[i] += v[i];
        }
        if (!p.all_finite()) throw NumericError("parameter '" + name + "' diverged");
    }
}

}  // namespace otl
