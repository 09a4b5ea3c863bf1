#pragma once

#include "otl/model.hpp"

namespace otl {

/// SGD with classical momentum:  v <- momentum * v - lr * g;  p <- p + v.
class Sgd {
public:
    Sgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

    // Throws KeyError if any parameter lacks a gradient; nothing is updated then.
    void step(ParameterSet& params, const Gradients& grads);

    double lr() const { return lr_; }
    double momentum() const { return momentum_; }
    void set_lr(double lr) { lr_ = lr; }
    const ParameterSet& velocity() const { return velocity_; }

private:
    double lr_;
    double momentum_;
    ParameterSet velocity_;
};

}  // namespace otl
