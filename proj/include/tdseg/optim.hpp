#pragma once

#include <span>
#include <string>

#include "tdseg/tensor.hpp"

namespace tdseg {

// A trainable tensor: grad always allocated, plus the SGD momentum buffer.
struct Parameter {
    std::string name;
    Tensor value;
    std::vector<double> momentum;

    Parameter() = default;
    Parameter(std::string n, Tensor t) : name(std::move(n)), value(std::move(t)) {
        value.set_requires_grad(true);
        momentum.assign(value.size(), 0.0);
    }
};

// Classic momentum update with L2 weight decay folded into the gradient:
//   buf <- momentum*buf + grad + weight_decay*param
//   param <- param - lr*buf
// Grads are zeroed afterwards. Non-finite grads abort the run.
inline void sgd_step(std::span<Parameter* const> params, double lr, double momentum,
                     double weight_decay) {
    for (Parameter* p : params) {
        const std::size_t n = p->value.size();
        const double* g = p->value.grad();
        for (std::size_t i = 0; i < n; ++i)
            if (!std::isfinite(g[i]))
                throw NumericError(p->name, "sgd_step: non-finite gradient in parameter '" +
                                                p->name + "' at index " + std::to_string(i));
        double* v = p->value.data();
        double* buf = p->momentum.data();
        for (std::size_t i = 0; i < n; ++i) {
            buf[i] = momentum * buf[i] + g[i] + weight_decay * v[i];
            v[i] -= lr * buf[i];
        }
        p->value.zero_grad();
    }
}

inline void sgd_step(const std::vector<Parameter*>& params, double lr, double momentum,
                     double weight_decay) {
    sgd_step(std::span<Parameter* const>(params.data(), params.size()), lr, momentum, weight_decay);
}

inline void zero_grads(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->value.zero_grad();
}

}  // namespace tdseg
