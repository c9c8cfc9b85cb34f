#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>

#include "tdseg/core.hpp"

namespace tdseg {

// Dense n-d real array plus the reverse-mode bookkeeping attached to it.
// `grad` is allocated iff the tensor participates in differentiation.
// `parents` keeps every input of the op that produced this tensor alive;
// `backward_fn` accumulates (+=) into the parents' grad buffers given this
// node's grad.
struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(const TensorImpl&)> backward_fn;
};

// Shared handle to a TensorImpl. Ops take and return these by value.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl>()) {
        validate_shape(shape);
        impl_->shape = std::move(shape);
        impl_->value.assign(shape_numel(impl_->shape), fill);
        set_requires_grad(requires_grad);
    }

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl>()) {
        validate_shape(shape);
        if (shape_numel(shape) != values.size())
            throw ShapeError("tensor: " + std::to_string(values.size()) +
                             " values for shape " + shape_str(shape));
        impl_->shape = std::move(shape);
        impl_->value = std::move(values);
        set_requires_grad(requires_grad);
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return impl_->value.size(); }

    double* data() { return impl_->value.data(); }
    const double* data() const { return impl_->value.data(); }
    std::vector<double>& values() { return impl_->value; }
    const std::vector<double>& values() const { return impl_->value; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) {
        impl_->requires_grad = on;
        if (on)
            impl_->grad.assign(impl_->value.size(), 0.0);
        else
            impl_->grad.clear();
    }

    double* grad() { return impl_->requires_grad ? impl_->grad.data() : nullptr; }
    const double* grad() const { return impl_->requires_grad ? impl_->grad.data() : nullptr; }
    const std::vector<double>& grad_values() const { return impl_->grad; }
    void zero_grad() {
        for (double& g : impl_->grad) g = 0.0;
    }

    double item() const {
        if (size() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
        return impl_->value[0];
    }

    double operator[](std::size_t i) const { return impl_->value[i]; }
    double& operator[](std::size_t i) { return impl_->value[i]; }

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    static void validate_shape(const Shape& s) {
        if (s.empty()) throw ShapeError("tensor: empty shape");
        for (int d : s)
            if (d <= 0) throw ShapeError("tensor: non-positive extent in " + shape_str(s));
    }

    std::shared_ptr<TensorImpl> impl_;
};

namespace detail {

// Allocates the result of an op: requires_grad iff any input does, and the
// inputs become parents so the graph owns every buffer backward will read.
inline Tensor make_result(Shape shape, std::initializer_list<Tensor> inputs) {
    bool needs = false;
    for (const Tensor& t : inputs) needs |= t.requires_grad();
    Tensor out(std::move(shape), 0.0, needs);
    auto& impl = *out.impl();
    impl.parents.reserve(inputs.size());
    for (const Tensor& t : inputs) impl.parents.push_back(t.impl());
    return out;
}

inline Tensor make_result(Shape shape, const std::vector<Tensor>& inputs) {
    bool needs = false;
    for (const Tensor& t : inputs) needs |= t.requires_grad();
    Tensor out(std::move(shape), 0.0, needs);
    auto& impl = *out.impl();
    impl.parents.reserve(inputs.size());
    for (const Tensor& t : inputs) impl.parents.push_back(t.impl());
    return out;
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Every node of the recorded graph is
// visited exactly once, in reverse topological order; leaf grads accumulate
// (+=) into whatever they already hold.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw ShapeError("backward: loss " + shape_str(loss.shape()) + " is not scalar");
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS; recording order of parents makes it deterministic.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(loss.impl().get(), 0);
    seen.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.impl()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

}  // namespace tdseg
