#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gelato/tensor.hpp"

namespace gelato {

// Handle to a value recorded on a Tape.
struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    bool valid() const noexcept { return id != npos; }
};

// Single-threaded reverse-mode recorder. A node requires a gradient iff one of
// its inputs does; leaves bound to trainable parameters are the only roots of
// that flag. Gradients therefore flow through frozen parameters (they take part
// in the chain rule) but are never stored for them.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

    Var constant(Tensor value) { return push(std::make_shared<const Tensor>(std::move(value)), false, {}, ""); }

    // Leaf bound to a named parameter. Repeated requests return the same leaf.
    Var param(const ParamSet& set, const std::string& name) {
        if (auto it = param_leaves_.find(name); it != param_leaves_.end()) return it->second;
        const bool trainable = set.trainable(name);
        Var v = push(set.share(name), trainable, {}, trainable ? name : std::string{});
        param_leaves_.emplace(name, v);
        return v;
    }

    // Records an op result. The backward closure is kept only when some input
    // requires a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
        return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
    }
    Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
        if (!value.all_finite()) throw NumericError("non-finite value produced on tape");
        bool rg = false;
        for (Var in : inputs) rg = rg || nodes_[in.id].requires_grad;
        return push(std::make_shared<const Tensor>(std::move(value)), rg, rg ? std::move(fn) : BackwardFn{}, "");
    }

    const Tensor& value(Var v) const { return *nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    Tensor& grad(Var v) {
        auto& n = nodes_.at(v.id);
        if (!n.grad) n.grad = std::make_unique<Tensor>(n.value->shape(), 0.0);
        return *n.grad;
    }

    void backward(Var loss) {
        if (value(loss).size() != 1) {
            throw DimensionError("backward needs a scalar loss, got shape " + shape_str(value(loss).shape()));
        }
        if (!requires_grad(loss)) return;
        grad(loss)[0] += 1.0;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (n.backward && n.grad) n.backward(*this, *n.grad);
        }
    }

    // Gradients for every trainable leaf recorded on this tape.
    GradStore gradients() const {
        GradStore out;
        for (const auto& n : nodes_) {
            if (n.param_name.empty()) continue;
            out.emplace(n.param_name, n.grad ? *n.grad : Tensor(n.value->shape(), 0.0));
        }
        return out;
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        std::shared_ptr<const Tensor> value;
        std::unique_ptr<Tensor> grad;
        bool requires_grad = false;
        BackwardFn backward;
        std::string param_name;
    };

    Var push(std::shared_ptr<const Tensor> value, bool rg, BackwardFn fn, std::string param_name) {
        nodes_.push_back(Node{std::move(value), nullptr, rg, std::move(fn), std::move(param_name)});
        return Var{nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    std::map<std::string, Var> param_leaves_;
};

} // namespace gelato
