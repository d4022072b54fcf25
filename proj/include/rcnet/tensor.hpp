#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rcnet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape &shape) noexcept;
std::string to_string(const Shape &shape);

template <typename Real>
class BasicTensor;

namespace detail {

// One vertex of the recorded operation graph. Inputs are held strongly so a
// loss tensor keeps everything it depends on alive until it is dropped.
template <typename Real>
struct Node {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad = false;
    bool backward_done = false;
    const char *op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node &)> backward_fn;

    bool is_leaf() const noexcept { return !backward_fn; }

    std::vector<Real> &ensure_grad()
    {
        if (grad.empty())
            grad.assign(data.size(), Real(0));
        return grad;
    }
};

template <typename Real>
using NodePtr = std::shared_ptr<Node<Real>>;

// Builds an op output. The result tracks gradients iff any input does; the
// backward closure and input references are only kept in that case. Throws
// NumericDomainError if `data` holds a non-finite value.
template <typename Real>
BasicTensor<Real> make_result(const char *op, Shape shape, std::vector<Real> data,
                              std::vector<NodePtr<Real>> inputs,
                              std::function<void(Node<Real> &)> backward_fn);

} // namespace detail

/// Dense row-major tensor with optional reverse-mode gradient tracking.
///
/// Copies are shallow: two BasicTensor objects may refer to the same node.
/// Values are fixed once an op has produced them; only leaves (parameters,
/// inputs) may be written through mutable_data(), and only while no graph
/// built from them is still pending a backward pass.
template <typename Real>
class BasicTensor {
public:
    using value_type = Real;

    BasicTensor() = default;

    static BasicTensor zeros(Shape shape, bool requires_grad = false);
    static BasicTensor full(Shape shape, Real value, bool requires_grad = false);
    static BasicTensor from(Shape shape, std::vector<Real> data, bool requires_grad = false);
    static BasicTensor scalar(Real value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape &shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return data().size(); }

    std::span<const Real> data() const;
    std::span<Real> mutable_data();
    Real item() const;
    Real at(std::size_t flat_index) const { return data()[flat_index]; }

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const Real> grad() const;
    void zero_grad();

    // New leaf holding a copy of the values, detached from any graph.
    BasicTensor detach() const;
    template <typename Other>
    BasicTensor<Other> cast() const;

    void backward() const;

    const detail::NodePtr<Real> &node() const noexcept { return node_; }
    explicit BasicTensor(detail::NodePtr<Real> node) : node_(std::move(node)) {}

private:
    detail::NodePtr<Real> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Propagates d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient. Leaf gradients accumulate across graphs. Each graph may only be
/// differentiated once until reset_graph() is called on its root.
template <typename Real>
void backward(const BasicTensor<Real> &loss);

/// Clears leaf gradients reachable from `loss` and re-arms it for backward().
template <typename Real>
void reset_graph(const BasicTensor<Real> &loss);

template <typename Real>
template <typename Other>
BasicTensor<Other> BasicTensor<Real>::cast() const
{
    auto src = data();
    std::vector<Other> out(src.begin(), src.end());
    return BasicTensor<Other>::from(shape(), std::move(out), requires_grad());
}

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

} // namespace rcnet
