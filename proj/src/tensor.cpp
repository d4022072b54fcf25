#include "rcnet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "rcnet/error.hpp"

namespace rcnet {

std::size_t numel(const Shape &shape) noexcept
{
    std::size_t n = 1;
    for (auto e : shape)
        n *= e;
    return n;
}

std::string to_string(const Shape &shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

template <typename Real>
BasicTensor<Real> make_result(const char *op, Shape shape, std::vector<Real> data,
                              std::vector<NodePtr<Real>> inputs,
                              std::function<void(Node<Real> &)> backward_fn)
{
    if (rcnet::numel(shape) != data.size())
        throw DimensionError(std::string(op) + ": data length does not match shape " + to_string(shape));
    for (Real v : data) {
        if (!std::isfinite(v))
            throw NumericDomainError(std::string(op) + ": non-finite value in result");
    }
    auto node = std::make_shared<Node<Real>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool tracked = false;
    for (const auto &in : inputs)
        tracked = tracked || in->requires_grad;
    if (tracked) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward_fn = std::move(backward_fn);
    }
    return BasicTensor<Real>(std::move(node));
}

template BasicTensor<float> make_result(const char *, Shape, std::vector<float>, std::vector<NodePtr<float>>,
                                        std::function<void(Node<float> &)>);
template BasicTensor<double> make_result(const char *, Shape, std::vector<double>, std::vector<NodePtr<double>>,
                                         std::function<void(Node<double> &)>);

} // namespace detail

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::zeros(Shape shape, bool requires_grad)
{
    return full(std::move(shape), Real(0), requires_grad);
}

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::full(Shape shape, Real value, bool requires_grad)
{
    std::vector<Real> data(rcnet::numel(shape), value);
    return from(std::move(shape), std::move(data), requires_grad);
}

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::from(Shape shape, std::vector<Real> data, bool requires_grad)
{
    if (rcnet::numel(shape) != data.size())
        throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                             to_string(shape));
    for (Real v : data)
        if (!std::isfinite(v))
            throw NumericDomainError("tensor data contains a non-finite value");
    auto node = std::make_shared<detail::Node<Real>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return BasicTensor(std::move(node));
}

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::scalar(Real value, bool requires_grad)
{
    return from(Shape{1}, {value}, requires_grad);
}

template <typename Real>
const Shape &BasicTensor<Real>::shape() const
{
    if (!node_)
        throw ContractError("use of undefined tensor");
    return node_->shape;
}

template <typename Real>
std::size_t BasicTensor<Real>::dim(std::size_t axis) const
{
    const auto &s = shape();
    if (axis >= s.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
    return s[axis];
}

template <typename Real>
std::span<const Real> BasicTensor<Real>::data() const
{
    if (!node_)
        throw ContractError("use of undefined tensor");
    return node_->data;
}

template <typename Real>
std::span<Real> BasicTensor<Real>::mutable_data()
{
    if (!node_)
        throw ContractError("use of undefined tensor");
    if (!node_->is_leaf())
        throw ContractError("only leaf tensors may be modified in place");
    return node_->data;
}

template <typename Real>
Real BasicTensor<Real>::item() const
{
    auto d = data();
    if (d.size() != 1)
        throw ContractError("item() requires a single-element tensor, got shape " + to_string(shape()));
    return d[0];
}

template <typename Real>
bool BasicTensor<Real>::requires_grad() const
{
    return node_ && node_->requires_grad;
}

template <typename Real>
void BasicTensor<Real>::set_requires_grad(bool on)
{
    if (!node_ || !node_->is_leaf())
        throw ContractError("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = on;
}

template <typename Real>
bool BasicTensor<Real>::has_grad() const
{
    return node_ && !node_->grad.empty();
}

template <typename Real>
std::span<const Real> BasicTensor<Real>::grad() const
{
    if (!has_grad())
        throw ContractError("tensor has no gradient");
    return node_->grad;
}

template <typename Real>
void BasicTensor<Real>::zero_grad()
{
    if (node_)
        node_->grad.clear();
}

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::detach() const
{
    auto d = data();
    return from(shape(), std::vector<Real>(d.begin(), d.end()), false);
}

template <typename Real>
void BasicTensor<Real>::backward() const
{
    rcnet::backward(*this);
}

namespace {

// Post-order DFS over tracked nodes; result is a valid topological order with
// the root last.
template <typename Real>
std::vector<detail::Node<Real> *> topo_order(detail::Node<Real> *root)
{
    std::vector<detail::Node<Real> *> order;
    std::unordered_set<detail::Node<Real> *> seen;
    std::vector<std::pair<detail::Node<Real> *, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto &[node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node<Real> *child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second)
                stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

} // namespace

template <typename Real>
void backward(const BasicTensor<Real> &loss)
{
    const auto &root = loss.node();
    if (!root)
        throw ContractError("backward on undefined tensor");
    if (root->data.size() != 1)
        throw ContractError("backward requires a scalar loss, got shape " + to_string(root->shape));
    if (!root->requires_grad)
        throw ContractError("backward on a tensor that does not require grad");
    if (root->backward_done)
        throw ContractError("backward already ran on this graph; call reset_graph first");

    auto order = topo_order(root.get());
    root->ensure_grad()[0] += Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node<Real> *node = *it;
        if (node->is_leaf() || node->grad.empty())
            continue;
        node->backward_fn(*node);
        // Intermediate gradients are not observable; release them.
        if (node != root.get())
            std::vector<Real>().swap(node->grad);
    }
    root->backward_done = true;
}

template <typename Real>
void reset_graph(const BasicTensor<Real> &loss)
{
    const auto &root = loss.node();
    if (!root)
        return;
    for (auto *node : topo_order(root.get()))
        node->grad.clear();
    root->backward_done = false;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void backward(const BasicTensor<float> &);
template void backward(const BasicTensor<double> &);
template void reset_graph(const BasicTensor<float> &);
template void reset_graph(const BasicTensor<double> &);

} // namespace rcnet
