#include "pam/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace pam {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? ", " : "") << shape[i];
    os << ')';
    return os.str();
}

std::vector<double>& detail::Node::grad_buffer()
{
    if (grad.empty())
        grad.assign(value.size(), 0.0);
    return grad;
}

namespace {

void check_shape(const Shape& shape, std::size_t count)
{
    if (shape.size() > 4)
        throw ShapeError("tensor rank must be at most 4, got " + std::to_string(shape.size()));
    for (std::size_t extent : shape)
        if (extent == 0)
            throw ShapeError("tensor extents must be positive, got " + to_string(shape));
    if (numel(shape) != count)
        throw ShapeError("shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                         " values, data has " + std::to_string(count));
}

} // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad)
{
    const std::size_t n = pam::numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad)
{
    check_shape(shape, values.size());
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad)
{
    return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const
{
    if (!node_)
        throw std::logic_error("use of an undefined tensor");
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const
{
    const Shape& s = shape();
    if (axis >= s.size())
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
    return s[axis];
}

std::span<const double> Tensor::data() const
{
    shape();
    return node_->value;
}

std::span<double> Tensor::mutable_data()
{
    shape();
    if (!node_->is_leaf)
        throw std::logic_error("in-place write to a non-leaf tensor");
    return node_->value;
}

double Tensor::item() const
{
    if (numel() != 1)
        throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
}

bool Tensor::requires_grad() const
{
    shape();
    return node_->requires_grad;
}

void Tensor::set_requires_grad(bool flag)
{
    shape();
    if (!node_->is_leaf)
        throw std::logic_error("requires_grad can only be changed on leaves");
    node_->requires_grad = flag;
    if (!flag)
        node_->grad.clear();
}

bool Tensor::is_leaf() const
{
    shape();
    return node_->is_leaf;
}

bool Tensor::has_grad() const
{
    return node_ && !node_->grad.empty();
}

std::span<const double> Tensor::grad() const
{
    if (!has_grad())
        throw std::logic_error("tensor has no gradient");
    return node_->grad;
}

std::span<double> Tensor::mutable_grad()
{
    shape();
    return node_->grad_buffer();
}

void Tensor::zero_grad()
{
    if (node_)
        node_->grad.clear();
}

void Tensor::backward() const
{
    if (numel() != 1)
        throw ShapeError("backward() needs a scalar output, got shape " + to_string(shape()));
    if (!node_->requires_grad)
        throw std::logic_error("backward() on a tensor that does not require grad");

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [current, next] = stack.back();
        if (next < current->parents.size()) {
            detail::Node* parent = current->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(current);
            stack.pop_back();
        }
    }

    for (detail::Node* n : order)
        if (!n->is_leaf)
            n->grad.assign(n->value.size(), 0.0);
    node_->grad_buffer()[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if (!(*it)->is_leaf && (*it)->backward)
            (*it)->backward(**it);
}

Tensor Tensor::detach() const
{
    return from(shape(), node_->value, false);
}

bool grad_enabled()
{
    return g_grad_enabled;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled)
{
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard()
{
    g_grad_enabled = previous_;
}

Tensor detail::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                           std::function<void(Node& self)> backward)
{
    for (double v : values)
        if (!std::isfinite(v))
            throw std::domain_error("non-finite value produced by a primitive");
    Tensor out = Tensor::from(std::move(shape), std::move(values), false);
    bool needs = false;
    if (g_grad_enabled)
        for (const Tensor& t : inputs)
            needs = needs || t.requires_grad();
    if (!needs)
        return out;
    Node& n = *out.node();
    n.requires_grad = true;
    n.is_leaf = false;
    for (Tensor& t : inputs)
        n.parents.push_back(t.node());
    n.backward = std::move(backward);
    return out;
}

} // namespace pam
