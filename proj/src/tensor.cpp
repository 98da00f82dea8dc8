#include "forge/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "forge/rng.hpp"

namespace forge {

std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        FORGE_CHECK(d >= 0, "negative extent in shape ", shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<std::int64_t> contiguous_strides(const Shape& shape) {
    std::vector<std::int64_t> st(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * shape[i + 1];
    return st;
}

void TensorNode::ensure_grad() {
    if (has_grad()) return;
    if (dtype == Dtype::f32)
        grad = std::vector<float>(static_cast<std::size_t>(numel()), 0.0f);
    else
        grad = std::vector<double>(static_cast<std::size_t>(numel()), 0.0);
}

namespace {

thread_local bool g_grad_enabled = true;

NodePtr new_node(Shape shape, Dtype dt) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->dtype = dt;
    std::size_t count = static_cast<std::size_t>(n->numel());
    if (dt == Dtype::f32)
        n->data = std::vector<float>(count, 0.0f);
    else
        n->data = std::vector<double>(count, 0.0);
    return n;
}

} // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(Shape shape, Dtype dt, bool requires_grad) {
    auto n = new_node(std::move(shape), dt);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double value, Dtype dt) {
    auto n = new_node(std::move(shape), dt);
    if (dt == Dtype::f32)
        std::fill(n->vec<float>().begin(), n->vec<float>().end(), static_cast<float>(value));
    else
        std::fill(n->vec<double>().begin(), n->vec<double>().end(), value);
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, Dtype dt) { return full(Shape{}, value, dt); }

Tensor Tensor::from_values(Shape shape, const std::vector<double>& values, Dtype dt, bool requires_grad) {
    auto t = zeros(std::move(shape), dt, requires_grad);
    FORGE_CHECK(static_cast<std::int64_t>(values.size()) == t.numel(), "from_values: ", values.size(),
                " values for shape ", shape_str(t.shape()));
    if (dt == Dtype::f32) {
        auto dst = t.data<float>();
        for (std::size_t i = 0; i < values.size(); ++i) dst[i] = static_cast<float>(values[i]);
    } else {
        auto dst = t.data<double>();
        std::copy(values.begin(), values.end(), dst.begin());
    }
    return t;
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::uint64_t seed, std::uint64_t stream,
                       Dtype dt, bool requires_grad) {
    auto t = zeros(std::move(shape), dt, requires_grad);
    std::int64_t n = t.numel();
    if (dt == Dtype::f32) {
        auto dst = t.data<float>();
        for (std::int64_t i = 0; i < n; ++i)
            dst[i] = static_cast<float>(lo + (hi - lo) * uniform_at(seed, stream, static_cast<std::uint64_t>(i)));
    } else {
        auto dst = t.data<double>();
        for (std::int64_t i = 0; i < n; ++i)
            dst[i] = lo + (hi - lo) * uniform_at(seed, stream, static_cast<std::uint64_t>(i));
    }
    return t;
}

std::int64_t Tensor::dim(int i) const {
    int r = rank();
    if (i < 0) i += r;
    FORGE_CHECK(i >= 0 && i < r, "dim index ", i, " out of range for shape ", shape_str(shape()));
    return node_->shape[static_cast<std::size_t>(i)];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
    FORGE_CHECK(idx.size() == shape().size(), "index rank mismatch");
    auto st = contiguous_strides(shape());
    std::int64_t flat = 0;
    std::size_t k = 0;
    for (auto i : idx) flat += i * st[k++];
    return at_flat(flat);
}

double Tensor::at_flat(std::int64_t i) const {
    if (dtype() == Dtype::f32) return static_cast<double>(node_->vec<float>()[static_cast<std::size_t>(i)]);
    return node_->vec<double>()[static_cast<std::size_t>(i)];
}

double Tensor::item() const {
    FORGE_CHECK(numel() == 1, "item() on tensor of shape ", shape_str(shape()));
    return at_flat(0);
}

std::vector<double> Tensor::to_doubles() const {
    std::vector<double> out(static_cast<std::size_t>(numel()));
    if (dtype() == Dtype::f32) {
        const auto& v = node_->vec<float>();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(v[i]);
    } else {
        out = node_->vec<double>();
    }
    return out;
}

Tensor Tensor::grad() const {
    if (!node_ || !node_->has_grad()) return Tensor();
    auto n = std::make_shared<TensorNode>();
    n->shape = node_->shape;
    n->dtype = node_->dtype;
    n->data = node_->grad;
    return Tensor(std::move(n));
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node_->shape;
    n->dtype = node_->dtype;
    n->data = node_->data;
    return Tensor(std::move(n));
}

Tensor Tensor::clone_data() const {
    return detach(); // buffers are value types; the variant copy is a deep copy
}

Tensor Tensor::to(Dtype dt) const {
    if (dt == dtype()) return clone_data();
    auto out = zeros(shape(), dt, false);
    std::int64_t n = numel();
    if (dt == Dtype::f64) {
        const auto& src = node_->vec<float>();
        auto dst = out.data<double>();
        for (std::int64_t i = 0; i < n; ++i) dst[i] = static_cast<double>(src[i]);
    } else {
        const auto& src = node_->vec<double>();
        auto dst = out.data<float>();
        for (std::int64_t i = 0; i < n; ++i) dst[i] = static_cast<float>(src[i]);
    }
    return out;
}

void Tensor::backward() {
    FORGE_CHECK(numel() == 1, "backward() requires a scalar, got shape ", shape_str(shape()));
    FORGE_CHECK(node_->requires_grad, "backward() on a tensor that does not require grad");

    // Topological order over the subgraph that requires grad.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    if (node_->dtype == Dtype::f32)
        node_->grad_vec<float>()[0] = 1.0f;
    else
        node_->grad_vec<double>()[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
    }
}

Tensor make_op_result(Shape shape, Dtype dt, std::vector<Tensor> parents, BackwardFn backward,
                      const char* op_name) {
    auto t = Tensor::zeros(std::move(shape), dt, false);
    bool needs = false;
    if (grad_enabled())
        for (const auto& p : parents)
            if (p.requires_grad()) needs = true;
    if (needs) {
        t.n().requires_grad = true;
        t.n().parents.reserve(parents.size());
        for (auto& p : parents) t.n().parents.push_back(p.node());
        t.n().backward_fn = std::move(backward);
        t.n().op_name = op_name;
    }
    return t;
}

void accumulate_grad(TensorNode& p, const Buffer& contribution) {
    p.ensure_grad();
    if (p.dtype == Dtype::f32) {
        auto& g = p.grad_vec<float>();
        const auto& c = std::get<std::vector<float>>(contribution);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c[i];
    } else {
        auto& g = p.grad_vec<double>();
        const auto& c = std::get<std::vector<double>>(contribution);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c[i];
    }
}

} // namespace forge
