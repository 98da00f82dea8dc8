#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "forge/errors.hpp"

namespace forge {

enum class Dtype : std::uint8_t { f32, f64 };

inline const char* dtype_name(Dtype dt) { return dt == Dtype::f32 ? "float32" : "float64"; }

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);
// Row-major strides; broadcast dims handled by callers.
std::vector<std::int64_t> contiguous_strides(const Shape& shape);

// One dense buffer, dtype chosen at construction.
using Buffer = std::variant<std::monostate, std::vector<float>, std::vector<double>>;

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// backward_fn reads self.grad (already populated) and accumulates into the
// grads of self.parents.
using BackwardFn = std::function<void(TensorNode& self)>;

struct TensorNode {
    Shape shape;
    Dtype dtype = Dtype::f32;
    Buffer data;
    Buffer grad; // empty until first accumulation
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    BackwardFn backward_fn;
    const char* op_name = "";

    std::int64_t numel() const { return numel_of(shape); }

    template <typename T>
    std::vector<T>& vec() { return std::get<std::vector<T>>(data); }
    template <typename T>
    const std::vector<T>& vec() const { return std::get<std::vector<T>>(data); }

    bool has_grad() const { return !std::holds_alternative<std::monostate>(grad); }
    void ensure_grad(); // allocate zeroed grad buffer matching data
    template <typename T>
    std::vector<T>& grad_vec() { return std::get<std::vector<T>>(grad); }
};

// Value-semantic handle onto a shared node. Copies alias the same storage;
// data is immutable after construction except for gradient accumulation and
// optimizer updates on leaf parameters.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, Dtype dt = Dtype::f32, bool requires_grad = false);
    static Tensor full(Shape shape, double value, Dtype dt = Dtype::f32);
    static Tensor scalar(double value, Dtype dt = Dtype::f32);
    // Values converted to the target dtype; length must equal product(shape).
    static Tensor from_values(Shape shape, const std::vector<double>& values, Dtype dt = Dtype::f32,
                              bool requires_grad = false);
    static Tensor uniform(Shape shape, double lo, double hi, std::uint64_t seed, std::uint64_t stream,
                          Dtype dt = Dtype::f32, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t dim(int i) const;
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t numel() const { return node_->numel(); }
    Dtype dtype() const { return node_->dtype; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    template <typename T>
    std::span<T> data() {
        return std::span<T>(node_->vec<T>());
    }
    template <typename T>
    std::span<const T> data() const {
        return std::span<const T>(node_->vec<T>());
    }

    // Element access as double regardless of dtype (tests, small reads).
    double at(std::initializer_list<std::int64_t> idx) const;
    double at_flat(std::int64_t i) const;
    double item() const;
    std::vector<double> to_doubles() const;

    // Gradient as a detached tensor; undefined Tensor if absent.
    Tensor grad() const;
    void zero_grad() { node_->grad = std::monostate{}; }

    // Reverse-mode pass from a scalar. Seeds d(self)/d(self) = 1.
    void backward();

    Tensor detach() const;            // same buffer, no graph, no grad flag
    Tensor clone_data() const;        // deep copy of data, leaf
    Tensor to(Dtype dt) const;        // cast copy, leaf

    NodePtr node() const { return node_; }
    TensorNode& n() { return *node_; }
    const TensorNode& n() const { return *node_; }

private:
    NodePtr node_;
};

// Graph construction is suppressed inside a NoGradGuard (inference paths).
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Node factory for ops: attaches parents/backward only when gradients are
// both enabled and needed.
Tensor make_op_result(Shape shape, Dtype dt, std::vector<Tensor> parents, BackwardFn backward,
                      const char* op_name);

// Accumulate `contribution` (same dtype/size as p's data) into p's grad.
void accumulate_grad(TensorNode& p, const Buffer& contribution);

// Named trainable tensor. Name paths mirror module containment, e.g.
// "encoder.layer0.ffn.w1".
struct Parameter {
    std::string name;
    Tensor tensor;
};

} // namespace forge
