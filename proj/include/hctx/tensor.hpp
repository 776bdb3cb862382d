#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace hctx {

// Element precision. Storage is always double; F32 tensors are rounded
// through float after every operation so their values are exactly
// representable in 32 bits (and serialize losslessly as f32).
enum class DType { F32, F64 };

const char* dtype_name(DType dt);

namespace detail {

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    DType dtype = DType::F64;
};

}  // namespace detail

std::string format_shape(const std::vector<std::size_t>& shape);

// Dense n-dimensional value container with an attached gradient buffer.
// Cheap to copy: a Tensor is a shared handle to its storage node.
class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

    static Tensor zeros(std::vector<std::size_t> shape, DType dt = DType::F64);
    static Tensor full(std::vector<std::size_t> shape, double value,
                       DType dt = DType::F64);
    static Tensor from_values(std::vector<std::size_t> shape,
                              std::vector<double> values,
                              DType dt = DType::F64);
    static Tensor scalar(double value, DType dt = DType::F64);
    // Gaussian init, mean 0.
    static Tensor randn(std::vector<std::size_t> shape, std::mt19937_64& rng,
                        double stddev, DType dt = DType::F64);

    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t extent(std::size_t axis) const;
    std::size_t numel() const { return node_->values.size(); }
    DType dtype() const { return node_->dtype; }

    double* data() { return node_->values.data(); }
    const double* data() const { return node_->values.data(); }
    const std::vector<double>& values() const { return node_->values; }

    // Scalar access; requires numel() == 1.
    double value() const;

    double operator()(std::size_t i) const { return node_->values[i]; }
    double operator()(std::size_t i, std::size_t j) const;
    double& mutable_at(std::size_t i) { return node_->values[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    bool has_grad() const { return !node_->grad.empty(); }
    // Allocates (zero-filled) on first use.
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad();

    // Deep copy of the values; no grad, no graph history.
    Tensor detached() const;

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node)
        : node_(std::move(node)) {}

    std::shared_ptr<detail::TensorNode> node_;
};

// Ordered record of executed operations, replayed in reverse to propagate
// adjoints. A tape may be consumed by backward() exactly once.
class GradTape {
public:
    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    void record(std::function<void()> backward_fn);

    // Seeds loss grad with 1 and replays the tape in reverse, visiting each
    // recorded operation exactly once. loss must be a scalar produced on
    // this tape.
    void backward(const Tensor& loss);

    std::size_t num_ops() const { return ops_.size(); }
    bool consumed() const { return consumed_; }

private:
    std::vector<std::function<void()>> ops_;
    bool consumed_ = false;
};

}  // namespace hctx
