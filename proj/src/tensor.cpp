#include "hctx/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hctx {

const char* dtype_name(DType dt) {
    return dt == DType::F32 ? "f32" : "f64";
}

std::string format_shape(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0) throw std::invalid_argument("tensor extent must be positive");
        n *= e;
    }
    return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::size_t> shape, DType dt) {
    Tensor t;
    auto n = t.node();
    n->values.assign(shape_numel(shape), 0.0);
    n->shape = std::move(shape);
    n->dtype = dt;
    return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, DType dt) {
    Tensor t = zeros(std::move(shape), dt);
    double v = dt == DType::F32 ? static_cast<double>(static_cast<float>(value))
                                : value;
    for (auto& x : t.node()->values) x = v;
    return t;
}

Tensor Tensor::from_values(std::vector<std::size_t> shape,
                           std::vector<double> values, DType dt) {
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                    " does not match shape " + format_shape(shape));
    }
    Tensor t;
    auto n = t.node();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->dtype = dt;
    if (dt == DType::F32) {
        for (auto& x : n->values) x = static_cast<double>(static_cast<float>(x));
    }
    return t;
}

Tensor Tensor::scalar(double value, DType dt) {
    return from_values({}, {value}, dt);
}

Tensor Tensor::randn(std::vector<std::size_t> shape, std::mt19937_64& rng,
                     double stddev, DType dt) {
    Tensor t = zeros(std::move(shape), dt);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& x : t.node()->values) {
        double v = dist(rng);
        x = dt == DType::F32 ? static_cast<double>(static_cast<float>(v)) : v;
    }
    return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= rank()) throw std::invalid_argument("axis out of range");
    return node_->shape[axis];
}

double Tensor::value() const {
    if (numel() != 1) {
        throw std::invalid_argument("value() requires a scalar tensor, got shape " +
                                    format_shape(shape()));
    }
    return node_->values[0];
}

double Tensor::operator()(std::size_t i, std::size_t j) const {
    return node_->values[i * node_->shape[1] + j];
}

std::vector<double>& Tensor::grad() {
    if (node_->grad.empty()) node_->grad.assign(numel(), 0.0);
    return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) {
        throw std::runtime_error("gradient not populated; call backward first");
    }
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detached() const {
    Tensor t;
    auto n = t.node();
    n->shape = node_->shape;
    n->values = node_->values;
    n->dtype = node_->dtype;
    return t;
}

void GradTape::record(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
}

void GradTape::backward(const Tensor& loss) {
    if (consumed_) {
        throw std::runtime_error("tape already consumed; build a new tape before "
                                 "calling backward again");
    }
    if (loss.numel() != 1) {
        throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                    format_shape(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw std::runtime_error("loss is detached from the recorded graph");
    }
    consumed_ = true;
    Tensor seed = loss;
    seed.grad()[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

}  // namespace hctx
