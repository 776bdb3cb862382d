#include "hctx/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hctx::ops {

namespace kernels {

void mm_nn(double* c, const double* a, const double* b, std::size_t m,
           std::size_t k, std::size_t n, bool acc) {
    if (!acc) std::fill(c, c + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* ar = a + i * k;
        double* cr = c + i * n;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = ar[t];
            const double* br = b + t * n;
            for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

void mm_nt(double* c, const double* a, const double* b, std::size_t m,
           std::size_t k, std::size_t n, bool acc) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ar = a + i * k;
        double* cr = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* br = b + j * k;
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += ar[t] * br[t];
            cr[j] = acc ? cr[j] + s : s;
        }
    }
}

void mm_tn(double* c, const double* a, const double* b, std::size_t m,
           std::size_t k, std::size_t n, bool acc) {
    if (!acc) std::fill(c, c + m * n, 0.0);
    for (std::size_t t = 0; t < k; ++t) {
        const double* ar = a + t * m;
        const double* br = b + t * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = ar[i];
            double* cr = c + i * n;
            for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

}  // namespace kernels

namespace {

DType promote(DType a, DType b) {
    return (a == DType::F64 || b == DType::F64) ? DType::F64 : DType::F32;
}

void round_f32(Tensor& t) {
    double* p = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) {
        p[i] = static_cast<double>(static_cast<float>(p[i]));
    }
}

// Shared epilogue: f32 rounding, NaN policy, grad-tracking flag.
void finalize(Tensor& out, const char* op_name) {
    if (out.dtype() == DType::F32) round_f32(out);
    check_finite(out, op_name);
}

bool track(GradTape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

std::vector<double>& upstream(Tensor& out) { return out.node()->grad; }

void require_rank2(const Tensor& t, const char* op_name) {
    if (t.rank() != 2) {
        throw std::invalid_argument(std::string(op_name) + ": expected rank-2 tensor, got " +
                                    format_shape(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op_name) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op_name) + ": shape mismatch " +
                                    format_shape(a.shape()) + " vs " +
                                    format_shape(b.shape()));
    }
}

struct AxisView {
    std::size_t outer, n, inner;
};

AxisView axis_view(const std::vector<std::size_t>& shape, std::size_t axis,
                   const char* op_name) {
    if (axis >= shape.size()) {
        throw std::invalid_argument(std::string(op_name) + ": axis " +
                                    std::to_string(axis) + " out of range for " +
                                    format_shape(shape));
    }
    AxisView v{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

template <typename Fwd, typename Bwd>
Tensor unary_pointwise(GradTape* tape, const Tensor& x, const char* name,
                       Fwd fwd, Bwd dydx) {
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    const double* xi = x.data();
    double* yo = out.data();
    for (std::size_t i = 0; i < x.numel(); ++i) yo[i] = fwd(xi[i]);
    finalize(out, name);
    if (track(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor tx = x, to = out;
        tape->record([tx, to, dydx]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            auto& gx = tx.grad();
            const double* xi = tx.data();
            const double* yi = to.data();
            for (std::size_t i = 0; i < tx.numel(); ++i) {
                gx[i] += g[i] * dydx(xi[i], yi[i]);
            }
        });
    }
    return out;
}

}  // namespace

void check_finite(const Tensor& t, const char* op_name) {
    const double* p = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(p[i])) {
            throw std::runtime_error(std::string(op_name) +
                                     ": non-finite value at flat index " +
                                     std::to_string(i));
        }
    }
}

Tensor matmul(GradTape* tape, const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.extent(1) != b.extent(0)) {
        throw std::invalid_argument("matmul: inner extents differ, " +
                                    format_shape(a.shape()) + " vs " +
                                    format_shape(b.shape()));
    }
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor out = Tensor::zeros({m, n}, promote(a.dtype(), b.dtype()));
    kernels::mm_nn(out.data(), a.data(), b.data(), m, k, n, false);
    finalize(out, "matmul");
    if (track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ta = a, tb = b, to = out;
        tape->record([ta, tb, to, m, k, n]() mutable {
            if (!to.has_grad()) return;
            const double* g = upstream(to).data();
            if (ta.requires_grad()) {
                kernels::mm_nt(ta.grad().data(), g, tb.data(), m, n, k, true);
            }
            if (tb.requires_grad()) {
                kernels::mm_tn(tb.grad().data(), ta.data(), g, k, m, n, true);
            }
        });
    }
    return out;
}

Tensor transpose(GradTape* tape, const Tensor& a) {
    require_rank2(a, "transpose");
    const std::size_t m = a.extent(0), n = a.extent(1);
    Tensor out = Tensor::zeros({n, m}, a.dtype());
    const double* ai = a.data();
    double* bo = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) bo[j * m + i] = ai[i * n + j];
    }
    finalize(out, "transpose");
    if (track(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ta = a, to = out;
        tape->record([ta, to, m, n]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            auto& ga = ta.grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
            }
        });
    }
    return out;
}

Tensor add(GradTape* tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape(), promote(a.dtype(), b.dtype()));
    const double* ai = a.data();
    const double* bi = b.data();
    double* o = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) o[i] = ai[i] + bi[i];
    finalize(out, "add");
    if (track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ta = a, tb = b, to = out;
        tape->record([ta, tb, to]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            if (ta.requires_grad()) {
                auto& ga = ta.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (tb.requires_grad()) {
                auto& gb = tb.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(GradTape* tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape(), promote(a.dtype(), b.dtype()));
    const double* ai = a.data();
    const double* bi = b.data();
    double* o = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) o[i] = ai[i] - bi[i];
    finalize(out, "sub");
    if (track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ta = a, tb = b, to = out;
        tape->record([ta, tb, to]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            if (ta.requires_grad()) {
                auto& ga = ta.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (tb.requires_grad()) {
                auto& gb = tb.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(GradTape* tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape(), promote(a.dtype(), b.dtype()));
    const double* ai = a.data();
    const double* bi = b.data();
    double* o = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) o[i] = ai[i] * bi[i];
    finalize(out, "mul");
    if (track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ta = a, tb = b, to = out;
        tape->record([ta, tb, to]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            if (ta.requires_grad()) {
                auto& ga = ta.grad();
                const double* bi = tb.data();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi[i];
            }
            if (tb.requires_grad()) {
                auto& gb = tb.grad();
                const double* ai = ta.data();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai[i];
            }
        });
    }
    return out;
}

Tensor sigmoid(GradTape* tape, const Tensor& x) {
    return unary_pointwise(
        tape, x, "sigmoid",
        [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(GradTape* tape, const Tensor& x) {
    return unary_pointwise(
        tape, x, "tanh", [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(GradTape* tape, const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary_pointwise(
        tape, x, "gelu",
        [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [=](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            return cdf + v * pdf;
        });
}

Tensor scale(GradTape* tape, const Tensor& x, double c) {
    if (!std::isfinite(c)) throw std::invalid_argument("scale: non-finite factor");
    return unary_pointwise(
        tape, x, "scale", [c](double v) { return v * c; },
        [c](double, double) { return c; });
}

Tensor scalar_mul(GradTape* tape, const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) {
        throw std::invalid_argument("scalar_mul: scalar operand has shape " +
                                    format_shape(s.shape()));
    }
    const double sv = s.data()[0];
    Tensor out = Tensor::zeros(x.shape(), promote(x.dtype(), s.dtype()));
    const double* xi = x.data();
    double* o = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) o[i] = xi[i] * sv;
    finalize(out, "scalar_mul");
    if (track(tape, {&x, &s})) {
        out.set_requires_grad(true);
        Tensor tx = x, ts = s, to = out;
        tape->record([tx, ts, to, sv]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            if (tx.requires_grad()) {
                auto& gx = tx.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
            }
            if (ts.requires_grad()) {
                const double* xi = tx.data();
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xi[i];
                ts.grad()[0] += acc;
            }
        });
    }
    return out;
}

Tensor add_rows(GradTape* tape, const Tensor& x, const Tensor& b) {
    require_rank2(x, "add_rows");
    if (b.rank() != 1 || b.extent(0) != x.extent(1)) {
        throw std::invalid_argument("add_rows: bias shape " + format_shape(b.shape()) +
                                    " does not match " + format_shape(x.shape()));
    }
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    Tensor out = Tensor::zeros(x.shape(), promote(x.dtype(), b.dtype()));
    const double* xi = x.data();
    const double* bi = b.data();
    double* o = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] = xi[r * cols + c] + bi[c];
    }
    finalize(out, "add_rows");
    if (track(tape, {&x, &b})) {
        out.set_requires_grad(true);
        Tensor tx = x, tb = b, to = out;
        tape->record([tx, tb, to, rows, cols]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            if (tx.requires_grad()) {
                auto& gx = tx.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (tb.requires_grad()) {
                auto& gb = tb.grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                }
            }
        });
    }
    return out;
}

namespace {

Tensor reduce_impl(GradTape* tape, const Tensor& x, std::size_t axis, bool mean) {
    const char* name = mean ? "reduce_mean" : "reduce_sum";
    AxisView v = axis_view(x.shape(), axis, name);
    std::vector<std::size_t> out_shape;
    for (std::size_t i = 0; i < x.rank(); ++i) {
        if (i != axis) out_shape.push_back(x.extent(i));
    }
    Tensor out = Tensor::zeros(out_shape, x.dtype());
    const double* xi = x.data();
    double* o = out.data();
    const double w = mean ? 1.0 / static_cast<double>(v.n) : 1.0;
    for (std::size_t ot = 0; ot < v.outer; ++ot) {
        for (std::size_t r = 0; r < v.inner; ++r) {
            double s = 0.0;
            for (std::size_t i = 0; i < v.n; ++i) s += xi[(ot * v.n + i) * v.inner + r];
            o[ot * v.inner + r] = s * w;
        }
    }
    finalize(out, name);
    if (track(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor tx = x, to = out;
        tape->record([tx, to, v, w]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            auto& gx = tx.grad();
            for (std::size_t ot = 0; ot < v.outer; ++ot) {
                for (std::size_t r = 0; r < v.inner; ++r) {
                    const double gv = g[ot * v.inner + r] * w;
                    for (std::size_t i = 0; i < v.n; ++i) {
                        gx[(ot * v.n + i) * v.inner + r] += gv;
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace

Tensor reduce_sum(GradTape* tape, const Tensor& x, std::size_t axis) {
    return reduce_impl(tape, x, axis, false);
}

Tensor reduce_mean(GradTape* tape, const Tensor& x, std::size_t axis) {
    return reduce_impl(tape, x, axis, true);
}

Tensor softmax(GradTape* tape, const Tensor& x, std::size_t axis) {
    AxisView v = axis_view(x.shape(), axis, "softmax");
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    const double* xi = x.data();
    double* o = out.data();
    for (std::size_t ot = 0; ot < v.outer; ++ot) {
        for (std::size_t r = 0; r < v.inner; ++r) {
            const std::size_t base = ot * v.n * v.inner + r;
            double mx = xi[base];
            for (std::size_t i = 1; i < v.n; ++i) {
                mx = std::max(mx, xi[base + i * v.inner]);
            }
            double z = 0.0;
            for (std::size_t i = 0; i < v.n; ++i) {
                const double e = std::exp(xi[base + i * v.inner] - mx);
                o[base + i * v.inner] = e;
                z += e;
            }
            const double inv = 1.0 / z;
            for (std::size_t i = 0; i < v.n; ++i) o[base + i * v.inner] *= inv;
        }
    }
    finalize(out, "softmax");
    if (track(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor tx = x, to = out;
        tape->record([tx, to, v]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            auto& gx = tx.grad();
            const double* y = to.data();
            for (std::size_t ot = 0; ot < v.outer; ++ot) {
                for (std::size_t r = 0; r < v.inner; ++r) {
                    const std::size_t base = ot * v.n * v.inner + r;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < v.n; ++i) {
                        const std::size_t idx = base + i * v.inner;
                        dot += g[idx] * y[idx];
                    }
                    for (std::size_t i = 0; i < v.n; ++i) {
                        const std::size_t idx = base + i * v.inner;
                        gx[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(GradTape* tape, const Tensor& x, const Tensor& gain,
                  const Tensor& bias, double eps) {
    if (x.rank() < 1) throw std::invalid_argument("layer_norm: rank-0 input");
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    const std::size_t d = x.extent(x.rank() - 1);
    if (gain.rank() != 1 || gain.extent(0) != d || bias.rank() != 1 ||
        bias.extent(0) != d) {
        throw std::invalid_argument("layer_norm: gain/bias must be [d], d=" +
                                    std::to_string(d) + ", got " +
                                    format_shape(gain.shape()) + " and " +
                                    format_shape(bias.shape()));
    }
    const std::size_t rows = x.numel() / d;
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    const double* xi = x.data();
    const double* gi = gain.data();
    const double* bi = bias.data();
    double* o = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xi + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (row[j] - mu) * is;
            (*xhat)[r * d + j] = xh;
            o[r * d + j] = gi[j] * xh + bi[j];
        }
    }
    finalize(out, "layer_norm");
    if (track(tape, {&x, &gain, &bias})) {
        out.set_requires_grad(true);
        Tensor tx = x, tg = gain, tb = bias, to = out;
        tape->record([tx, tg, tb, to, xhat, inv_std, rows, d]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            const double* gi = tg.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* grow = g.data() + r * d;
                const double* xh = xhat->data() + r * d;
                if (tx.requires_grad()) {
                    auto& gx = tx.grad();
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = grow[j] * gi[j];
                        m1 += dxh;
                        m2 += dxh * xh[j];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    const double is = (*inv_std)[r];
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = grow[j] * gi[j];
                        gx[r * d + j] += is * (dxh - m1 - xh[j] * m2);
                    }
                }
                if (tg.requires_grad()) {
                    auto& gg = tg.grad();
                    for (std::size_t j = 0; j < d; ++j) gg[j] += grow[j] * xh[j];
                }
                if (tb.requires_grad()) {
                    auto& gb = tb.grad();
                    for (std::size_t j = 0; j < d; ++j) gb[j] += grow[j];
                }
            }
        });
    }
    return out;
}

Tensor slice_rows(GradTape* tape, const Tensor& x, std::size_t r0, std::size_t r1) {
    require_rank2(x, "slice_rows");
    if (r0 >= r1 || r1 > x.extent(0)) {
        throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) +
                                    "," + std::to_string(r1) + ") for " +
                                    format_shape(x.shape()));
    }
    const std::size_t cols = x.extent(1);
    Tensor out = Tensor::zeros({r1 - r0, cols}, x.dtype());
    std::copy(x.data() + r0 * cols, x.data() + r1 * cols, out.data());
    finalize(out, "slice_rows");
    if (track(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor tx = x, to = out;
        tape->record([tx, to, r0, cols]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            auto& gx = tx.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[r0 * cols + i] += g[i];
        });
    }
    return out;
}

Tensor slice_cols(GradTape* tape, const Tensor& x, std::size_t c0, std::size_t c1) {
    require_rank2(x, "slice_cols");
    if (c0 >= c1 || c1 > x.extent(1)) {
        throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) +
                                    "," + std::to_string(c1) + ") for " +
                                    format_shape(x.shape()));
    }
    const std::size_t rows = x.extent(0), cols = x.extent(1), w = c1 - c0;
    Tensor out = Tensor::zeros({rows, w}, x.dtype());
    const double* xi = x.data();
    double* o = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(xi + r * cols + c0, xi + r * cols + c1, o + r * w);
    }
    finalize(out, "slice_cols");
    if (track(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor tx = x, to = out;
        tape->record([tx, to, rows, cols, c0, w]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            auto& gx = tx.grad();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < w; ++j) {
                    gx[r * cols + c0 + j] += g[r * w + j];
                }
            }
        });
    }
    return out;
}

namespace {

// Rank-1 parts count as single rows.
std::size_t part_rows(const Tensor& t) {
    return t.rank() == 1 ? 1 : t.extent(0);
}

std::size_t part_cols(const Tensor& t) {
    return t.rank() == 1 ? t.extent(0) : t.extent(1);
}

}  // namespace

Tensor concat_rows(GradTape* tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const std::size_t cols = part_cols(parts[0]);
    std::size_t rows = 0;
    DType dt = parts[0].dtype();
    bool needs_grad = false;
    for (const Tensor& p : parts) {
        if (p.rank() > 2 || part_cols(p) != cols) {
            throw std::invalid_argument("concat_rows: incompatible part " +
                                        format_shape(p.shape()));
        }
        rows += part_rows(p);
        dt = promote(dt, p.dtype());
        needs_grad = needs_grad || p.requires_grad();
    }
    Tensor out = Tensor::zeros({rows, cols}, dt);
    double* o = out.data();
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        std::copy(p.data(), p.data() + p.numel(), o + off);
        off += p.numel();
    }
    finalize(out, "concat_rows");
    if (tape && needs_grad) {
        out.set_requires_grad(true);
        std::vector<Tensor> tp = parts;
        Tensor to = out;
        tape->record([tp, to]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            std::size_t off = 0;
            for (Tensor& p : tp) {
                if (p.requires_grad()) {
                    auto& gp = p.grad();
                    for (std::size_t i = 0; i < p.numel(); ++i) gp[i] += g[off + i];
                }
                off += p.numel();
            }
        });
    }
    return out;
}

Tensor concat_cols(GradTape* tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const std::size_t rows = parts[0].rank() == 2 ? parts[0].extent(0) : 1;
    std::size_t cols = 0;
    DType dt = parts[0].dtype();
    bool needs_grad = false;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.extent(0) != rows) {
            throw std::invalid_argument("concat_cols: incompatible part " +
                                        format_shape(p.shape()));
        }
        cols += p.extent(1);
        dt = promote(dt, p.dtype());
        needs_grad = needs_grad || p.requires_grad();
    }
    Tensor out = Tensor::zeros({rows, cols}, dt);
    double* o = out.data();
    std::size_t coff = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = p.extent(1);
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(p.data() + r * w, p.data() + (r + 1) * w, o + r * cols + coff);
        }
        coff += w;
    }
    finalize(out, "concat_cols");
    if (tape && needs_grad) {
        out.set_requires_grad(true);
        std::vector<Tensor> tp = parts;
        Tensor to = out;
        tape->record([tp, to, rows, cols]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            std::size_t coff = 0;
            for (Tensor& p : tp) {
                const std::size_t w = p.extent(1);
                if (p.requires_grad()) {
                    auto& gp = p.grad();
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < w; ++j) {
                            gp[r * w + j] += g[r * cols + coff + j];
                        }
                    }
                }
                coff += w;
            }
        });
    }
    return out;
}

Tensor reshape(GradTape* tape, const Tensor& x, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    if (n != x.numel()) {
        throw std::invalid_argument("reshape: " + format_shape(x.shape()) +
                                    " cannot become " + format_shape(shape));
    }
    Tensor out = Tensor::from_values(std::move(shape), x.values(), x.dtype());
    if (track(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor tx = x, to = out;
        tape->record([tx, to]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            auto& gx = tx.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

Tensor select(GradTape* tape, const Tensor& x, std::size_t index) {
    if (index >= x.numel()) {
        throw std::invalid_argument("select: index " + std::to_string(index) +
                                    " out of range for " + format_shape(x.shape()));
    }
    Tensor out = Tensor::from_values({1}, {x.data()[index]}, x.dtype());
    if (track(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor tx = x, to = out;
        tape->record([tx, to, index]() mutable {
            if (!to.has_grad()) return;
            tx.grad()[index] += upstream(to)[0];
        });
    }
    return out;
}

Tensor stack_scalars(GradTape* tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack_scalars: no parts");
    std::vector<double> vals;
    DType dt = parts[0].dtype();
    bool needs_grad = false;
    for (const Tensor& p : parts) {
        if (p.numel() != 1) {
            throw std::invalid_argument("stack_scalars: part has shape " +
                                        format_shape(p.shape()));
        }
        vals.push_back(p.data()[0]);
        dt = promote(dt, p.dtype());
        needs_grad = needs_grad || p.requires_grad();
    }
    Tensor out = Tensor::from_values({parts.size()}, std::move(vals), dt);
    check_finite(out, "stack_scalars");
    if (tape && needs_grad) {
        out.set_requires_grad(true);
        std::vector<Tensor> tp = parts;
        Tensor to = out;
        tape->record([tp, to]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            for (std::size_t i = 0; i < tp.size(); ++i) {
                if (tp[i].requires_grad()) tp[i].grad()[0] += g[i];
            }
        });
    }
    return out;
}

Tensor embedding(GradTape* tape, const Tensor& table, const std::vector<int>& ids) {
    require_rank2(table, "embedding");
    if (ids.empty()) throw std::invalid_argument("embedding: empty id list");
    const std::size_t v = table.extent(0), d = table.extent(1);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw std::invalid_argument("embedding: id " + std::to_string(id) +
                                        " out of range for vocab " + std::to_string(v));
        }
    }
    Tensor out = Tensor::zeros({ids.size(), d}, table.dtype());
    double* o = out.data();
    const double* ti = table.data();
    for (std::size_t t = 0; t < ids.size(); ++t) {
        std::copy(ti + static_cast<std::size_t>(ids[t]) * d,
                  ti + (static_cast<std::size_t>(ids[t]) + 1) * d, o + t * d);
    }
    finalize(out, "embedding");
    if (track(tape, {&table})) {
        out.set_requires_grad(true);
        Tensor tt = table, to = out;
        auto id_copy = std::make_shared<std::vector<int>>(ids);
        tape->record([tt, to, id_copy, d]() mutable {
            if (!to.has_grad()) return;
            const auto& g = upstream(to);
            auto& gt = tt.grad();
            for (std::size_t t = 0; t < id_copy->size(); ++t) {
                const std::size_t row = static_cast<std::size_t>((*id_copy)[t]);
                for (std::size_t j = 0; j < d; ++j) gt[row * d + j] += g[t * d + j];
            }
        });
    }
    return out;
}

Tensor cross_entropy(GradTape* tape, const Tensor& logits,
                     const std::vector<int>& targets,
                     const std::vector<std::uint8_t>& mask) {
    require_rank2(logits, "cross_entropy");
    const std::size_t t_len = logits.extent(0), v = logits.extent(1);
    if (targets.size() != t_len || mask.size() != t_len) {
        throw std::invalid_argument("cross_entropy: targets/mask length mismatch");
    }
    std::size_t n_scored = 0;
    for (std::size_t t = 0; t < t_len; ++t) {
        if (!mask[t]) continue;
        ++n_scored;
        if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= v) {
            throw std::invalid_argument("cross_entropy: target id " +
                                        std::to_string(targets[t]) + " out of range");
        }
    }
    if (n_scored == 0) throw std::invalid_argument("cross_entropy: all positions masked out");

    auto probs = std::make_shared<std::vector<double>>(logits.values());
    const double* li = logits.data();
    double loss = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
        const double* row = li + t * v;
        double* prow = probs->data() + t * v;
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            prow[j] = std::exp(row[j] - mx);
            z += prow[j];
        }
        const double inv = 1.0 / z;
        for (std::size_t j = 0; j < v; ++j) prow[j] *= inv;
        if (mask[t]) {
            loss += std::log(z) + mx - row[static_cast<std::size_t>(targets[t])];
        }
    }
    loss /= static_cast<double>(n_scored);
    Tensor out = Tensor::scalar(loss, logits.dtype());
    check_finite(out, "cross_entropy");
    if (track(tape, {&logits})) {
        out.set_requires_grad(true);
        Tensor tl = logits, to = out;
        auto tg = std::make_shared<std::vector<int>>(targets);
        auto mk = std::make_shared<std::vector<std::uint8_t>>(mask);
        tape->record([tl, to, tg, mk, probs, t_len, v, n_scored]() mutable {
            if (!to.has_grad()) return;
            const double g = upstream(to)[0] / static_cast<double>(n_scored);
            auto& gl = tl.grad();
            for (std::size_t t = 0; t < t_len; ++t) {
                if (!(*mk)[t]) continue;
                const double* prow = probs->data() + t * v;
                for (std::size_t j = 0; j < v; ++j) gl[t * v + j] += g * prow[j];
                gl[t * v + static_cast<std::size_t>((*tg)[t])] -= g;
            }
        });
    }
    return out;
}

}  // namespace hctx::ops
