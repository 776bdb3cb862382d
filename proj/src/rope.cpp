#include "hctx/rope.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "hctx/ops.hpp"

namespace hctx {

RopeTable::RopeTable(std::size_t n_heads, std::size_t head_dim,
                     std::size_t max_positions, double base,
                     double per_head_spread)
    : n_heads_(n_heads), head_dim_(head_dim), max_positions_(max_positions) {
    if (n_heads == 0 || head_dim == 0 || max_positions == 0) {
        throw std::invalid_argument("rope: extents must be positive");
    }
    if (head_dim % 2 != 0) {
        throw std::invalid_argument("rope: head_dim must be even, got " +
                                    std::to_string(head_dim));
    }
    if (base <= 1.0) throw std::invalid_argument("rope: base must exceed 1");
    if (per_head_spread < 1.0) {
        throw std::invalid_argument("rope: per_head_spread must be >= 1");
    }
    const std::size_t p = head_dim / 2;
    bases_.resize(n_heads);
    freqs_.resize(n_heads * p);
    cos_.resize(n_heads * max_positions * p);
    sin_.resize(n_heads * max_positions * p);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const double frac =
            n_heads > 1 ? static_cast<double>(h) / static_cast<double>(n_heads - 1)
                        : 0.0;
        bases_[h] = base * std::pow(per_head_spread, frac);
        for (std::size_t k = 0; k < p; ++k) {
            freqs_[h * p + k] =
                std::pow(bases_[h], -2.0 * static_cast<double>(k) /
                                        static_cast<double>(head_dim));
        }
        for (std::size_t pos = 0; pos < max_positions; ++pos) {
            for (std::size_t k = 0; k < p; ++k) {
                const double angle = static_cast<double>(pos) * freqs_[h * p + k];
                cos_[(h * max_positions + pos) * p + k] = std::cos(angle);
                sin_[(h * max_positions + pos) * p + k] = std::sin(angle);
            }
        }
    }
}

double RopeTable::frequency(std::size_t head, std::size_t pair) const {
    return freqs_[head * n_pairs() + pair];
}

const double* RopeTable::cos_row(std::size_t head, std::size_t pos) const {
    return cos_.data() + (head * max_positions_ + pos) * n_pairs();
}

const double* RopeTable::sin_row(std::size_t head, std::size_t pos) const {
    return sin_.data() + (head * max_positions_ + pos) * n_pairs();
}

namespace {

void check_positions(const RopeTable& table, std::size_t t_len,
                     std::size_t offset) {
    if (t_len + offset > table.max_positions()) {
        throw std::invalid_argument(
            "rope: positions [" + std::to_string(offset) + "," +
            std::to_string(offset + t_len) + ") exceed max_positions " +
            std::to_string(table.max_positions()));
    }
}

// One head's rows; hd doubles per row starting at stride `row_stride`.
void rotate_rows(double* out, const double* in, const RopeTable& table,
                 std::size_t head, std::size_t t_len, std::size_t offset,
                 std::size_t row_stride, bool inverse) {
    const std::size_t p = table.n_pairs();
    for (std::size_t t = 0; t < t_len; ++t) {
        const double* c = table.cos_row(head, t + offset);
        const double* s = table.sin_row(head, t + offset);
        const double* xi = in + t * row_stride;
        double* o = out + t * row_stride;
        for (std::size_t k = 0; k < p; ++k) {
            const double sk = inverse ? -s[k] : s[k];
            const double x0 = xi[2 * k], x1 = xi[2 * k + 1];
            o[2 * k] = x0 * c[k] - x1 * sk;
            o[2 * k + 1] = x0 * sk + x1 * c[k];
        }
    }
}

}  // namespace

Tensor apply_rope_head(GradTape* tape, const Tensor& x, const RopeTable& table,
                       std::size_t head, std::size_t position_offset) {
    if (x.rank() != 2 || x.extent(1) != table.head_dim()) {
        throw std::invalid_argument("rope: expected [T x " +
                                    std::to_string(table.head_dim()) + "], got " +
                                    format_shape(x.shape()));
    }
    if (head >= table.n_heads()) throw std::invalid_argument("rope: head out of range");
    const std::size_t t_len = x.extent(0);
    check_positions(table, t_len, position_offset);
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    rotate_rows(out.data(), x.data(), table, head, t_len, position_offset,
                table.head_dim(), false);
    ops::check_finite(out, "apply_rope");
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor tx = x, to = out;
        const RopeTable* tb = &table;
        tape->record([tx, to, tb, head, t_len, position_offset]() mutable {
            if (!to.has_grad()) return;
            const auto& g = to.node()->grad;
            std::vector<double> gin(g.size());
            rotate_rows(gin.data(), g.data(), *tb, head, t_len, position_offset,
                        tb->head_dim(), true);
            auto& gx = tx.grad();
            for (std::size_t i = 0; i < gin.size(); ++i) gx[i] += gin[i];
        });
    }
    return out;
}

Tensor apply_rope(GradTape* tape, const Tensor& x, const RopeTable& table,
                  std::size_t position_offset) {
    if (x.rank() != 3 || x.extent(1) != table.n_heads() ||
        x.extent(2) != table.head_dim()) {
        throw std::invalid_argument("rope: expected [T x " +
                                    std::to_string(table.n_heads()) + " x " +
                                    std::to_string(table.head_dim()) + "], got " +
                                    format_shape(x.shape()));
    }
    const std::size_t t_len = x.extent(0);
    const std::size_t n_heads = table.n_heads(), hd = table.head_dim();
    check_positions(table, t_len, position_offset);
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    const std::size_t stride = n_heads * hd;
    for (std::size_t h = 0; h < n_heads; ++h) {
        rotate_rows(out.data() + h * hd, x.data() + h * hd, table, h, t_len,
                    position_offset, stride, false);
    }
    ops::check_finite(out, "apply_rope");
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor tx = x, to = out;
        const RopeTable* tb = &table;
        tape->record([tx, to, tb, t_len, position_offset, stride, hd]() mutable {
            if (!to.has_grad()) return;
            const auto& g = to.node()->grad;
            std::vector<double> gin(g.size());
            for (std::size_t h = 0; h < tb->n_heads(); ++h) {
                rotate_rows(gin.data() + h * hd, g.data() + h * hd, *tb, h, t_len,
                            position_offset, stride, true);
            }
            auto& gx = tx.grad();
            for (std::size_t i = 0; i < gin.size(); ++i) gx[i] += gin[i];
        });
    }
    return out;
}

}  // namespace hctx
