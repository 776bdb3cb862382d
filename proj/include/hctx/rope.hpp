#pragma once

#include <cstddef>
#include <vector>

#include "hctx/tensor.hpp"

namespace hctx {

// Precomputed per-head rotary tables. Head i rotates coordinate pair k at
// position p by angle p * base_i^(-2k/head_dim), where
// base_i = base * spread^(i/(n_heads-1)). With spread == 1 all heads share
// the standard table. Immutable after construction; safe to share across
// readers and layers.
class RopeTable {
public:
    RopeTable(std::size_t n_heads, std::size_t head_dim, std::size_t max_positions,
              double base = 10000.0, double per_head_spread = 1.0);

    std::size_t n_heads() const { return n_heads_; }
    std::size_t head_dim() const { return head_dim_; }
    std::size_t n_pairs() const { return head_dim_ / 2; }
    std::size_t max_positions() const { return max_positions_; }
    double head_base(std::size_t head) const { return bases_[head]; }
    double frequency(std::size_t head, std::size_t pair) const;

    const double* cos_row(std::size_t head, std::size_t pos) const;
    const double* sin_row(std::size_t head, std::size_t pos) const;

private:
    std::size_t n_heads_, head_dim_, max_positions_;
    std::vector<double> bases_;
    std::vector<double> freqs_;  // [n_heads x head_dim/2]
    std::vector<double> cos_, sin_;  // [n_heads x max_positions x head_dim/2]
};

// Rotates each (x_{2k}, x_{2k+1}) pair of a single head's rows by the
// position angle; x: [T x head_dim], row t gets position t + position_offset.
// Pairwise norms are preserved exactly (pure rotation); differentiable.
Tensor apply_rope_head(GradTape* tape, const Tensor& x, const RopeTable& table,
                       std::size_t head, std::size_t position_offset);

// All heads at once; x: [T x n_heads x head_dim].
Tensor apply_rope(GradTape* tape, const Tensor& x, const RopeTable& table,
                  std::size_t position_offset);

}  // namespace hctx
