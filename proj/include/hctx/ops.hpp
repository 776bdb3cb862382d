#pragma once

#include <cstdint>
#include <vector>

#include "hctx/tensor.hpp"

namespace hctx::ops {

// Every op validates shapes, checks the result for non-finite values
// (fail fast rather than propagate), and, when `tape` is non-null and any
// input requires grad, records its adjoint rule on the tape. Pass
// tape == nullptr for inference-only forwards.

// Matrix product [MxK]*[KxN] -> [MxN].
Tensor matmul(GradTape* tape, const Tensor& a, const Tensor& b);
Tensor transpose(GradTape* tape, const Tensor& a);

// Pointwise ops on equal shapes; no implicit broadcasting.
Tensor add(GradTape* tape, const Tensor& a, const Tensor& b);
Tensor sub(GradTape* tape, const Tensor& a, const Tensor& b);
Tensor mul(GradTape* tape, const Tensor& a, const Tensor& b);
Tensor sigmoid(GradTape* tape, const Tensor& x);
Tensor tanh(GradTape* tape, const Tensor& x);
Tensor gelu(GradTape* tape, const Tensor& x);

// Multiply by a compile-time-known scalar constant.
Tensor scale(GradTape* tape, const Tensor& x, double c);
// Multiply by a 1-element tensor (gradient flows into s as well).
Tensor scalar_mul(GradTape* tape, const Tensor& x, const Tensor& s);
// x: [Txd] plus a row vector b: [d] added to every row.
Tensor add_rows(GradTape* tape, const Tensor& x, const Tensor& b);

// Axis reductions; the reduced axis is removed from the shape.
Tensor reduce_sum(GradTape* tape, const Tensor& x, std::size_t axis);
Tensor reduce_mean(GradTape* tape, const Tensor& x, std::size_t axis);

// Numerically stable softmax along `axis` (subtracts the axis max).
Tensor softmax(GradTape* tape, const Tensor& x, std::size_t axis);

// Normalizes the last axis to zero mean / unit variance, then applies the
// affine gain/bias (both of length d = last extent).
Tensor layer_norm(GradTape* tape, const Tensor& x, const Tensor& gain,
                  const Tensor& bias, double eps = 1e-5);

// Row/column slicing and concatenation on rank-2 tensors.
Tensor slice_rows(GradTape* tape, const Tensor& x, std::size_t r0, std::size_t r1);
Tensor slice_cols(GradTape* tape, const Tensor& x, std::size_t c0, std::size_t c1);
Tensor concat_rows(GradTape* tape, const std::vector<Tensor>& parts);
Tensor concat_cols(GradTape* tape, const std::vector<Tensor>& parts);

Tensor reshape(GradTape* tape, const Tensor& x, std::vector<std::size_t> shape);

// Single element by flat index, as a [1] tensor.
Tensor select(GradTape* tape, const Tensor& x, std::size_t index);
// Stack 1-element tensors into a [n] vector.
Tensor stack_scalars(GradTape* tape, const std::vector<Tensor>& parts);

// Row gather from an embedding table [Vxd]; ids must be < V.
Tensor embedding(GradTape* tape, const Tensor& table, const std::vector<int>& ids);

// Mean over unmasked positions of -log softmax(logits)[target].
// logits: [TxV]; mask[t] != 0 means position t is scored.
Tensor cross_entropy(GradTape* tape, const Tensor& logits,
                     const std::vector<int>& targets,
                     const std::vector<std::uint8_t>& mask);

// Throws if any value is non-finite. Called by every op on its own output;
// exposed for callers that fill tensors directly.
void check_finite(const Tensor& t, const char* op_name);

// Raw kernels (no autograd). C = A*B variants; `acc` accumulates into c.
namespace kernels {
void mm_nn(double* c, const double* a, const double* b, std::size_t m,
           std::size_t k, std::size_t n, bool acc);
// c[MxN] (+)= a[MxK] * b[NxK]^T
void mm_nt(double* c, const double* a, const double* b, std::size_t m,
           std::size_t k, std::size_t n, bool acc);
// c[MxN] (+)= a[KxM]^T * b[KxN]
void mm_tn(double* c, const double* a, const double* b, std::size_t m,
           std::size_t k, std::size_t n, bool acc);
}  // namespace kernels

}  // namespace hctx::ops
