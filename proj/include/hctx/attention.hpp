#pragma once

#include <cstddef>
#include <vector>

#include "hctx/memory.hpp"
#include "hctx/rope.hpp"
#include "hctx/tensor.hpp"

namespace hctx {

// Boolean attendability matrix [T x T_kv]; true = attendable. Every query
// row must keep at least one attendable key.
class AttentionMask {
public:
    static AttentionMask causal(std::size_t t);
    // Block-diagonal with block size `chunk`, intersected with the causal
    // mask: mask[i][j] = (i/chunk == j/chunk) && (j <= i).
    static AttentionMask chunked(std::size_t t, std::size_t chunk);
    static AttentionMask all(std::size_t t, std::size_t t_kv);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool at(std::size_t i, std::size_t j) const { return mask_[i * cols_ + j] != 0; }

    // Additive logit bias: 0 where attendable, a large negative constant
    // where masked (-1e9 at f32, -1e12 at f64).
    Tensor bias(DType dt) const;

private:
    AttentionMask(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), mask_(rows * cols, 0) {}
    void validate() const;

    std::size_t rows_, cols_;
    std::vector<std::uint8_t> mask_;
};

// Projection weights for one attention path.
struct AttentionParams {
    Tensor w_q, b_q;
    Tensor w_k, b_k;
    Tensor w_v, b_v;
    Tensor w_o, b_o;
};

// The three trainable fusion logits; lambda = softmax(logits).
struct FusionWeights {
    Tensor logits;  // shape [3]
};

// Indices into FusionWeights::logits.
inline constexpr std::size_t kPathFull = 0;
inline constexpr std::size_t kPathChunk = 1;
inline constexpr std::size_t kPathMem = 2;

// softmax(Q K^T / sqrt(d_k) + mask bias) V.
Tensor scaled_dot_attention(GradTape* tape, const Tensor& q, const Tensor& k,
                            const Tensor& v, const AttentionMask& mask);

// Per head: project, rotate Q and K (not V), attend, concat, project out.
// x: [T x d] with d = n_heads * head_dim.
Tensor multi_head_attention(GradTape* tape, const Tensor& x,
                            const AttentionParams& params,
                            const AttentionMask& mask, const RopeTable& rope,
                            std::size_t position_offset);

// Block-diagonal local attention computed chunk by chunk, so cost is
// linear in T at fixed chunk size. Equivalent to multi_head_attention
// under AttentionMask::chunked.
Tensor chunked_attention(GradTape* tape, const Tensor& x,
                         const AttentionParams& params, std::size_t chunk_size,
                         const RopeTable& rope, std::size_t position_offset);

// Queries from x, keys/values projected from the occupied memory slots.
// All slots visible (no mask), no RoPE on memory keys: slots are
// positionless summaries. Empty memory reads as zero (cold start).
Tensor memory_cross_attention(GradTape* tape, const Tensor& x,
                              const MemoryBank& bank,
                              const AttentionParams& params);

// H = lambda_1 A_full + lambda_2 A_chunk + lambda_3 A_mem,
// lambda = softmax(logits).
Tensor hybrid_fuse(GradTape* tape, const Tensor& a_full, const Tensor& a_chunk,
                   const Tensor& a_mem, const FusionWeights& fw);

// Fusion restricted to a subset of paths (ablations); softmax runs over
// the enabled logits only. `paths[i]` may be null when !enabled[i].
Tensor hybrid_fuse_subset(GradTape* tape, const std::vector<const Tensor*>& paths,
                          const std::vector<bool>& enabled,
                          const FusionWeights& fw);

}  // namespace hctx
