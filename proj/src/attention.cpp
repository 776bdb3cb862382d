#include "hctx/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "hctx/ops.hpp"

namespace hctx {

void AttentionMask::validate() const {
    for (std::size_t i = 0; i < rows_; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < cols_ && !any; ++j) any = at(i, j);
        if (!any) {
            throw std::invalid_argument("attention mask: query row " +
                                        std::to_string(i) + " has no attendable key");
        }
    }
}

AttentionMask AttentionMask::causal(std::size_t t) {
    if (t == 0) throw std::invalid_argument("attention mask: T must be positive");
    AttentionMask m(t, t);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j <= i; ++j) m.mask_[i * t + j] = 1;
    }
    m.validate();
    return m;
}

AttentionMask AttentionMask::chunked(std::size_t t, std::size_t chunk) {
    if (t == 0 || chunk == 0) {
        throw std::invalid_argument("attention mask: T and chunk must be positive");
    }
    AttentionMask m(t, t);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            if (i / chunk == j / chunk) m.mask_[i * t + j] = 1;
        }
    }
    m.validate();
    return m;
}

AttentionMask AttentionMask::all(std::size_t t, std::size_t t_kv) {
    if (t == 0 || t_kv == 0) {
        throw std::invalid_argument("attention mask: extents must be positive");
    }
    AttentionMask m(t, t_kv);
    std::fill(m.mask_.begin(), m.mask_.end(), 1);
    return m;
}

Tensor AttentionMask::bias(DType dt) const {
    const double neg = dt == DType::F32 ? -1e9 : -1e12;
    Tensor b = Tensor::zeros({rows_, cols_}, dt);
    double* p = b.data();
    for (std::size_t i = 0; i < mask_.size(); ++i) {
        if (!mask_[i]) p[i] = neg;
    }
    return b;
}

Tensor scaled_dot_attention(GradTape* tape, const Tensor& q, const Tensor& k,
                            const Tensor& v, const AttentionMask& mask) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 ||
        q.extent(1) != k.extent(1) || k.extent(0) != v.extent(0)) {
        throw std::invalid_argument("scaled_dot_attention: incompatible shapes " +
                                    format_shape(q.shape()) + ", " +
                                    format_shape(k.shape()) + ", " +
                                    format_shape(v.shape()));
    }
    if (mask.rows() != q.extent(0) || mask.cols() != k.extent(0)) {
        throw std::invalid_argument("scaled_dot_attention: mask shape mismatch");
    }
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.extent(1)));
    Tensor scores = ops::scale(tape, ops::matmul(tape, q, ops::transpose(tape, k)),
                               inv_sqrt_dk);
    Tensor biased = ops::add(tape, scores, mask.bias(scores.dtype()));
    Tensor weights = ops::softmax(tape, biased, 1);
    return ops::matmul(tape, weights, v);
}

namespace {

void check_attention_params(const Tensor& x, const AttentionParams& p) {
    const std::size_t d = x.extent(1);
    for (const Tensor* w : {&p.w_q, &p.w_k, &p.w_v, &p.w_o}) {
        if (w->rank() != 2 || w->extent(0) != d || w->extent(1) != d) {
            throw std::invalid_argument("attention: projection shape " +
                                        format_shape(w->shape()) +
                                        " does not match d=" + std::to_string(d));
        }
    }
}

}  // namespace

Tensor multi_head_attention(GradTape* tape, const Tensor& x,
                            const AttentionParams& params,
                            const AttentionMask& mask, const RopeTable& rope,
                            std::size_t position_offset) {
    if (x.rank() != 2) {
        throw std::invalid_argument("multi_head_attention: expected [T x d], got " +
                                    format_shape(x.shape()));
    }
    check_attention_params(x, params);
    const std::size_t d = x.extent(1);
    const std::size_t n_heads = rope.n_heads(), hd = rope.head_dim();
    if (n_heads * hd != d) {
        throw std::invalid_argument("multi_head_attention: d=" + std::to_string(d) +
                                    " != n_heads*head_dim");
    }
    Tensor q = ops::add_rows(tape, ops::matmul(tape, x, params.w_q), params.b_q);
    Tensor k = ops::add_rows(tape, ops::matmul(tape, x, params.w_k), params.b_k);
    Tensor v = ops::add_rows(tape, ops::matmul(tape, x, params.w_v), params.b_v);
    std::vector<Tensor> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        Tensor qh = apply_rope_head(tape, ops::slice_cols(tape, q, h * hd, (h + 1) * hd),
                                    rope, h, position_offset);
        Tensor kh = apply_rope_head(tape, ops::slice_cols(tape, k, h * hd, (h + 1) * hd),
                                    rope, h, position_offset);
        Tensor vh = ops::slice_cols(tape, v, h * hd, (h + 1) * hd);
        heads.push_back(scaled_dot_attention(tape, qh, kh, vh, mask));
    }
    Tensor cat = ops::concat_cols(tape, heads);
    return ops::add_rows(tape, ops::matmul(tape, cat, params.w_o), params.b_o);
}

Tensor chunked_attention(GradTape* tape, const Tensor& x,
                         const AttentionParams& params, std::size_t chunk_size,
                         const RopeTable& rope, std::size_t position_offset) {
    if (chunk_size == 0) {
        throw std::invalid_argument("chunked_attention: chunk size must be positive");
    }
    const std::size_t t_len = x.extent(0);
    std::vector<Tensor> parts;
    for (std::size_t r0 = 0; r0 < t_len; r0 += chunk_size) {
        const std::size_t r1 = std::min(r0 + chunk_size, t_len);
        Tensor xc = ops::slice_rows(tape, x, r0, r1);
        parts.push_back(multi_head_attention(tape, xc, params,
                                             AttentionMask::causal(r1 - r0), rope,
                                             position_offset + r0));
    }
    return parts.size() == 1 ? parts[0] : ops::concat_rows(tape, parts);
}

Tensor memory_cross_attention(GradTape* tape, const Tensor& x,
                              const MemoryBank& bank,
                              const AttentionParams& params) {
    if (x.rank() != 2 || x.extent(1) != bank.dim()) {
        throw std::invalid_argument("memory_cross_attention: input " +
                                    format_shape(x.shape()) +
                                    " does not match memory dim " +
                                    std::to_string(bank.dim()));
    }
    check_attention_params(x, params);
    if (bank.occupancy() == 0) {
        return Tensor::zeros(x.shape(), x.dtype());  // cold start
    }
    std::vector<Tensor> occupied;
    for (std::size_t i = 0; i < bank.occupancy(); ++i) occupied.push_back(bank.slot(i));
    Tensor m = ops::concat_rows(tape, occupied);  // [occ x d]
    Tensor q = ops::add_rows(tape, ops::matmul(tape, x, params.w_q), params.b_q);
    Tensor k = ops::add_rows(tape, ops::matmul(tape, m, params.w_k), params.b_k);
    Tensor v = ops::add_rows(tape, ops::matmul(tape, m, params.w_v), params.b_v);
    Tensor attended = scaled_dot_attention(
        tape, q, k, v, AttentionMask::all(x.extent(0), bank.occupancy()));
    return ops::add_rows(tape, ops::matmul(tape, attended, params.w_o), params.b_o);
}

Tensor hybrid_fuse(GradTape* tape, const Tensor& a_full, const Tensor& a_chunk,
                   const Tensor& a_mem, const FusionWeights& fw) {
    return hybrid_fuse_subset(tape, {&a_full, &a_chunk, &a_mem},
                              {true, true, true}, fw);
}

Tensor hybrid_fuse_subset(GradTape* tape, const std::vector<const Tensor*>& paths,
                          const std::vector<bool>& enabled,
                          const FusionWeights& fw) {
    if (fw.logits.rank() != 1 || fw.logits.extent(0) != 3) {
        throw std::invalid_argument("hybrid_fuse: fusion logits must be [3], got " +
                                    format_shape(fw.logits.shape()));
    }
    if (paths.size() != 3 || enabled.size() != 3) {
        throw std::invalid_argument("hybrid_fuse: expected exactly three paths");
    }
    std::vector<Tensor> picked_logits;
    std::vector<const Tensor*> picked;
    for (std::size_t i = 0; i < 3; ++i) {
        if (!enabled[i]) continue;
        picked_logits.push_back(ops::select(tape, fw.logits, i));
        picked.push_back(paths[i]);
        if (paths[i]->shape() != picked[0]->shape()) {
            throw std::invalid_argument("hybrid_fuse: path shape mismatch " +
                                        format_shape(paths[i]->shape()) + " vs " +
                                        format_shape(picked[0]->shape()));
        }
    }
    if (picked.empty()) throw std::invalid_argument("hybrid_fuse: no enabled path");
    Tensor lambdas =
        ops::softmax(tape, ops::stack_scalars(tape, picked_logits), 0);
    Tensor fused;
    for (std::size_t i = 0; i < picked.size(); ++i) {
        Tensor term = ops::scalar_mul(tape, *picked[i], ops::select(tape, lambdas, i));
        fused = i == 0 ? term : ops::add(tape, fused, term);
    }
    return fused;
}

}  // namespace hctx
