#include "hctx/memory.hpp"

#include <stdexcept>
#include <string>

#include "hctx/ops.hpp"

namespace hctx {

MemoryBank::MemoryBank(std::size_t capacity, std::size_t dim, DType dt)
    : capacity_(capacity), dim_(dim), dtype_(dt) {
    if (capacity == 0 || dim == 0) {
        throw std::invalid_argument("memory bank: capacity and dim must be positive");
    }
}

MemoryBank MemoryBank::detached() const {
    MemoryBank out(capacity_, dim_, dtype_);
    for (const Tensor& s : slots_) out.slots_.push_back(s.detached());
    return out;
}

Tensor MemoryBank::as_matrix() const {
    Tensor m = Tensor::zeros({capacity_, dim_}, dtype_);
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        std::copy(slots_[i].data(), slots_[i].data() + dim_, m.data() + i * dim_);
    }
    return m;
}

MemoryBank MemoryBank::from_matrix(const Tensor& m, std::size_t occupancy) {
    if (m.rank() != 2) throw std::invalid_argument("memory bank: matrix must be rank 2");
    const std::size_t capacity = m.extent(0), dim = m.extent(1);
    if (occupancy > capacity) {
        throw std::invalid_argument("memory bank: occupancy exceeds capacity");
    }
    MemoryBank out(capacity, dim, m.dtype());
    for (std::size_t i = 0; i < occupancy; ++i) {
        std::vector<double> row(m.data() + i * dim, m.data() + (i + 1) * dim);
        out.slots_.push_back(Tensor::from_values({dim}, std::move(row), m.dtype()));
    }
    return out;
}

WritePolicy parse_write_policy(const std::string& name) {
    if (name == "gated_fifo") return WritePolicy::GatedFifo;
    if (name == "gru_fifo") return WritePolicy::GruFifo;
    throw std::invalid_argument("unknown write policy: " + name);
}

const char* write_policy_name(WritePolicy p) {
    return p == WritePolicy::GatedFifo ? "gated_fifo" : "gru_fifo";
}

Tensor pool_chunk(GradTape* tape, const Tensor& h_chunk) {
    if (h_chunk.rank() != 2) {
        throw std::invalid_argument("pool_chunk: expected [C x d], got " +
                                    format_shape(h_chunk.shape()));
    }
    return ops::reduce_mean(tape, h_chunk, 0);
}

namespace {

// x [d] -> sigmoid(x W + b) as [d], via a [1 x d] view.
Tensor gate_vector(GradTape* tape, const Tensor& x, const Tensor& w,
                   const Tensor& b) {
    Tensor row = ops::reshape(tape, x, {1, x.numel()});
    Tensor pre = ops::add_rows(tape, ops::matmul(tape, row, w), b);
    return ops::reshape(tape, ops::sigmoid(tape, pre), {x.numel()});
}

}  // namespace

Tensor gate_write(GradTape* tape, const Tensor& pooled, const MemoryParams& params) {
    Tensor g = gate_vector(tape, pooled, params.w_g, params.b_g);
    return ops::mul(tape, g, pooled);
}

Tensor gru_blend(GradTape* tape, const Tensor& h, const Tensor& m_prev,
                 const MemoryParams& params) {
    const std::size_t d = h.numel();
    Tensor u = gate_vector(tape, h, params.w_u, params.b_u);
    Tensor row = ops::reshape(tape, h, {1, d});
    Tensor cand = ops::reshape(
        tape,
        ops::tanh(tape, ops::add_rows(tape, ops::matmul(tape, row, params.w_m),
                                      params.b_m)),
        {d});
    Tensor one_minus_u = ops::sub(tape, Tensor::full({d}, 1.0, u.dtype()), u);
    return ops::add(tape, ops::mul(tape, u, cand),
                    ops::mul(tape, one_minus_u, m_prev));
}

MemoryBank fifo_insert(const MemoryBank& bank, const Tensor& v) {
    if (v.rank() != 1 || v.extent(0) != bank.dim()) {
        throw std::invalid_argument("fifo_insert: slot shape " +
                                    format_shape(v.shape()) + " does not match dim " +
                                    std::to_string(bank.dim()));
    }
    MemoryBank out(bank.capacity(), bank.dim(), bank.dtype());
    out.slots_.push_back(v);
    for (std::size_t i = 0; i + 1 < bank.capacity() && i < bank.occupancy(); ++i) {
        out.slots_.push_back(bank.slots_[i]);
    }
    return out;
}

MemoryBank write(GradTape* tape, const MemoryBank& bank, const Tensor& h_chunk,
                 const MemoryParams& params, WritePolicy policy) {
    Tensor pooled = pool_chunk(tape, h_chunk);
    switch (policy) {
        case WritePolicy::GatedFifo:
            return fifo_insert(bank, gate_write(tape, pooled, params));
        case WritePolicy::GruFifo: {
            Tensor prev = bank.occupancy() > 0
                              ? bank.slot(0)
                              : Tensor::zeros({bank.dim()}, bank.dtype());
            return fifo_insert(bank, gru_blend(tape, pooled, prev, params));
        }
    }
    throw std::invalid_argument("unknown write policy");
}

Tensor memory_read(GradTape* tape, const Tensor& q, const MemoryBank& bank) {
    if (q.rank() != 1 || q.extent(0) != bank.dim()) {
        throw std::invalid_argument("memory_read: query shape " +
                                    format_shape(q.shape()) + " does not match dim " +
                                    std::to_string(bank.dim()));
    }
    if (bank.occupancy() == 0) return Tensor::zeros({bank.dim()}, q.dtype());
    std::vector<Tensor> occupied;
    for (std::size_t i = 0; i < bank.occupancy(); ++i) occupied.push_back(bank.slot(i));
    Tensor m = ops::concat_rows(tape, occupied);          // [occ x d]
    Tensor qc = ops::reshape(tape, q, {bank.dim(), 1});   // [d x 1]
    Tensor scores = ops::matmul(tape, m, qc);             // [occ x 1]
    Tensor alpha = ops::softmax(tape, scores, 0);
    Tensor r = ops::matmul(tape, ops::transpose(tape, alpha), m);  // [1 x d]
    return ops::reshape(tape, r, {bank.dim()});
}

}  // namespace hctx
