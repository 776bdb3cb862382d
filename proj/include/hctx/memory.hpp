#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hctx/tensor.hpp"

namespace hctx {

// Fixed-capacity FIFO bank of slot vectors; slot 0 is the most recent
// write. Only occupied slots are stored, unoccupied slots are exact zero.
// Single-writer: a bank belongs to one forward pass; snapshots copy.
class MemoryBank {
public:
    MemoryBank(std::size_t capacity, std::size_t dim, DType dt = DType::F64);

    std::size_t capacity() const { return capacity_; }
    std::size_t dim() const { return dim_; }
    std::size_t occupancy() const { return slots_.size(); }
    DType dtype() const { return dtype_; }

    const Tensor& slot(std::size_t i) const { return slots_[i]; }

    // Values copied out of the graph (used when carrying memory across
    // forward windows; BPTT is truncated at the window boundary).
    MemoryBank detached() const;

    // [capacity x dim] matrix with zero rows for unoccupied slots.
    Tensor as_matrix() const;
    static MemoryBank from_matrix(const Tensor& m, std::size_t occupancy);

    friend MemoryBank fifo_insert(const MemoryBank& bank, const Tensor& v);

private:
    std::size_t capacity_, dim_;
    DType dtype_;
    std::vector<Tensor> slots_;  // index 0 newest
};

// Gate and candidate parameters: u = sigmoid(h W_u + b_u),
// candidate = tanh(h W_m + b_m), write gate g = sigmoid(x W_g + b_g).
struct MemoryParams {
    Tensor w_u, b_u;  // update gate
    Tensor w_m, b_m;  // candidate
    Tensor w_g, b_g;  // write gate
};

enum class WritePolicy { GatedFifo, GruFifo };

WritePolicy parse_write_policy(const std::string& name);
const char* write_policy_name(WritePolicy p);

// Mean over the token axis of a chunk's hidden states [C x d] -> [d].
Tensor pool_chunk(GradTape* tape, const Tensor& h_chunk);

// g = sigmoid(x W_g + b_g); returns g (.) x.
Tensor gate_write(GradTape* tape, const Tensor& pooled, const MemoryParams& params);

// u = sigmoid(h W_u + b_u); cand = tanh(h W_m + b_m);
// returns u (.) cand + (1 - u) (.) m_prev.
Tensor gru_blend(GradTape* tape, const Tensor& h, const Tensor& m_prev,
                 const MemoryParams& params);

// New slot enters index 0; the oldest slot is evicted once full.
MemoryBank fifo_insert(const MemoryBank& bank, const Tensor& v);

// One write step from a chunk's hidden states.
// GatedFifo: fifo_insert(gate_write(pool_chunk(h)))
// GruFifo:   fifo_insert(gru_blend(pool_chunk(h), slot0-or-zero))
MemoryBank write(GradTape* tape, const MemoryBank& bank, const Tensor& h_chunk,
                 const MemoryParams& params, WritePolicy policy);

// r = sum_i softmax(q . M_i) M_i over occupied slots only; empty bank
// reads return the zero vector (cold start).
Tensor memory_read(GradTape* tape, const Tensor& q, const MemoryBank& bank);

}  // namespace hctx
