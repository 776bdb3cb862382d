#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hctx/attention.hpp"
#include "hctx/memory.hpp"
#include "hctx/rope.hpp"
#include "hctx/tensor.hpp"

namespace hctx {

struct ModelConfig {
    std::size_t vocab_size = 64;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    std::size_t chunk_size = 32;
    std::size_t memory_slots = 8;
    std::size_t ffn_multiplier = 4;
    std::size_t max_positions = 512;
    double rope_base = 10000.0;
    double rope_spread = 1.0;
    WritePolicy write_policy = WritePolicy::GruFifo;
    DType precision = DType::F64;
    // Ablation switches; a disabled path is neither computed nor fused,
    // and disabling the memory path also disables writes.
    bool path_full = true;
    bool path_chunk = true;
    bool path_mem = true;

    void validate() const;
    std::size_t head_dim() const { return d_model / n_heads; }
};

// Named parameter registry with stable iteration order (checkpointing,
// optimizer state, gradient clipping all walk it in registration order).
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    std::size_t total_elements() const;
    void zero_grad();

private:
    std::vector<std::string> order_;
    std::map<std::string, Tensor> map_;
};

struct BlockParams {
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    AttentionParams full_attn, chunk_attn, mem_attn;
    FusionWeights fusion;
    MemoryParams memory;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Chunk-recurrent decoder-only language model: pre-LN blocks fusing full,
// chunked and memory attention, with a per-layer FIFO memory bank and
// tied embedding/unembedding.
class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const RopeTable& rope() const { return rope_; }
    const BlockParams& block(std::size_t layer) const { return blocks_[layer]; }

    // Fresh cold-start banks, one per layer.
    std::vector<MemoryBank> make_banks() const;
    // Values copied out of the graph (use between forward windows).
    static std::vector<MemoryBank> detach_banks(const std::vector<MemoryBank>& banks);

    // The attention half of a block: pre-LN, the enabled paths, lambda
    // fusion and the per-chunk memory writes. Memory writes happen once
    // per chunk; the memory read for chunk c sees the bank state after
    // chunk c-1's write. Returns h = x + fused.
    std::pair<Tensor, MemoryBank> hybrid_attention_stage(
        GradTape* tape, const Tensor& x, const MemoryBank& bank,
        const BlockParams& bp, std::size_t position_offset) const;

    // One pre-LN block: hybrid_attention_stage followed by the FFN sublayer.
    std::pair<Tensor, MemoryBank> block_forward(GradTape* tape, const Tensor& x,
                                                const MemoryBank& bank,
                                                const BlockParams& bp,
                                                std::size_t position_offset) const;

    // tokens -> logits [T x V]; banks are advanced in place (one entry per
    // layer). Token ids must be < vocab_size and T + offset <= max_positions.
    Tensor forward(GradTape* tape, const std::vector<int>& tokens,
                   std::vector<MemoryBank>& banks,
                   std::size_t position_offset = 0) const;

    // Chunk-recurrent forward over a long sequence: the tokens are split
    // into windows of window_tokens, each forwarded at its true position
    // offset with the banks carried across (and detached at) the window
    // boundaries, so information crosses windows only through the memory.
    // window_tokens == 0 (or >= T) degenerates to a single window.
    Tensor forward_windowed(GradTape* tape, const std::vector<int>& tokens,
                            std::vector<MemoryBank>& banks,
                            std::size_t window_tokens) const;

    // Current softmax of the fusion logits for one layer.
    std::vector<double> lambdas(std::size_t layer) const;

private:
    ModelConfig cfg_;
    ParamStore params_;
    RopeTable rope_;
    std::vector<BlockParams> blocks_;
};

// Mean over unmasked positions of -log softmax(logits)[target].
Tensor lm_loss(GradTape* tape, const Tensor& logits, const std::vector<int>& targets,
               const std::vector<std::uint8_t>& mask);

}  // namespace hctx
