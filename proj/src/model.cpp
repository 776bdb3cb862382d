#include "hctx/model.hpp"

#include <stdexcept>

#include "hctx/ops.hpp"

namespace hctx {

void ModelConfig::validate() const {
    if (vocab_size == 0 || d_model == 0 || n_heads == 0 || n_layers == 0 ||
        chunk_size == 0 || memory_slots == 0 || ffn_multiplier == 0 ||
        max_positions == 0) {
        throw std::invalid_argument("model config: all extents must be positive");
    }
    if (d_model % n_heads != 0) {
        throw std::invalid_argument("model config: d_model must be divisible by n_heads");
    }
    if (head_dim() % 2 != 0) {
        throw std::invalid_argument("model config: head_dim must be even for rope");
    }
    if (!path_full && !path_chunk && !path_mem) {
        throw std::invalid_argument("model config: at least one attention path required");
    }
}

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (map_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    t.set_requires_grad(true);
    order_.push_back(name);
    return map_.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

bool ParamStore::contains(const std::string& name) const { return map_.count(name) > 0; }

std::size_t ParamStore::total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, t] : map_) n += t.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [name, t] : map_) t.zero_grad();
}

namespace {

constexpr double kInitStddev = 0.02;

AttentionParams init_attention(ParamStore& ps, const std::string& prefix,
                               std::size_t d, std::mt19937_64& rng, DType dt) {
    AttentionParams p;
    p.w_q = ps.add(prefix + ".w_q", Tensor::randn({d, d}, rng, kInitStddev, dt));
    p.b_q = ps.add(prefix + ".b_q", Tensor::zeros({d}, dt));
    p.w_k = ps.add(prefix + ".w_k", Tensor::randn({d, d}, rng, kInitStddev, dt));
    p.b_k = ps.add(prefix + ".b_k", Tensor::zeros({d}, dt));
    p.w_v = ps.add(prefix + ".w_v", Tensor::randn({d, d}, rng, kInitStddev, dt));
    p.b_v = ps.add(prefix + ".b_v", Tensor::zeros({d}, dt));
    // Residual-exit projection starts at zero so blocks begin as identities.
    p.w_o = ps.add(prefix + ".w_o", Tensor::zeros({d, d}, dt));
    p.b_o = ps.add(prefix + ".b_o", Tensor::zeros({d}, dt));
    return p;
}

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      rope_((cfg.validate(), cfg.n_heads), cfg.head_dim(), cfg.max_positions,
            cfg.rope_base, cfg.rope_spread) {
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg_.d_model;
    const std::size_t h = d * cfg_.ffn_multiplier;
    const DType dt = cfg_.precision;
    params_.add("embedding", Tensor::randn({cfg_.vocab_size, d}, rng, kInitStddev, dt));
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        const std::string lp = "layer" + std::to_string(l);
        BlockParams bp;
        bp.ln1_gain = params_.add(lp + ".ln1.gain", Tensor::full({d}, 1.0, dt));
        bp.ln1_bias = params_.add(lp + ".ln1.bias", Tensor::zeros({d}, dt));
        bp.full_attn = init_attention(params_, lp + ".full", d, rng, dt);
        bp.chunk_attn = init_attention(params_, lp + ".chunk", d, rng, dt);
        bp.mem_attn = init_attention(params_, lp + ".mem", d, rng, dt);
        bp.fusion.logits = params_.add(lp + ".fusion", Tensor::zeros({3}, dt));
        bp.memory.w_u = params_.add(lp + ".memory.w_u", Tensor::randn({d, d}, rng, kInitStddev, dt));
        bp.memory.b_u = params_.add(lp + ".memory.b_u", Tensor::zeros({d}, dt));
        bp.memory.w_m = params_.add(lp + ".memory.w_m", Tensor::randn({d, d}, rng, kInitStddev, dt));
        bp.memory.b_m = params_.add(lp + ".memory.b_m", Tensor::zeros({d}, dt));
        bp.memory.w_g = params_.add(lp + ".memory.w_g", Tensor::randn({d, d}, rng, kInitStddev, dt));
        bp.memory.b_g = params_.add(lp + ".memory.b_g", Tensor::zeros({d}, dt));
        bp.ffn_w1 = params_.add(lp + ".ffn.w1", Tensor::randn({d, h}, rng, kInitStddev, dt));
        bp.ffn_b1 = params_.add(lp + ".ffn.b1", Tensor::zeros({h}, dt));
        bp.ffn_w2 = params_.add(lp + ".ffn.w2", Tensor::zeros({h, d}, dt));
        bp.ffn_b2 = params_.add(lp + ".ffn.b2", Tensor::zeros({d}, dt));
        bp.ln2_gain = params_.add(lp + ".ln2.gain", Tensor::full({d}, 1.0, dt));
        bp.ln2_bias = params_.add(lp + ".ln2.bias", Tensor::zeros({d}, dt));
        blocks_.push_back(bp);
    }
    params_.add("final_ln.gain", Tensor::full({d}, 1.0, dt));
    params_.add("final_ln.bias", Tensor::zeros({d}, dt));
}

std::vector<MemoryBank> Model::make_banks() const {
    std::vector<MemoryBank> banks;
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        banks.emplace_back(cfg_.memory_slots, cfg_.d_model, cfg_.precision);
    }
    return banks;
}

std::vector<MemoryBank> Model::detach_banks(const std::vector<MemoryBank>& banks) {
    std::vector<MemoryBank> out;
    out.reserve(banks.size());
    for (const MemoryBank& b : banks) out.push_back(b.detached());
    return out;
}

std::pair<Tensor, MemoryBank> Model::hybrid_attention_stage(
    GradTape* tape, const Tensor& x, const MemoryBank& bank, const BlockParams& bp,
    std::size_t position_offset) const {
    const std::size_t t_len = x.extent(0);
    const std::size_t chunk = cfg_.chunk_size;
    Tensor a = ops::layer_norm(tape, x, bp.ln1_gain, bp.ln1_bias);

    Tensor a_full, a_chunk;
    if (cfg_.path_full) {
        a_full = multi_head_attention(tape, a, bp.full_attn,
                                      AttentionMask::causal(t_len), rope_,
                                      position_offset);
    }
    if (cfg_.path_chunk) {
        a_chunk = chunked_attention(tape, a, bp.chunk_attn, chunk, rope_,
                                    position_offset);
    }

    // Chunk-sequential memory pass: read with the bank as of the previous
    // chunk's write, then write this chunk's fused hidden state.
    MemoryBank cur = bank;
    std::vector<Tensor> h_parts;
    for (std::size_t r0 = 0; r0 < t_len; r0 += chunk) {
        const std::size_t r1 = std::min(r0 + chunk, t_len);
        Tensor a_mem_c;
        if (cfg_.path_mem) {
            a_mem_c = memory_cross_attention(tape, ops::slice_rows(tape, a, r0, r1),
                                             cur, bp.mem_attn);
        }
        Tensor full_c, chunk_c;
        if (cfg_.path_full) full_c = ops::slice_rows(tape, a_full, r0, r1);
        if (cfg_.path_chunk) chunk_c = ops::slice_rows(tape, a_chunk, r0, r1);
        Tensor fused = hybrid_fuse_subset(
            tape, {&full_c, &chunk_c, &a_mem_c},
            {cfg_.path_full, cfg_.path_chunk, cfg_.path_mem}, bp.fusion);
        Tensor h_c = ops::add(tape, ops::slice_rows(tape, x, r0, r1), fused);
        if (cfg_.path_mem) {
            cur = write(tape, cur, h_c, bp.memory, cfg_.write_policy);
        }
        h_parts.push_back(h_c);
    }
    Tensor h = h_parts.size() == 1 ? h_parts[0] : ops::concat_rows(tape, h_parts);
    return {h, cur};
}

std::pair<Tensor, MemoryBank> Model::block_forward(GradTape* tape, const Tensor& x,
                                                   const MemoryBank& bank,
                                                   const BlockParams& bp,
                                                   std::size_t position_offset) const {
    auto [h, cur] = hybrid_attention_stage(tape, x, bank, bp, position_offset);
    Tensor n2 = ops::layer_norm(tape, h, bp.ln2_gain, bp.ln2_bias);
    Tensor ffn = ops::add_rows(
        tape,
        ops::matmul(tape,
                    ops::gelu(tape, ops::add_rows(tape, ops::matmul(tape, n2, bp.ffn_w1),
                                                  bp.ffn_b1)),
                    bp.ffn_w2),
        bp.ffn_b2);
    Tensor y = ops::add(tape, h, ffn);
    return {y, cur};
}

Tensor Model::forward(GradTape* tape, const std::vector<int>& tokens,
                      std::vector<MemoryBank>& banks,
                      std::size_t position_offset) const {
    if (banks.size() != cfg_.n_layers) {
        throw std::invalid_argument("model forward: expected one bank per layer");
    }
    if (tokens.size() + position_offset > cfg_.max_positions) {
        throw std::invalid_argument("model forward: sequence exceeds max_positions");
    }
    Tensor x = ops::embedding(tape, params_.get("embedding"), tokens);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        auto [y, bank] = block_forward(tape, x, banks[l], blocks_[l], position_offset);
        x = y;
        banks[l] = bank;
    }
    Tensor n = ops::layer_norm(tape, x, params_.get("final_ln.gain"),
                               params_.get("final_ln.bias"));
    // Tied unembedding.
    return ops::matmul(tape, n, ops::transpose(tape, params_.get("embedding")));
}

Tensor Model::forward_windowed(GradTape* tape, const std::vector<int>& tokens,
                               std::vector<MemoryBank>& banks,
                               std::size_t window_tokens) const {
    if (window_tokens == 0 || window_tokens >= tokens.size()) {
        return forward(tape, tokens, banks);
    }
    std::vector<Tensor> logits;
    for (std::size_t start = 0; start < tokens.size(); start += window_tokens) {
        const std::size_t len = std::min(window_tokens, tokens.size() - start);
        std::vector<int> window(tokens.begin() + start, tokens.begin() + start + len);
        if (start > 0) banks = detach_banks(banks);  // truncate BPTT at the boundary
        logits.push_back(forward(tape, window, banks, start));
    }
    return logits.size() == 1 ? logits[0] : ops::concat_rows(tape, logits);
}

std::vector<double> Model::lambdas(std::size_t layer) const {
    const Tensor& w = blocks_.at(layer).fusion.logits;
    Tensor lam = ops::softmax(nullptr, w, 0);
    return {lam(0), lam(1), lam(2)};
}

Tensor lm_loss(GradTape* tape, const Tensor& logits, const std::vector<int>& targets,
               const std::vector<std::uint8_t>& mask) {
    return ops::cross_entropy(tape, logits, targets, mask);
}

}  // namespace hctx
