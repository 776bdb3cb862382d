#include "hctx/verify.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>

#include "hctx/attention.hpp"
#include "hctx/checkpoint.hpp"
#include "hctx/gradcheck.hpp"
#include "hctx/memory.hpp"
#include "hctx/model.hpp"
#include "hctx/ops.hpp"
#include "hctx/optim.hpp"
#include "hctx/rope.hpp"
#include "hctx/tensor.hpp"

namespace hctx {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

struct Suite {
    std::vector<VerifyCheck> checks;
    std::uint64_t seed;

    void run(const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
        VerifyCheck c;
        c.name = name;
        try {
            auto [pass, detail] = fn();
            c.pass = pass;
            c.detail = detail;
        } catch (const std::exception& e) {
            c.pass = false;
            c.detail = std::string("exception: ") + e.what();
        }
        checks.push_back(std::move(c));
    }
};

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    }
    return m;
}

AttentionParams random_attention(std::mt19937_64& rng, std::size_t d) {
    AttentionParams p;
    p.w_q = Tensor::randn({d, d}, rng, 0.2);
    p.b_q = Tensor::randn({d}, rng, 0.2);
    p.w_k = Tensor::randn({d, d}, rng, 0.2);
    p.b_k = Tensor::randn({d}, rng, 0.2);
    p.w_v = Tensor::randn({d, d}, rng, 0.2);
    p.b_v = Tensor::randn({d}, rng, 0.2);
    p.w_o = Tensor::randn({d, d}, rng, 0.2);
    p.b_o = Tensor::randn({d}, rng, 0.2);
    return p;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 11;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.chunk_size = 4;
    cfg.memory_slots = 2;
    cfg.ffn_multiplier = 2;
    cfg.max_positions = 16;
    return cfg;
}

}  // namespace

std::vector<VerifyCheck> run_verification(std::uint64_t seed) {
    Suite s{{}, seed};

    s.run("matmul matches naive triple-loop oracle", [&] {
        std::mt19937_64 rng(seed);
        double worst = 0.0;
        for (int trial = 0; trial < 5; ++trial) {
            const std::size_t m = 2 + trial, k = 3 + trial, n = 4 + trial;
            Tensor a = Tensor::randn({m, k}, rng, 1.0);
            Tensor b = Tensor::randn({k, n}, rng, 1.0);
            Tensor c = ops::matmul(nullptr, a, b);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
                    worst = std::max(worst, std::fabs(c(i, j) - acc));
                }
            }
        }
        return std::make_pair(worst < 1e-12, "max abs diff " + fmt(worst));
    });

    s.run("composite op gradient vs central differences", [&] {
        std::mt19937_64 rng(seed + 1);
        std::vector<Tensor> inputs = {
            Tensor::randn({3, 4}, rng, 0.7), Tensor::randn({4, 5}, rng, 0.7),
            Tensor::randn({5}, rng, 0.3), Tensor::randn({5}, rng, 0.3)};
        for (std::size_t i = 0; i < inputs[2].numel(); ++i) inputs[2].data()[i] += 1.0;
        std::vector<int> targets = {1, 4, 2};
        std::vector<std::uint8_t> mask = {1, 0, 1};
        auto f = [&](GradTape* tape, std::vector<Tensor>& in) {
            Tensor logits = ops::layer_norm(
                tape, ops::gelu(tape, ops::matmul(tape, in[0], in[1])), in[2], in[3]);
            return ops::cross_entropy(tape, logits, targets, mask);
        };
        GradCheckResult r = gradcheck(f, inputs);
        return std::make_pair(r.pass, "max rel err " + fmt(r.max_rel_err) + " over " +
                                          std::to_string(r.checked) + " elements");
    });

    s.run("rotary encoding preserves vector norms", [&] {
        std::mt19937_64 rng(seed + 2);
        RopeTable table(2, 8, 32, 10000.0, 100.0);
        Tensor x = Tensor::randn({6, 8}, rng, 1.0);
        double worst = 0.0;
        for (std::size_t h = 0; h < 2; ++h) {
            Tensor y = apply_rope_head(nullptr, x, table, h, 3);
            for (std::size_t t = 0; t < 6; ++t) {
                double nx = 0.0, ny = 0.0;
                for (std::size_t j = 0; j < 8; ++j) {
                    nx += x(t * 8 + j) * x(t * 8 + j);
                    ny += y(t * 8 + j) * y(t * 8 + j);
                }
                worst = std::max(worst, std::fabs(std::sqrt(nx) - std::sqrt(ny)));
            }
        }
        return std::make_pair(worst < 1e-12, "max norm drift " + fmt(worst));
    });

    s.run("rotary dot products depend only on relative offset", [&] {
        std::mt19937_64 rng(seed + 3);
        RopeTable table(1, 8, 64);
        Tensor q = Tensor::randn({1, 8}, rng, 1.0);
        Tensor k = Tensor::randn({1, 8}, rng, 1.0);
        auto dot_at = [&](std::size_t pq, std::size_t pk) {
            Tensor rq = apply_rope_head(nullptr, q, table, 0, pq);
            Tensor rk = apply_rope_head(nullptr, k, table, 0, pk);
            double d = 0.0;
            for (std::size_t j = 0; j < 8; ++j) d += rq(j) * rk(j);
            return d;
        };
        const double a = dot_at(2, 7), b = dot_at(21, 26), c = dot_at(40, 45);
        const double worst = std::max(std::fabs(a - b), std::fabs(a - c));
        return std::make_pair(worst < 1e-10, "max shift variation " + fmt(worst));
    });

    s.run("chunked attention with chunk >= T equals full causal attention", [&] {
        std::mt19937_64 rng(seed + 4);
        const std::size_t t = 6, d = 8;
        RopeTable table(2, 4, 16);
        AttentionParams p = random_attention(rng, d);
        Tensor x = Tensor::randn({t, d}, rng, 1.0);
        Tensor full = multi_head_attention(nullptr, x, p, AttentionMask::causal(t),
                                           table, 0);
        Tensor chunked = chunked_attention(nullptr, x, p, t, table, 0);
        const double diff = max_abs_diff(full, chunked);
        return std::make_pair(diff < 1e-10, "max abs diff " + fmt(diff));
    });

    s.run("path fusion is a convex combination", [&] {
        std::mt19937_64 rng(seed + 5);
        Tensor a = Tensor::randn({3, 4}, rng, 1.0);
        Tensor b = Tensor::randn({3, 4}, rng, 1.0);
        Tensor c = Tensor::randn({3, 4}, rng, 1.0);
        FusionWeights fw;
        fw.logits = Tensor::randn({3}, rng, 1.0);
        Tensor fused = hybrid_fuse(nullptr, a, b, c, fw);
        double worst = 0.0;
        for (std::size_t i = 0; i < fused.numel(); ++i) {
            const double lo = std::min({a(i), b(i), c(i)});
            const double hi = std::max({a(i), b(i), c(i)});
            worst = std::max({worst, lo - fused(i), fused(i) - hi});
        }
        return std::make_pair(worst < 1e-12, "max hull violation " + fmt(worst));
    });

    s.run("memory bank keeps FIFO order and capacity bound", [&] {
        std::mt19937_64 rng(seed + 6);
        MemoryBank bank(3, 4);
        std::vector<Tensor> vs;
        for (int i = 0; i < 4; ++i) vs.push_back(Tensor::randn({4}, rng, 1.0));
        for (const Tensor& v : vs) bank = fifo_insert(bank, v);
        bool ok = bank.occupancy() == 3;
        for (int i = 0; i < 3 && ok; ++i) {
            ok = max_abs_diff(bank.slot(i), vs[3 - i]) == 0.0;
        }
        return std::make_pair(ok, "occupancy " + std::to_string(bank.occupancy()));
    });

    s.run("freshly initialized blocks are identities", [&] {
        std::mt19937_64 rng(seed + 7);
        Model model(tiny_config(), seed + 7);
        Tensor x = Tensor::randn({8, 8}, rng, 1.0);
        MemoryBank bank(2, 8);
        auto [y, cur] = model.block_forward(nullptr, x, bank, model.block(0), 0);
        const double diff = max_abs_diff(x, y);
        return std::make_pair(diff < 1e-12, "max abs diff " + fmt(diff));
    });

    s.run("end-to-end model gradient vs central differences", [&] {
        Model model(tiny_config(), seed + 8);
        std::mt19937_64 rng(seed + 8);
        std::uniform_int_distribution<int> tok(0, 10);
        std::vector<int> tokens(8), targets(8);
        std::vector<std::uint8_t> mask(8, 1);
        for (auto& t : tokens) t = tok(rng);
        for (auto& t : targets) t = tok(rng);
        std::vector<Tensor> leaves = {
            model.params().get("embedding"),    model.params().get("layer0.full.w_q"),
            model.params().get("layer0.fusion"), model.params().get("layer0.memory.w_u"),
            model.params().get("layer1.ffn.w1"), model.params().get("layer0.ln1.gain")};
        auto f = [&](GradTape* tape, std::vector<Tensor>&) {
            std::vector<MemoryBank> banks = model.make_banks();
            Tensor logits = model.forward(tape, tokens, banks);
            return lm_loss(tape, logits, targets, mask);
        };
        GradCheckResult r = gradcheck(f, leaves, 1e-5, 1e-3);
        return std::make_pair(r.pass, "max rel err " + fmt(r.max_rel_err) + " over " +
                                          std::to_string(r.checked) + " elements");
    });

    s.run("optimizer converges on quadratic oracle", [&] {
        ParamStore ps;
        Tensor& x = ps.add("x", Tensor::zeros({1}));
        AdamState st;
        for (int step = 0; step < 200; ++step) {
            x.zero_grad();
            x.grad()[0] = 2.0 * (x(0) - 3.0);
            adam_step(ps, st, 0.1);
        }
        const double err = std::fabs(x(0) - 3.0);
        return std::make_pair(err < 0.05, "final |x - 3| = " + fmt(err));
    });

    s.run("learning-rate schedule hits warmup peak and cosine floor", [&] {
        const double peak = lr_at(100, 3e-3, 100, 3000);
        const double floor = lr_at(3000, 3e-3, 100, 3000);
        const double half = lr_at(50, 3e-3, 100, 3000);
        const bool ok = std::fabs(peak - 3e-3) < 1e-15 &&
                        std::fabs(floor - 3e-4) < 1e-12 &&
                        std::fabs(half - 1.5e-3) < 1e-15;
        return std::make_pair(ok, "peak " + fmt(peak) + " floor " + fmt(floor));
    });

    s.run("checkpoint round-trip reproduces logits bitwise", [&] {
        ModelConfig cfg = tiny_config();
        Model model(cfg, seed + 9);
        std::vector<int> tokens = {1, 5, 2, 9, 0, 3, 7, 4};
        std::vector<MemoryBank> banks = model.make_banks();
        Tensor before = model.forward(nullptr, tokens, banks);

        const auto path = std::filesystem::temp_directory_path() / "hctx_verify.ckpt";
        save_checkpoint(path.string(), model, model.make_banks());
        LoadedCheckpoint loaded = load_checkpoint(path.string());
        std::filesystem::remove(path);

        std::vector<MemoryBank> banks2 = loaded.model.make_banks();
        Tensor after = loaded.model.forward(nullptr, tokens, banks2);
        bool identical = before.numel() == after.numel();
        for (std::size_t i = 0; identical && i < before.numel(); ++i) {
            identical = before(i) == after(i);
        }
        return std::make_pair(identical,
                              identical ? std::string("bitwise identical")
                                        : "logits differ");
    });

    return s.checks;
}

}  // namespace hctx
