#pragma once

#include <cstdint>
#include <vector>

#include "hctx/model.hpp"

namespace hctx {

struct BenchResult {
    double median_seconds = 0.0;
    std::vector<double> run_seconds;
};

// Times the hybrid attention stage (the enabled paths + fusion + memory
// writes, no FFN) of one block forward at sequence length t_len.
BenchResult bench_attention(const ModelConfig& cfg, std::size_t t_len,
                            std::size_t reps, std::uint64_t seed);

struct ScalingReport {
    double t1_seconds = 0.0;
    double t2_seconds = 0.0;
    double ratio = 0.0;
};

// Median attention time at t1 and t2 = 2*t1 for the paths enabled in cfg.
ScalingReport bench_scaling(const ModelConfig& cfg, std::size_t t1,
                            std::size_t reps, std::uint64_t seed);

}  // namespace hctx
