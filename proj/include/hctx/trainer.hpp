#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hctx/model.hpp"
#include "hctx/optim.hpp"
#include "hctx/tasks.hpp"

namespace hctx {

struct TrainConfig {
    std::size_t steps = 1000;
    std::size_t batch_size = 16;
    double peak_lr = 3e-3;
    std::size_t warmup_steps = 100;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    std::string task = "kv_recall";  // or "copy"
    CopyTaskConfig copy_task;
    KvRecallConfig kv_task;
    // Forward-window length in chunks. Long sequences are processed one
    // window at a time with the memory banks carried (detached) across
    // window boundaries, so cross-window information flows only through
    // the memory path. 0 forwards the whole sequence as one window.
    std::size_t window_chunks = 1;
    std::size_t eval_every = 100;  // 0 disables periodic eval
    std::size_t eval_samples = 64;
    // Stop once periodic eval accuracy reaches this value (0 disables).
    double target_accuracy = 0.0;
    std::string out_dir;  // empty keeps everything in memory

    void validate() const;
};

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

struct TrainResult {
    std::size_t steps_run = 0;
    double final_loss = 0.0;
    EvalResult final_eval;
    std::string metrics_csv;   // full CSV text (also written to out_dir)
    std::string checkpoint_path;  // empty when out_dir is empty
};

TaskSample make_sample(const TrainConfig& cfg, std::uint64_t seed);

// Deterministic training loop: per step, generate a batch (independent
// sequences, independent cold-start memory banks), forward, LM loss,
// backward, global-norm clip, Adam with warmup+cosine schedule. Logs one
// CSV row per step: step,loss,accuracy,lr, then lambda1..3 per layer.
// Aborts on non-finite loss.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

// Masked-token accuracy and mean loss over freshly generated samples.
EvalResult evaluate(const Model& model, const TrainConfig& cfg,
                    std::size_t n_samples, std::uint64_t eval_seed);

std::string metrics_header(std::size_t n_layers);

}  // namespace hctx
