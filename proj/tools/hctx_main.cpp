// Command-line front end: train / eval / verify / bench.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hctx/bench.hpp"
#include "hctx/checkpoint.hpp"
#include "hctx/model.hpp"
#include "hctx/trainer.hpp"
#include "hctx/verify.hpp"

namespace {

struct ModelFlags {
    hctx::ModelConfig cfg;
    std::string write_policy = "gru_fifo";
    std::string precision = "f64";
    std::vector<std::string> disabled_paths;

    void attach(CLI::App& app) {
        app.add_option("--vocab", cfg.vocab_size, "vocabulary size");
        app.add_option("--d-model", cfg.d_model, "model width");
        app.add_option("--heads", cfg.n_heads, "attention heads");
        app.add_option("--layers", cfg.n_layers, "transformer blocks");
        app.add_option("--chunk-size", cfg.chunk_size, "local attention chunk length");
        app.add_option("--memory-slots", cfg.memory_slots, "memory bank capacity");
        app.add_option("--rope-spread", cfg.rope_spread,
                       "per-head rotary base spread factor");
        app.add_option("--max-positions", cfg.max_positions,
                       "rotary table length / max sequence length");
        app.add_option("--write-policy", write_policy, "gated_fifo or gru_fifo")
            ->check(CLI::IsMember({"gated_fifo", "gru_fifo"}));
        app.add_option("--precision", precision, "f32 or f64")
            ->check(CLI::IsMember({"f32", "f64"}));
        app.add_option("--disable-path", disabled_paths,
                       "disable an attention path (full, chunk or mem); repeatable")
            ->check(CLI::IsMember({"full", "chunk", "mem"}));
    }

    hctx::ModelConfig resolve() const {
        hctx::ModelConfig out = cfg;
        out.write_policy = hctx::parse_write_policy(write_policy);
        out.precision = precision == "f32" ? hctx::DType::F32 : hctx::DType::F64;
        for (const std::string& p : disabled_paths) {
            if (p == "full") out.path_full = false;
            if (p == "chunk") out.path_chunk = false;
            if (p == "mem") out.path_mem = false;
        }
        out.validate();
        return out;
    }
};

void sync_task_shapes(hctx::TrainConfig& tc, const hctx::ModelConfig& mc,
                      std::size_t seq_len) {
    tc.copy_task.seq_len = seq_len;
    tc.copy_task.vocab = mc.vocab_size;
    tc.kv_task.seq_len = seq_len;
    tc.kv_task.vocab = mc.vocab_size;
    tc.kv_task.chunk_size = mc.chunk_size;
}

int cmd_train(const ModelFlags& mf, hctx::TrainConfig tc, std::size_t seq_len,
              double target_acc) {
    hctx::ModelConfig mc = mf.resolve();
    if (seq_len + 1 > mc.max_positions) {
        std::cerr << "error: seq-len + 1 exceeds --max-positions\n";
        return 1;
    }
    sync_task_shapes(tc, mc, seq_len);
    tc.target_accuracy = target_acc;
    hctx::TrainResult r = hctx::train(mc, tc);
    std::printf("steps_run %zu\n", r.steps_run);
    std::printf("final_loss %.9g\n", r.final_loss);
    std::printf("eval_accuracy %.9g\n", r.final_eval.accuracy);
    std::printf("eval_loss %.9g\n", r.final_eval.mean_loss);
    if (!r.checkpoint_path.empty()) {
        std::printf("checkpoint %s\n", r.checkpoint_path.c_str());
    }
    return 0;
}

int cmd_eval(const std::string& ckpt, hctx::TrainConfig tc, std::size_t seq_len,
             std::size_t samples) {
    hctx::LoadedCheckpoint loaded = hctx::load_checkpoint(ckpt);
    sync_task_shapes(tc, loaded.model.config(), seq_len);
    hctx::EvalResult r = hctx::evaluate(loaded.model, tc, samples, tc.seed + 1);
    std::printf("eval_accuracy %.9g\n", r.accuracy);
    std::printf("eval_loss %.9g\n", r.mean_loss);
    return 0;
}

int cmd_verify(std::uint64_t seed) {
    bool all = true;
    for (const hctx::VerifyCheck& c : hctx::run_verification(seed)) {
        std::printf("[%s] %s (%s)\n", c.pass ? "pass" : "FAIL", c.name.c_str(),
                    c.detail.c_str());
        all = all && c.pass;
    }
    std::printf("%s\n", all ? "all checks passed" : "SOME CHECKS FAILED");
    return all ? 0 : 1;
}

int cmd_bench(const ModelFlags& mf, std::size_t t1, std::size_t reps,
              std::uint64_t seed) {
    hctx::ModelConfig mc = mf.resolve();
    hctx::ScalingReport r = hctx::bench_scaling(mc, t1, reps, seed);
    std::printf("t=%zu median_seconds %.6g\n", t1, r.t1_seconds);
    std::printf("t=%zu median_seconds %.6g\n", 2 * t1, r.t2_seconds);
    std::printf("ratio %.6g\n", r.ratio);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hybrid long-context transformer toolkit"};
    app.require_subcommand(1);

    ModelFlags train_mf, bench_mf;
    hctx::TrainConfig train_tc, eval_tc;
    std::size_t train_seq_len = 160, eval_seq_len = 160;
    double target_acc = 0.0;

    CLI::App* train = app.add_subcommand("train", "train on a synthetic task");
    train_mf.attach(*train);
    train->add_option("--task", train_tc.task, "copy or kv_recall")
        ->check(CLI::IsMember({"copy", "kv_recall"}));
    train->add_option("--steps", train_tc.steps, "optimizer steps");
    train->add_option("--batch", train_tc.batch_size, "sequences per step");
    train->add_option("--lr", train_tc.peak_lr, "peak learning rate");
    train->add_option("--warmup", train_tc.warmup_steps, "warmup steps");
    train->add_option("--clip", train_tc.clip_norm, "global gradient norm clip");
    train->add_option("--seed", train_tc.seed, "run seed");
    train->add_option("--out", train_tc.out_dir,
                      "output directory (metrics.csv, train.log, model.ckpt)");
    train->add_option("--seq-len", train_seq_len, "task sequence length");
    train->add_option("--window-chunks", train_tc.window_chunks,
                      "forward-window length in chunks (0 = whole sequence)");
    train->add_option("--eval-every", train_tc.eval_every,
                      "periodic eval interval (0 disables)");
    train->add_option("--eval-samples", train_tc.eval_samples, "sequences per eval");
    train->add_option("--target-accuracy", target_acc,
                      "stop once periodic eval accuracy reaches this (0 disables)");
    train->add_option("--kv-gap-chunks", train_tc.kv_task.gap_chunks,
                      "filler chunks between store and query");
    train->add_option("--kv-pairs", train_tc.kv_task.n_pairs, "stored pairs");
    train->add_option("--kv-decoys", train_tc.kv_task.decoys_per_gap_chunk,
                      "decoy pairs per filler chunk");
    train->add_option("--kv-keys", train_tc.kv_task.key_count,
                      "key token range size (0 = third of vocab)");
    train->add_option("--kv-values", train_tc.kv_task.value_count,
                      "value token range size (0 = third of vocab)");
    train->add_option("--kv-fillers", train_tc.kv_task.filler_count,
                      "distinct filler tokens (0 = whole filler range)");
    train->add_flag("--kv-candidates", train_tc.kv_task.candidates_in_query,
                    "embed the value set in the query chunk's filler");
    train->add_flag("--kv-shared", train_tc.kv_task.shared_key_value,
                    "draw values from the key range (value != its key)");
    train->add_option("--kv-queries", train_tc.kv_task.queries,
                      "query blocks at the tail (all masked, same pair)");
    train->add_option("--copy-span", train_tc.copy_task.span, "copied span length");

    std::string ckpt_path;
    std::size_t eval_samples = 256;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--task", eval_tc.task, "copy or kv_recall")
        ->check(CLI::IsMember({"copy", "kv_recall"}));
    eval->add_option("--samples", eval_samples, "sequences to evaluate");
    eval->add_option("--seed", eval_tc.seed, "sample stream seed");
    eval->add_option("--seq-len", eval_seq_len, "task sequence length");
    eval->add_option("--window-chunks", eval_tc.window_chunks,
                     "forward-window length in chunks (0 = whole sequence)");
    eval->add_option("--kv-gap-chunks", eval_tc.kv_task.gap_chunks,
                     "filler chunks between store and query");
    eval->add_option("--kv-pairs", eval_tc.kv_task.n_pairs, "stored pairs");
    eval->add_option("--kv-decoys", eval_tc.kv_task.decoys_per_gap_chunk,
                     "decoy pairs per filler chunk");
    eval->add_option("--kv-keys", eval_tc.kv_task.key_count,
                     "key token range size (0 = third of vocab)");
    eval->add_option("--kv-values", eval_tc.kv_task.value_count,
                     "value token range size (0 = third of vocab)");
    eval->add_option("--kv-fillers", eval_tc.kv_task.filler_count,
                     "distinct filler tokens (0 = whole filler range)");
    eval->add_flag("--kv-candidates", eval_tc.kv_task.candidates_in_query,
                   "embed the value set in the query chunk's filler");
    eval->add_flag("--kv-shared", eval_tc.kv_task.shared_key_value,
                   "draw values from the key range (value != its key)");
    eval->add_option("--kv-queries", eval_tc.kv_task.queries,
                     "query blocks at the tail (all masked, same pair)");
    eval->add_option("--copy-span", eval_tc.copy_task.span, "copied span length");

    std::uint64_t verify_seed = 0;
    CLI::App* verify = app.add_subcommand("verify", "run the numerical invariant suite");
    verify->add_option("--seed", verify_seed, "suite seed");

    std::size_t bench_t = 1024, bench_reps = 5;
    std::uint64_t bench_seed = 0;
    CLI::App* bench = app.add_subcommand("bench", "attention-stage scaling benchmark");
    bench_mf.attach(*bench);
    bench->add_option("--t", bench_t, "base sequence length (also timed at 2t)");
    bench->add_option("--reps", bench_reps, "timed repetitions (median)");
    bench->add_option("--seed", bench_seed, "init seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train_mf, train_tc, train_seq_len, target_acc);
        if (eval->parsed()) return cmd_eval(ckpt_path, eval_tc, eval_seq_len, eval_samples);
        if (verify->parsed()) return cmd_verify(verify_seed);
        if (bench->parsed()) return cmd_bench(bench_mf, bench_t, bench_reps, bench_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
