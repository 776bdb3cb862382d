#include "hctx/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "hctx/checkpoint.hpp"
#include "hctx/ops.hpp"

namespace hctx {

namespace {

// Fixed formatting so metrics files are byte-identical across runs.
std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

// argmax accuracy at masked positions.
void masked_accuracy(const Tensor& logits, const TaskSample& sample,
                     std::size_t& correct, std::size_t& total) {
    const std::size_t v = logits.extent(1);
    for (std::size_t t = 0; t < sample.mask.size(); ++t) {
        if (!sample.mask[t]) continue;
        const double* row = logits.data() + t * v;
        std::size_t best = 0;
        for (std::size_t j = 1; j < v; ++j) {
            if (row[j] > row[best]) best = j;
        }
        ++total;
        if (best == static_cast<std::size_t>(sample.target[t])) ++correct;
    }
}

constexpr std::uint64_t kEvalStream = 0xE7A1ull;

}  // namespace

void TrainConfig::validate() const {
    if (steps == 0 || batch_size == 0) {
        throw std::invalid_argument("train config: steps and batch_size must be positive");
    }
    if (warmup_steps < 1) throw std::invalid_argument("train config: warmup_steps >= 1");
    if (clip_norm <= 0.0) throw std::invalid_argument("train config: clip_norm > 0");
    if (task != "copy" && task != "kv_recall") {
        throw std::invalid_argument("train config: unknown task " + task);
    }
}

TaskSample make_sample(const TrainConfig& cfg, std::uint64_t seed) {
    if (cfg.task == "copy") return gen_copy_task(seed, cfg.copy_task);
    return gen_kv_recall(seed, cfg.kv_task);
}

std::string metrics_header(std::size_t n_layers) {
    std::string h = "step,loss,accuracy,lr";
    for (std::size_t l = 0; l < n_layers; ++l) {
        for (int i = 1; i <= 3; ++i) {
            h += ",lambda" + std::to_string(i) + "_l" + std::to_string(l);
        }
    }
    return h;
}

EvalResult evaluate(const Model& model, const TrainConfig& cfg,
                    std::size_t n_samples, std::uint64_t eval_seed) {
    const std::size_t window = cfg.window_chunks * model.config().chunk_size;
    std::size_t correct = 0, total = 0;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        TaskSample sample = make_sample(cfg, sample_seed(eval_seed, kEvalStream, i));
        std::vector<MemoryBank> banks = model.make_banks();
        Tensor logits = model.forward_windowed(nullptr, sample.input, banks, window);
        loss_sum += lm_loss(nullptr, logits, sample.target, sample.mask).value();
        masked_accuracy(logits, sample, correct, total);
    }
    EvalResult r;
    r.mean_loss = loss_sum / static_cast<double>(n_samples);
    r.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    return r;
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
    model_cfg.validate();
    train_cfg.validate();

    Model model(model_cfg, train_cfg.seed);
    AdamState opt;
    std::ostringstream csv;
    std::ostringstream log;
    // Mirror metrics/log to the output directory as training progresses so
    // interrupted runs still leave usable traces behind.
    std::ofstream csv_file, log_file;
    std::filesystem::path dir;
    if (!train_cfg.out_dir.empty()) {
        std::filesystem::create_directories(train_cfg.out_dir);
        dir = std::filesystem::path(train_cfg.out_dir);
        csv_file.open((dir / "metrics.csv").string(), std::ios::binary);
        log_file.open((dir / "train.log").string(), std::ios::binary);
    }
    auto emit_csv = [&](const std::string& text) {
        csv << text;
        if (csv_file.is_open()) {
            csv_file << text;
            csv_file.flush();
        }
    };
    auto emit_log = [&](const std::string& text) {
        log << text;
        if (log_file.is_open()) {
            log_file << text;
            log_file.flush();
        }
    };
    emit_csv(metrics_header(model_cfg.n_layers) + "\n");

    TrainResult result;
    for (std::size_t step = 1; step <= train_cfg.steps; ++step) {
        GradTape tape;
        Tensor batch_loss;
        std::size_t correct = 0, total = 0;
        for (std::size_t j = 0; j < train_cfg.batch_size; ++j) {
            TaskSample sample =
                make_sample(train_cfg, sample_seed(train_cfg.seed, step, j));
            std::vector<MemoryBank> banks = model.make_banks();
            Tensor logits = model.forward_windowed(
                &tape, sample.input, banks,
                train_cfg.window_chunks * model_cfg.chunk_size);
            Tensor loss = lm_loss(&tape, logits, sample.target, sample.mask);
            batch_loss = j == 0 ? loss : ops::add(&tape, batch_loss, loss);
            masked_accuracy(logits, sample, correct, total);
        }
        batch_loss = ops::scale(&tape, batch_loss,
                                1.0 / static_cast<double>(train_cfg.batch_size));
        const double loss_value = batch_loss.value();
        if (!std::isfinite(loss_value)) {
            throw std::runtime_error("training diverged: non-finite loss at step " +
                                     std::to_string(step));
        }
        model.params().zero_grad();
        tape.backward(batch_loss);
        // Parameters cut off by ablation switches get explicit zero grads.
        for (const std::string& name : model.params().names()) {
            model.params().get(name).grad();
        }
        clip_global_norm(model.params(), train_cfg.clip_norm);
        const double lr =
            lr_at(step, train_cfg.peak_lr, train_cfg.warmup_steps, train_cfg.steps);
        adam_step(model.params(), opt, lr);

        const double acc =
            total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
        std::string row = std::to_string(step) + "," + fmt(loss_value) + "," +
                          fmt(acc) + "," + fmt(lr);
        for (std::size_t l = 0; l < model_cfg.n_layers; ++l) {
            for (double lam : model.lambdas(l)) row += "," + fmt(lam);
        }
        emit_csv(row + "\n");
        result.steps_run = step;
        result.final_loss = loss_value;

        if (train_cfg.eval_every > 0 && step % train_cfg.eval_every == 0) {
            EvalResult ev = evaluate(model, train_cfg, train_cfg.eval_samples,
                                     train_cfg.seed + 1);
            emit_log("step " + std::to_string(step) + " loss " + fmt(loss_value) +
                     " eval_acc " + fmt(ev.accuracy) + " eval_loss " +
                     fmt(ev.mean_loss) + "\n");
            if (train_cfg.target_accuracy > 0.0 &&
                ev.accuracy >= train_cfg.target_accuracy) {
                emit_log("target accuracy reached at step " + std::to_string(step) +
                         "\n");
                break;
            }
        }
    }

    result.final_eval =
        evaluate(model, train_cfg, train_cfg.eval_samples, train_cfg.seed + 1);
    result.metrics_csv = csv.str();

    if (!train_cfg.out_dir.empty()) {
        csv_file.close();
        log_file.close();
        result.checkpoint_path = (dir / "model.ckpt").string();
        save_checkpoint(result.checkpoint_path, model, model.make_banks());
    }
    return result;
}

}  // namespace hctx
