#pragma once

#include <filesystem>
#include <optional>

#include "ieatforge/model.hpp"

namespace ieatforge::trainkit {

struct PartitionOptions {
    // middle layers [n, L-k): trainable in Stage 1, frozen in Stage 2
    bool middle_trainable = true;
    bool update_text_head = true;
};

// Trainable view over the model's parameter groups. The text embedding is
// tied to the frozen bottom (frozen whenever n > 0); the speech adapter and
// speech heads always train; the final norm follows the text head flag.
struct Partition {
    std::set<std::string> trainable;
    bool is_trainable(const std::string& group) const { return trainable.count(group) > 0; }
};

Partition partition_layers(const ModelSpec& spec, int n, int k, const PartitionOptions& options);

// Zeroes gradients of frozen groups so the analytic gradient of a frozen
// parameter reads exactly 0.
void apply_partition_mask(Model& model, const Partition& partition);

struct OptimizerConfig {
    std::string kind = "sgd";  // sgd | adam
    double learning_rate = 0.2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config);

    // One update over trainable groups from the accumulated gradients.
    void step(Model& model, const Partition& partition);
    int64_t steps() const { return steps_; }
    const OptimizerConfig& config() const { return config_; }

    // Adam moments keyed by parameter name; empty for SGD.
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>& moments() {
        return moments_;
    }
    const std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>& moments()
        const {
        return moments_;
    }
    void set_steps(int64_t steps) { steps_ = steps; }

private:
    OptimizerConfig config_;
    int64_t steps_ = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

struct StepOptions {
    std::filesystem::path state_dump_dir;  // non-finite-loss dumps land here when set
};

// Stage 1: mean cross-entropy over supervised text positions, one update.
double stage1_step(Model& model, const std::vector<TrainExample>& batch, Optimizer& optimizer,
                   const Partition& partition, const StepOptions& options = {});

// Stage 2: joint text + lambda * speech optimization, one update. A batch
// whose speech stream is fully masked contributes speech_loss = 0.
std::pair<double, double> stage2_step(Model& model, const std::vector<TrainExample>& batch,
                                      Optimizer& optimizer, const Partition& partition,
                                      double lambda_speech, const StepOptions& options = {});

struct GradCheckResult {
    double max_rel_error = 0.0;
    size_t probes = 0;
};

// Central finite differences (f(x+eps) - f(x-eps)) / 2eps against the
// analytic gradient on a seeded subset of trainable parameters. Relative
// error uses a guarded denominator max(|fd| + |g|, 1e-6).
GradCheckResult gradient_check(Model& model, const TrainExample& example, double epsilon,
                               size_t subset_size, uint64_t seed, const Partition& partition,
                               double lambda_speech);

struct DecodeResult {
    std::vector<int> tokens;  // raw speech ids
    size_t forward_passes = 0;
    std::vector<json> log;  // one entry per forward pass
};

// Greedy per-head streaming decode: every forward pass emits m speech
// tokens. Stops at max_tokens or after emitting end_token.
DecodeResult streaming_decode(const Model& model, const std::vector<int>& prompt_ids, int m,
                              size_t max_tokens, std::optional<int> end_token = std::nullopt);

// Single-file checkpoint: magic, JSON header (spec, step, optimizer,
// tensor index), then raw little-endian doubles. Layout in docs/model.md.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const Optimizer& optimizer, int64_t step);

struct Checkpoint {
    Model model;
    OptimizerConfig optimizer_config;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
    int64_t step = 0;
    int64_t optimizer_steps = 0;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ieatforge::trainkit
