#include "ieatforge/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ieatforge/errors.hpp"
#include "ieatforge/util.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint layout assumes a little-endian host");

namespace ieatforge::trainkit {

Partition partition_layers(const ModelSpec& spec, int n, int k, const PartitionOptions& options) {
    if (n < 0 || k < 1 || n + k > spec.total_layers) {
        throw InvalidPartitionError("need 0 <= n, 1 <= k, n + k <= total_layers");
    }
    Partition partition;
    for (int l = 0; l < spec.total_layers; ++l) {
        const bool frozen_bottom = l < n;
        const bool tuned_top = l >= spec.total_layers - k;
        if (frozen_bottom) continue;
        if (tuned_top || options.middle_trainable) {
            partition.trainable.insert("layer." + std::to_string(l));
        }
    }
    if (n == 0) partition.trainable.insert("text_embed");
    partition.trainable.insert("speech_adapter");
    if (options.update_text_head) {
        partition.trainable.insert("text_head");
        partition.trainable.insert("final_norm");
    }
    for (int m = 0; m < spec.mtp_depth; ++m) {
        partition.trainable.insert("speech_head." + std::to_string(m));
    }
    return partition;
}

void apply_partition_mask(Model& model, const Partition& partition) {
    for (Param& p : model.params()) {
        if (!partition.is_trainable(p.group)) std::fill(p.g.begin(), p.g.end(), 0.0);
    }
}

Optimizer::Optimizer(OptimizerConfig config) : config_(std::move(config)) {
    if (config_.kind != "sgd" && config_.kind != "adam") {
        throw InvalidSpecError("unknown optimizer kind: " + config_.kind);
    }
    if (config_.learning_rate <= 0) throw InvalidSpecError("learning_rate must be > 0");
}

void Optimizer::step(Model& model, const Partition& partition) {
    ++steps_;
    for (Param& p : model.params()) {
        if (!partition.is_trainable(p.group)) continue;
        if (config_.kind == "sgd") {
            for (size_t i = 0; i < p.size(); ++i) p.w[i] -= config_.learning_rate * p.g[i];
        } else {
            auto& [m, v] = moments_[p.name];
            if (m.empty()) {
                m.assign(p.size(), 0.0);
                v.assign(p.size(), 0.0);
            }
            const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
            const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
            for (size_t i = 0; i < p.size(); ++i) {
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * p.g[i];
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * p.g[i] * p.g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p.w[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.eps);
            }
        }
    }
}

namespace {

void dump_state(const Model& model, const std::filesystem::path& dir, double loss) {
    if (dir.empty()) return;
    json dump{{"loss", loss}, {"digests", model.group_digests()}};
    write_file(dir / "nonfinite_state.json", dump.dump(2));
}

}  // namespace

double stage1_step(Model& model, const std::vector<TrainExample>& batch, Optimizer& optimizer,
                   const Partition& partition, const StepOptions& options) {
    model.zero_grads();
    BatchLoss loss = model.compute_batch(batch, /*mtp_depth=*/0, /*lambda_speech=*/0.0,
                                         /*with_grads=*/true);
    if (loss.text_positions == 0) {
        throw EmptySupervisionError("stage 1 batch has no supervised text positions");
    }
    if (!std::isfinite(loss.text_loss)) {
        dump_state(model, options.state_dump_dir, loss.text_loss);
        throw NonFiniteLossError("stage 1 loss is not finite");
    }
    apply_partition_mask(model, partition);
    optimizer.step(model, partition);
    return loss.text_loss;
}

std::pair<double, double> stage2_step(Model& model, const std::vector<TrainExample>& batch,
                                      Optimizer& optimizer, const Partition& partition,
                                      double lambda_speech, const StepOptions& options) {
    model.zero_grads();
    BatchLoss loss = model.compute_batch(batch, model.spec().mtp_depth, lambda_speech,
                                         /*with_grads=*/true);
    if (loss.text_positions == 0 && loss.heads_supervised == 0) {
        throw EmptySupervisionError("stage 2 batch supervises nothing");
    }
    const double total = loss.total(lambda_speech);
    if (!std::isfinite(total)) {
        dump_state(model, options.state_dump_dir, total);
        throw NonFiniteLossError("stage 2 loss is not finite");
    }
    apply_partition_mask(model, partition);
    optimizer.step(model, partition);
    return {loss.text_loss, loss.speech_loss};
}

GradCheckResult gradient_check(Model& model, const TrainExample& example, double epsilon,
                               size_t subset_size, uint64_t seed, const Partition& partition,
                               double lambda_speech) {
    if (epsilon <= 0) throw PreconditionError("epsilon must be positive");
    const int mtp = model.spec().mtp_depth;

    model.zero_grads();
    model.compute_batch({example}, mtp, lambda_speech, /*with_grads=*/true);
    apply_partition_mask(model, partition);

    // flat index over trainable parameter entries
    std::vector<std::pair<size_t, size_t>> spans;  // (param index, size prefix)
    size_t total = 0;
    for (size_t pi = 0; pi < model.params().size(); ++pi) {
        const Param& p = model.params()[pi];
        if (!partition.is_trainable(p.group)) continue;
        spans.emplace_back(pi, total);
        total += p.size();
    }
    if (total == 0) throw PreconditionError("partition leaves nothing trainable");

    auto rng = make_rng(seed);
    GradCheckResult result;
    for (size_t probe = 0; probe < subset_size; ++probe) {
        size_t flat = std::uniform_int_distribution<size_t>(0, total - 1)(rng);
        size_t pi = 0, offset = 0;
        for (const auto& [param_index, prefix] : spans) {
            if (flat >= prefix && flat < prefix + model.params()[param_index].size()) {
                pi = param_index;
                offset = flat - prefix;
                break;
            }
        }
        Param& p = model.params()[pi];
        const double original = p.w[offset];

        p.w[offset] = original + epsilon;
        const double up = model.compute_batch({example}, mtp, lambda_speech, false)
                              .total(lambda_speech);
        p.w[offset] = original - epsilon;
        const double down = model.compute_batch({example}, mtp, lambda_speech, false)
                                .total(lambda_speech);
        p.w[offset] = original;

        const double fd = (up - down) / (2.0 * epsilon);
        const double analytic = p.g[offset];
        const double rel = std::abs(fd - analytic) / std::max(std::abs(fd) + std::abs(analytic), 1e-6);
        result.max_rel_error = std::max(result.max_rel_error, rel);
        ++result.probes;
    }
    return result;
}

DecodeResult streaming_decode(const Model& model, const std::vector<int>& prompt_ids, int m,
                              size_t max_tokens, std::optional<int> end_token) {
    const ModelSpec& spec = model.spec();
    if (m < 1 || m > spec.mtp_depth) {
        throw DimensionMismatchError("decode m outside [1, mtp_depth]");
    }
    if (prompt_ids.empty()) throw PreconditionError("decode needs a non-empty prompt");

    DecodeResult result;
    std::vector<int> ids = prompt_ids;
    bool done = false;
    while (!done && result.tokens.size() < max_tokens) {
        auto hidden = model.final_hidden(ids);
        ++result.forward_passes;
        json emitted = json::array();
        for (int j = 0; j < m && !done; ++j) {
            std::vector<double> logits = model.speech_head_logits(j, hidden.back());
            int best = 0;
            for (int i = 1; i < spec.speech_vocab; ++i) {
                if (logits[i] > logits[best]) best = i;
            }
            result.tokens.push_back(best);
            ids.push_back(spec.text_vocab + best);
            emitted.push_back(best);
            if (end_token && best == *end_token) done = true;
            if (result.tokens.size() >= max_tokens) done = true;
        }
        result.log.push_back(json{{"forward", result.forward_passes},
                                  {"emitted", emitted},
                                  {"tokens_per_forward", m}});
    }
    return result;
}

// --- checkpoint ---

namespace {

constexpr char kMagic[8] = {'I', 'E', 'A', 'T', 'C', 'K', 'P', '1'};

void append_doubles(std::string& out, const std::vector<double>& v) {
    const size_t bytes = v.size() * sizeof(double);
    const size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, v.data(), bytes);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const Optimizer& optimizer, int64_t step) {
    json tensors = json::array();
    std::string payload;
    for (const Param& p : model.params()) {
        tensors.push_back(json{{"name", p.name},
                               {"shape", p.shape},
                               {"offset", payload.size()},
                               {"count", p.size()}});
        append_doubles(payload, p.w);
    }
    json opt_tensors = json::array();
    for (const auto& [name, mv] : optimizer.moments()) {
        opt_tensors.push_back(json{{"name", name}, {"offset", payload.size()}, {"count", mv.first.size()}});
        append_doubles(payload, mv.first);
        append_doubles(payload, mv.second);
    }
    json header{{"spec", model.spec().to_json()},
                {"step", step},
                {"optimizer",
                 {{"kind", optimizer.config().kind},
                  {"learning_rate", optimizer.config().learning_rate},
                  {"beta1", optimizer.config().beta1},
                  {"beta2", optimizer.config().beta2},
                  {"eps", optimizer.config().eps},
                  {"steps", optimizer.steps()}}},
                {"tensors", tensors},
                {"opt_tensors", opt_tensors}};

    std::string header_str = header.dump();
    std::string out(kMagic, sizeof(kMagic));
    uint64_t header_len = header_str.size();
    out.append(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out += header_str;
    out += payload;
    write_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::string bytes = read_file(path);
    if (bytes.size() < sizeof(kMagic) + sizeof(uint64_t) ||
        std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw ForgeError("not a checkpoint file: " + path.string());
    }
    uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data() + sizeof(kMagic), sizeof(header_len));
    const size_t header_at = sizeof(kMagic) + sizeof(uint64_t);
    if (header_at + header_len > bytes.size()) throw ForgeError("truncated checkpoint header");
    json header = json::parse(bytes.substr(header_at, header_len));
    const size_t payload_at = header_at + header_len;

    ModelSpec spec = ModelSpec::from_json(header.at("spec"));
    Checkpoint ckpt{Model(spec, 0), OptimizerConfig{}, {}, 0, 0};
    ckpt.step = header.at("step").get<int64_t>();

    auto read_doubles = [&](size_t offset, size_t count, std::vector<double>& into) {
        const size_t at = payload_at + offset;
        if (at + count * sizeof(double) > bytes.size()) throw ForgeError("truncated checkpoint");
        into.resize(count);
        std::memcpy(into.data(), bytes.data() + at, count * sizeof(double));
    };

    for (const json& t : header.at("tensors")) {
        Param& p = ckpt.model.param(t.at("name").get<std::string>());
        size_t count = t.at("count").get<size_t>();
        if (count != p.size()) throw ForgeError("tensor size mismatch for " + p.name);
        read_doubles(t.at("offset").get<size_t>(), count, p.w);
    }

    const json& opt = header.at("optimizer");
    ckpt.optimizer_config.kind = opt.at("kind").get<std::string>();
    ckpt.optimizer_config.learning_rate = opt.at("learning_rate").get<double>();
    ckpt.optimizer_config.beta1 = opt.at("beta1").get<double>();
    ckpt.optimizer_config.beta2 = opt.at("beta2").get<double>();
    ckpt.optimizer_config.eps = opt.at("eps").get<double>();
    ckpt.optimizer_steps = opt.at("steps").get<int64_t>();
    for (const json& t : header.at("opt_tensors")) {
        auto& mv = ckpt.moments[t.at("name").get<std::string>()];
        size_t count = t.at("count").get<size_t>();
        read_doubles(t.at("offset").get<size_t>(), count, mv.first);
        read_doubles(t.at("offset").get<size_t>() + count * sizeof(double), count, mv.second);
    }
    return ckpt;
}

}  // namespace ieatforge::trainkit
