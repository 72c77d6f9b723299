#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ieatforge/jsonl.hpp"
#include "ieatforge/tokenizer.hpp"

namespace ieatforge::trainkit {

// Layer partition and head layout of the toy Listen-Think-Write-Speak
// decoder: speech-adapter embeddings (Listen), a shared trunk (Think), a
// text head on the final states (Write), and mtp_depth speech heads
// (Speak). The MLP width is fixed at 4 * hidden_dim.
struct ModelSpec {
    int total_layers = 4;    // L
    int frozen_bottom = 2;   // n
    int tuned_top = 2;       // k
    int hidden_dim = 32;
    int head_count = 2;
    int text_vocab = 256;
    int speech_vocab = 64;
    int mtp_depth = 2;  // m
    int speech_adapter_dim = 16;
    int max_mtp_depth = 4;

    void validate() const;  // InvalidSpecError
    int64_t parameter_count() const;

    json to_json() const;
    static ModelSpec from_json(const json& j);
    bool operator==(const ModelSpec&) const = default;
};

struct Param {
    std::string name;   // "layer.2.wq"
    std::string group;  // "layer.2"
    std::vector<int> shape;
    std::vector<double> w;
    std::vector<double> g;

    size_t size() const { return w.size(); }
};

struct BatchLoss {
    double text_loss = 0.0;
    double speech_loss = 0.0;  // mean over supervised heads of per-head CE
    size_t text_positions = 0;
    std::vector<size_t> head_positions;  // per MTP head
    size_t heads_supervised = 0;

    double total(double lambda_speech) const { return text_loss + lambda_speech * speech_loss; }
};

// Double-precision decoder-only transformer with explicit backprop. Small
// enough that every test can afford full finite-difference verification.
class Model {
public:
    Model(ModelSpec spec, uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    Param& param(const std::string& name);
    const Param& param(const std::string& name) const;

    int64_t parameter_count() const;
    void zero_grads();
    void zero_group(const std::string& group);

    // sha256 of each group's little-endian parameter bytes, in param order
    std::map<std::string, std::string> group_digests() const;
    std::set<std::string> groups() const;

    // Text + MTP losses over a batch; mtp_depth 0 skips the speech path
    // entirely (stage 1). Gradients accumulate when with_grads is set; the
    // speech gradient contribution is pre-scaled by lambda_speech so the
    // accumulated gradient is d(text + lambda * speech).
    BatchLoss compute_batch(const std::vector<TrainExample>& batch, int mtp_depth,
                            double lambda_speech, bool with_grads);

    // Hidden states after the final layer norm, one row per position.
    std::vector<std::vector<double>> final_hidden(const std::vector<int>& input_ids) const;

    // Logits of speech head `head` (0-based) on one hidden row.
    std::vector<double> speech_head_logits(int head, const std::vector<double>& hidden) const;
    std::vector<double> text_head_logits(const std::vector<double>& hidden) const;

private:
    ModelSpec spec_;
    std::vector<Param> params_;
    std::map<std::string, size_t> index_;

    void add_param(const std::string& name, const std::string& group, std::vector<int> shape);
};

// Mean over heads of per-head cross-entropy where head j (1-based offset j)
// predicts the target j positions ahead; masked and out-of-range offsets are
// excluded. Throws EmptySupervisionError when everything is excluded.
double mtp_loss(Model& model, const std::vector<std::vector<double>>& final_hidden,
                const std::vector<int>& speech_targets, int m);

// Positions supervised by 0-based head j under the pre-shifted target
// convention (offset j+1).
std::vector<size_t> mtp_head_positions(const std::vector<int>& speech_targets, int head);

}  // namespace ieatforge::trainkit
