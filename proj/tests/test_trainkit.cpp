#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ieatforge/clients.hpp"
#include "ieatforge/train.hpp"
#include "ieatforge/util.hpp"
#include "test_support.hpp"

using namespace ieatforge;
using namespace ieatforge::trainkit;

namespace {

ModelSpec tiny_spec() {
    ModelSpec spec;
    spec.total_layers = 2;
    spec.frozen_bottom = 1;
    spec.tuned_top = 1;
    spec.hidden_dim = 16;
    spec.head_count = 2;
    spec.text_vocab = 256;
    spec.speech_vocab = 32;
    spec.mtp_depth = 3;
    spec.speech_adapter_dim = 8;
    return spec;
}

WavData tiny_wav(uint64_t key, double seconds = 0.1) {
    WavData wav;
    wav.sample_rate_hz = 8000;
    size_t n = static_cast<size_t>(seconds * wav.sample_rate_hz);
    for (size_t i = 0; i < n; ++i) {
        key = key * 6364136223846793005ULL + 1442695040888963407ULL;
        wav.samples.push_back(static_cast<int16_t>((key >> 40) % 2000 - 1000));
    }
    return wav;
}

TrainExample joint_example(const ModelSpec& spec, const std::string& user,
                           const std::string& reasoning, const std::string& response,
                           uint64_t key) {
    ByteTokenizer text_tok;
    SpeechQuantizer speech_tok(spec.speech_vocab);
    WavData query = tiny_wav(key, 0.08);
    WavData answer = tiny_wav(key + 1, 0.12);
    TokenizeInputs in;
    in.user_text = user;
    in.reasoning = reasoning;
    in.response = response;
    in.query_audio = &query;
    in.response_audio = &answer;
    in.stage_tag = "stage2";
    return tokenize_example(in, text_tok, speech_tok, clients::ThinkTokens{}, spec.text_vocab);
}

std::vector<TrainExample> joint_batch(const ModelSpec& spec) {
    return {joint_example(spec, "hi", "happy mood", "hello there", 1),
            joint_example(spec, "sad day", "sad mood", "i am sorry", 2),
            joint_example(spec, "news!", "glad mood", "great news", 3),
            joint_example(spec, "tired", "worn out", "rest well", 4)};
}

Partition full_partition(const ModelSpec& spec) {
    return partition_layers(spec, 0, spec.total_layers, {true, true});
}

// independent per-head cross-entropy used as the oracle below
double oracle_next_token_ce(Model& model, const std::vector<std::vector<double>>& hidden,
                            const std::vector<int>& targets) {
    double sum = 0.0;
    size_t count = 0;
    for (size_t t = 0; t < targets.size(); ++t) {
        if (targets[t] < 0) continue;
        std::vector<double> logits = model.speech_head_logits(0, hidden[t]);
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : logits) z += std::exp(v - mx);
        sum += mx + std::log(z) - logits[targets[t]];
        ++count;
    }
    REQUIRE(count > 0);
    return sum / static_cast<double>(count);
}

}  // namespace

TEST_CASE("model spec validation") {
    ModelSpec bad = tiny_spec();
    bad.frozen_bottom = 3;
    bad.tuned_top = 2;  // 3 + 2 > 2 layers... exceeded below
    bad.total_layers = 4;
    CHECK_THROWS_AS(Model(bad, 1), InvalidSpecError);  // n + k = 5 > L = 4
    ModelSpec odd = tiny_spec();
    odd.hidden_dim = 15;
    CHECK_THROWS_AS(Model(odd, 1), InvalidSpecError);
    ModelSpec deep = tiny_spec();
    deep.mtp_depth = 9;
    CHECK_THROWS_AS(Model(deep, 1), InvalidSpecError);
}

TEST_CASE("parameter count matches the closed-form formula") {
    ModelSpec spec;
    spec.total_layers = 4;
    spec.frozen_bottom = 2;
    spec.tuned_top = 2;
    spec.hidden_dim = 32;
    spec.head_count = 2;
    spec.text_vocab = 256;
    spec.speech_vocab = 64;
    spec.mtp_depth = 2;
    spec.speech_adapter_dim = 16;
    Model model(spec, 7);

    // independent recount of the documented layout
    const int64_t d = 32, da = 16, Vt = 256, Vs = 64, L = 4, m = 2;
    int64_t expected = 0;
    expected += Vt * d;       // text embedding
    expected += Vs * da;      // speech embedding
    expected += d * da + d;   // adapter projection
    for (int l = 0; l < L; ++l) {
        expected += 2 * d;            // ln1
        expected += 4 * (d * d + d);  // q, k, v, o projections
        expected += 2 * d;            // ln2
        expected += (4 * d) * d + 4 * d;  // fc1
        expected += d * (4 * d) + d;      // fc2
    }
    expected += 2 * d;            // final norm
    expected += Vt * d + Vt;      // text head
    expected += m * (Vs * d + Vs);  // MTP heads

    CHECK(model.parameter_count() == expected);
    CHECK(spec.parameter_count() == expected);
}

TEST_CASE("initialization is seed-deterministic") {
    Model a(tiny_spec(), 42), b(tiny_spec(), 42), c(tiny_spec(), 43);
    CHECK(a.group_digests() == b.group_digests());
    CHECK(a.group_digests() != c.group_digests());
}

TEST_CASE("byte tokenizer round-trips any UTF-8 content") {
    ByteTokenizer tok;
    for (const std::string& text : {std::string("hello"), std::string("你好，世界"),
                                    std::string("<think>mixed 内容</think>")}) {
        CHECK(tok.decode(tok.encode(text)) == text);
    }
}

TEST_CASE("speech quantizer is deterministic with in-range ids") {
    SpeechQuantizer quant(32);
    WavData wav = tiny_wav(5, 0.2);  // 0.2 s / 20 ms = 10 frames
    auto ids = quant.quantize(wav);
    CHECK(ids.size() == 10);
    CHECK(quant.quantize(wav) == ids);
    for (int id : ids) {
        CHECK(id >= 0);
        CHECK(id < 32);
    }
}

TEST_CASE("stage 1-1 examples mask the speech stream entirely") {
    ModelSpec spec = tiny_spec();
    ByteTokenizer text_tok;
    SpeechQuantizer speech_tok(spec.speech_vocab);
    WavData query = tiny_wav(9, 0.1);
    TokenizeInputs in;
    in.user_text = "how are you";
    in.response = "fine, thanks";
    in.query_audio = &query;
    TrainExample ex = tokenize_example(in, text_tok, speech_tok, clients::ThinkTokens{},
                                       spec.text_vocab);
    for (int t : ex.speech_targets) CHECK(t == -1);
    size_t supervised = 0;
    for (int t : ex.text_targets) supervised += t >= 0;
    CHECK(supervised == in.response.size());  // byte tokens
}

TEST_CASE("supervised position count covers reasoning, response and delimiters") {
    ModelSpec spec = tiny_spec();
    ByteTokenizer text_tok;
    SpeechQuantizer speech_tok(spec.speech_vocab);
    TokenizeInputs in;
    in.user_text = "q";
    in.reasoning = "why so";   // 7 bytes
    in.response = "be well";   // 7 bytes
    TrainExample ex = tokenize_example(in, text_tok, speech_tok, clients::ThinkTokens{},
                                       spec.text_vocab);
    size_t supervised = 0;
    for (int t : ex.text_targets) supervised += t >= 0;
    // <think> (7) + reasoning (7) + </think> (8) + response (7)
    CHECK(supervised == 7 + 7 + 8 + 7);
}

TEST_CASE("partition_layers follows the n/k roles") {
    ModelSpec spec;
    spec.total_layers = 4;
    spec.frozen_bottom = 2;
    spec.tuned_top = 2;
    spec.hidden_dim = 16;
    spec.head_count = 2;
    spec.speech_vocab = 32;
    spec.speech_adapter_dim = 8;

    Partition stage2 = partition_layers(spec, 2, 2, {false, true});
    CHECK_FALSE(stage2.is_trainable("layer.0"));
    CHECK_FALSE(stage2.is_trainable("layer.1"));
    CHECK(stage2.is_trainable("layer.2"));
    CHECK(stage2.is_trainable("layer.3"));
    CHECK(stage2.is_trainable("speech_head.0"));
    CHECK(stage2.is_trainable("speech_adapter"));
    CHECK(stage2.is_trainable("text_head"));
    CHECK_FALSE(stage2.is_trainable("text_embed"));  // tied to the frozen bottom

    Partition all = partition_layers(spec, 0, 2, {true, true});
    for (int l = 0; l < 4; ++l) CHECK(all.is_trainable("layer." + std::to_string(l)));
    CHECK(all.is_trainable("text_embed"));

    CHECK_THROWS_AS(partition_layers(spec, 3, 2, {true, true}), InvalidPartitionError);
}

TEST_CASE("uniform logits from a zeroed text head give ln(vocab)") {
    ModelSpec spec = tiny_spec();
    Model model(spec, 11);
    model.zero_group("text_head");
    BatchLoss loss = model.compute_batch(joint_batch(spec), 0, 0.0, false);
    CHECK(loss.text_loss == doctest::Approx(std::log(spec.text_vocab)).epsilon(1e-5));
}

TEST_CASE("stage1_step rejects an all-masked batch") {
    ModelSpec spec = tiny_spec();
    Model model(spec, 3);
    Optimizer opt({.kind = "sgd", .learning_rate = 0.1});
    Partition part = full_partition(spec);
    TrainExample masked;
    masked.input_ids = {1, 2, 3};
    masked.text_targets = {-1, -1, -1};
    masked.speech_targets = {-1, -1, -1};
    CHECK_THROWS_AS(stage1_step(model, {masked}, opt, part), EmptySupervisionError);
}

TEST_CASE("non-finite loss aborts with a state dump") {
    auto dir = test_support::tmp_dir("trainkit_dump");
    ModelSpec spec = tiny_spec();
    Model model(spec, 3);
    model.param("text_head.b").w[0] = std::numeric_limits<double>::quiet_NaN();
    Optimizer opt({.kind = "sgd", .learning_rate = 0.1});
    Partition part = full_partition(spec);
    StepOptions options;
    options.state_dump_dir = dir;
    CHECK_THROWS_AS(stage1_step(model, joint_batch(spec), opt, part, options), NonFiniteLossError);
    CHECK(std::filesystem::exists(dir / "nonfinite_state.json"));
}

TEST_CASE("fifty stage-1 steps on a fixed batch halve the loss") {
    ModelSpec spec = tiny_spec();
    Model model(spec, 21);
    Optimizer opt({.kind = "sgd", .learning_rate = 0.5});
    Partition part = full_partition(spec);
    auto batch = joint_batch(spec);
    double initial = stage1_step(model, batch, opt, part);
    double last = initial;
    for (int i = 0; i < 49; ++i) last = stage1_step(model, batch, opt, part);
    CHECK(last < 0.5 * initial);
    CHECK(last > 0.0);
}

TEST_CASE("stage2 freeze contract: frozen digests identical over 10 steps") {
    ModelSpec spec = tiny_spec();
    spec.total_layers = 4;
    spec.frozen_bottom = 2;
    spec.tuned_top = 2;
    Model model(spec, 5);
    Optimizer opt({.kind = "sgd", .learning_rate = 0.2});
    Partition part = partition_layers(spec, 2, 2, {false, true});
    auto batch = joint_batch(spec);

    auto before = model.group_digests();
    for (int i = 0; i < 10; ++i) stage2_step(model, batch, opt, part, 1.0);
    auto after = model.group_digests();

    CHECK(after.at("layer.0") == before.at("layer.0"));
    CHECK(after.at("layer.1") == before.at("layer.1"));
    CHECK(after.at("text_embed") == before.at("text_embed"));
    CHECK(after.at("layer.3") != before.at("layer.3"));  // the tuned top actually moves
    CHECK(after.at("speech_head.0") != before.at("speech_head.0"));
}

TEST_CASE("lambda zero leaves speech heads bitwise untouched") {
    ModelSpec spec = tiny_spec();
    Model model(spec, 8);
    Optimizer opt({.kind = "sgd", .learning_rate = 0.3});
    Partition part = full_partition(spec);
    auto before = model.group_digests();
    stage2_step(model, joint_batch(spec), opt, part, 0.0);
    auto after = model.group_digests();
    for (int j = 0; j < spec.mtp_depth; ++j) {
        CHECK(after.at("speech_head." + std::to_string(j)) ==
              before.at("speech_head." + std::to_string(j)));
    }
    CHECK(after.at("text_head") != before.at("text_head"));
}

TEST_CASE("stage2 text loss equals stage1 loss when speech targets are masked") {
    ModelSpec spec = tiny_spec();
    auto batch = joint_batch(spec);
    for (auto& ex : batch) {
        std::fill(ex.speech_targets.begin(), ex.speech_targets.end(), -1);
    }
    Model a(spec, 33), b(spec, 33);
    Optimizer opt_a({.kind = "sgd", .learning_rate = 0.1});
    Optimizer opt_b({.kind = "sgd", .learning_rate = 0.1});
    Partition part = full_partition(spec);
    double stage1_loss = stage1_step(a, batch, opt_a, part);
    auto [text_loss, speech_loss] = stage2_step(b, batch, opt_b, part, 1.0);
    CHECK(text_loss == doctest::Approx(stage1_loss).epsilon(1e-12));
    CHECK(speech_loss == 0.0);
}

TEST_CASE("fifty stage-2 steps halve the joint loss on four examples") {
    ModelSpec spec = tiny_spec();
    Model model(spec, 55);
    Optimizer opt({.kind = "sgd", .learning_rate = 0.5});
    Partition part = full_partition(spec);
    auto batch = joint_batch(spec);
    auto [t0, s0] = stage2_step(model, batch, opt, part, 1.0);
    double initial = t0 + s0, last = initial;
    for (int i = 0; i < 49; ++i) {
        auto [t, s] = stage2_step(model, batch, opt, part, 1.0);
        last = t + s;
        CHECK(std::isfinite(last));
        CHECK(last > 0.0);
    }
    CHECK(last < 0.5 * initial);
}

TEST_CASE("mtp_loss with m=1 equals next-token cross-entropy on the same head") {
    ModelSpec spec = tiny_spec();
    spec.mtp_depth = 1;
    Model model(spec, 17);
    auto rng = make_rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        size_t T = 3 + rng() % 10;
        std::vector<int> ids(T), targets(T, -1);
        bool any = false;
        for (size_t t = 0; t < T; ++t) {
            ids[t] = spec.text_vocab + static_cast<int>(rng() % spec.speech_vocab);
            if (rng() % 3 != 0) {
                targets[t] = static_cast<int>(rng() % spec.speech_vocab);
                any = true;
            }
        }
        if (!any) targets[0] = 1;
        auto hidden = model.final_hidden(ids);
        double via_mtp = mtp_loss(model, hidden, targets, 1);
        double via_oracle = oracle_next_token_ce(model, hidden, targets);
        CHECK(std::abs(via_mtp - via_oracle) <=
              1e-6 * std::max({std::abs(via_mtp), std::abs(via_oracle), 1.0}));
    }
}

TEST_CASE("head offsets: with sequence length 5, head 3 supervises exactly 2 positions") {
    // pre-shifted targets of a 5-token stream: targets[t] names token t+1,
    // so the final slot is -1. Head 3 (offset 3) supervises t where t+2
    // indexes a live target: t = 0 (targets[2]) and t = 1 (targets[3]).
    std::vector<int> targets = {4, 7, 2, 9, -1};
    CHECK(mtp_head_positions(targets, 0).size() == 4);
    CHECK(mtp_head_positions(targets, 1).size() == 3);
    CHECK(mtp_head_positions(targets, 2).size() == 2);
    CHECK(mtp_head_positions(targets, 2) == std::vector<size_t>{0, 1});
}

TEST_CASE("mtp_loss on fully masked targets is the excluded-everything error") {
    ModelSpec spec = tiny_spec();
    Model model(spec, 2);
    std::vector<int> ids = {spec.text_vocab, spec.text_vocab + 1, spec.text_vocab + 2};
    auto hidden = model.final_hidden(ids);
    std::vector<int> masked = {-1, -1, -1};
    CHECK_THROWS_AS(mtp_loss(model, hidden, masked, 2), EmptySupervisionError);
    CHECK_THROWS_AS(mtp_loss(model, hidden, std::vector<int>{1, 1, 1}, 9),
                    DimensionMismatchError);
}

TEST_CASE("streaming decode with m=1 equals stepwise greedy decode") {
    ModelSpec spec = tiny_spec();
    Model model(spec, 12);
    std::vector<int> prompt = {10, 20, 30, spec.text_vocab + 5};

    DecodeResult streamed = streaming_decode(model, prompt, 1, 12);

    // independent greedy loop
    std::vector<int> ids = prompt, expected;
    for (int i = 0; i < 12; ++i) {
        auto hidden = model.final_hidden(ids);
        auto logits = model.speech_head_logits(0, hidden.back());
        int best = 0;
        for (int v = 1; v < spec.speech_vocab; ++v) {
            if (logits[v] > logits[best]) best = v;
        }
        expected.push_back(best);
        ids.push_back(spec.text_vocab + best);
    }
    CHECK(streamed.tokens == expected);
    CHECK(streamed.forward_passes == 12);
}

TEST_CASE("streaming decode emits m tokens per forward pass") {
    ModelSpec spec = tiny_spec();
    Model model(spec, 12);
    std::vector<int> prompt = {10, 20, 30};
    for (int m : {1, 2, 3}) {
        for (size_t max_tokens : {5, 6, 11}) {
            DecodeResult r = streaming_decode(model, prompt, m, max_tokens);
            CHECK(r.tokens.size() == max_tokens);
            CHECK(r.forward_passes ==
                  (max_tokens + static_cast<size_t>(m) - 1) / static_cast<size_t>(m));
            for (const json& entry : r.log) CHECK(entry.at("tokens_per_forward") == m);
        }
    }
    DecodeResult a = streaming_decode(model, prompt, 2, 10);
    DecodeResult b = streaming_decode(model, prompt, 2, 10);
    CHECK(a.tokens == b.tokens);
}

TEST_CASE("streaming decode stops at the end token") {
    ModelSpec spec = tiny_spec();
    Model model(spec, 12);
    std::vector<int> prompt = {10, 20, 30};
    DecodeResult unbounded = streaming_decode(model, prompt, 2, 16);
    REQUIRE_FALSE(unbounded.tokens.empty());
    int end_token = unbounded.tokens[3];
    DecodeResult stopped = streaming_decode(model, prompt, 2, 16, end_token);
    auto cut = std::find(stopped.tokens.begin(), stopped.tokens.end(), end_token);
    REQUIRE(cut != stopped.tokens.end());
    CHECK(cut + 1 == stopped.tokens.end());  // nothing after the end token
}

TEST_CASE("gradient check: analytic gradients match central finite differences") {
    ModelSpec spec = tiny_spec();  // L=2, hidden 16
    Model model(spec, 77);
    Partition part = partition_layers(spec, 1, 1, {true, true});
    TrainExample ex = joint_example(spec, "hello", "calm mood", "good day", 6);

    GradCheckResult r1 = gradient_check(model, ex, 1e-4, 48, 1234, part, 1.0);
    CHECK(r1.probes == 48);
    CHECK(r1.max_rel_error < 1e-4);

    GradCheckResult r2 = gradient_check(model, ex, 1e-4, 48, 1234, part, 1.0);
    CHECK(r1.max_rel_error == r2.max_rel_error);  // seed-reproducible
}

TEST_CASE("frozen parameters have exactly zero analytic gradient") {
    ModelSpec spec = tiny_spec();
    Model model(spec, 31);
    Partition part = partition_layers(spec, 1, 1, {true, true});
    model.zero_grads();
    model.compute_batch(joint_batch(spec), spec.mtp_depth, 1.0, true);
    apply_partition_mask(model, part);
    for (const Param& p : model.params()) {
        if (part.is_trainable(p.group)) continue;
        for (double g : p.g) REQUIRE(g == 0.0);
    }
}

TEST_CASE("checkpoints round-trip parameters, optimizer state and step") {
    auto dir = test_support::tmp_dir("trainkit_ckpt");
    ModelSpec spec = tiny_spec();
    Model model(spec, 3);
    Optimizer opt({.kind = "adam", .learning_rate = 0.01});
    Partition part = full_partition(spec);
    auto batch = joint_batch(spec);
    for (int i = 0; i < 3; ++i) stage2_step(model, batch, opt, part, 1.0);

    save_checkpoint(dir / "ckpt.bin", model, opt, 3);
    Checkpoint loaded = load_checkpoint(dir / "ckpt.bin");
    CHECK(loaded.step == 3);
    CHECK(loaded.optimizer_steps == 3);
    CHECK(loaded.optimizer_config.kind == "adam");
    CHECK(loaded.model.spec() == spec);
    CHECK(loaded.model.group_digests() == model.group_digests());
    CHECK(loaded.moments == opt.moments());

    // resumed training continues identically on both instances
    Optimizer resumed(loaded.optimizer_config);
    resumed.moments() = loaded.moments;
    resumed.set_steps(loaded.optimizer_steps);
    stage2_step(loaded.model, batch, resumed, part, 1.0);
    stage2_step(model, batch, opt, part, 1.0);
    CHECK(loaded.model.group_digests() == model.group_digests());
}
