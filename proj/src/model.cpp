#include "ieatforge/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "ieatforge/errors.hpp"
#include "ieatforge/sha256.hpp"
#include "ieatforge/util.hpp"

namespace ieatforge::trainkit {

void ModelSpec::validate() const {
    if (total_layers <= 0 || hidden_dim <= 0 || head_count <= 0 || text_vocab <= 0 ||
        speech_vocab <= 0 || speech_adapter_dim <= 0) {
        throw InvalidSpecError("all model dimensions must be positive");
    }
    if (frozen_bottom < 0) throw InvalidSpecError("frozen_bottom must be >= 0");
    if (tuned_top < 1) throw InvalidSpecError("tuned_top must be >= 1");
    if (frozen_bottom + tuned_top > total_layers) {
        throw InvalidSpecError("frozen_bottom + tuned_top exceeds total_layers");
    }
    if (mtp_depth < 1 || mtp_depth > max_mtp_depth) {
        throw InvalidSpecError("mtp_depth outside [1, max_mtp_depth]");
    }
    if (hidden_dim % head_count != 0) {
        throw InvalidSpecError("hidden_dim must be divisible by head_count");
    }
    if (text_vocab < 256) throw InvalidSpecError("text_vocab must cover the byte tokenizer (>= 256)");
}

int64_t ModelSpec::parameter_count() const {
    const int64_t d = hidden_dim, da = speech_adapter_dim;
    const int64_t per_layer = 12 * d * d + 13 * d;
    return static_cast<int64_t>(text_vocab) * d +              // text embedding
           static_cast<int64_t>(speech_vocab) * da +           // speech embedding
           d * da + d +                                        // adapter projection
           total_layers * per_layer +                          // trunk
           2 * d +                                             // final norm
           static_cast<int64_t>(text_vocab) * (d + 1) +        // text head
           static_cast<int64_t>(mtp_depth) * speech_vocab * (d + 1);  // MTP heads
}

json ModelSpec::to_json() const {
    return json{{"total_layers", total_layers},
                {"frozen_bottom", frozen_bottom},
                {"tuned_top", tuned_top},
                {"hidden_dim", hidden_dim},
                {"head_count", head_count},
                {"text_vocab", text_vocab},
                {"speech_vocab", speech_vocab},
                {"mtp_depth", mtp_depth},
                {"speech_adapter_dim", speech_adapter_dim},
                {"max_mtp_depth", max_mtp_depth}};
}

ModelSpec ModelSpec::from_json(const json& j) {
    ModelSpec s;
    s.total_layers = j.at("total_layers").get<int>();
    s.frozen_bottom = j.at("frozen_bottom").get<int>();
    s.tuned_top = j.at("tuned_top").get<int>();
    s.hidden_dim = j.at("hidden_dim").get<int>();
    s.head_count = j.at("head_count").get<int>();
    s.text_vocab = j.at("text_vocab").get<int>();
    s.speech_vocab = j.at("speech_vocab").get<int>();
    s.mtp_depth = j.at("mtp_depth").get<int>();
    s.speech_adapter_dim = j.at("speech_adapter_dim").get<int>();
    s.max_mtp_depth = j.value("max_mtp_depth", 4);
    return s;
}

// --- construction ---

void Model::add_param(const std::string& name, const std::string& group, std::vector<int> shape) {
    size_t n = 1;
    for (int s : shape) n *= static_cast<size_t>(s);
    Param p;
    p.name = name;
    p.group = group;
    p.shape = std::move(shape);
    p.w.assign(n, 0.0);
    p.g.assign(n, 0.0);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
}

Model::Model(ModelSpec spec, uint64_t seed) : spec_(spec) {
    spec_.validate();
    const int d = spec_.hidden_dim, da = spec_.speech_adapter_dim, ff = 4 * d;

    add_param("text_embed", "text_embed", {spec_.text_vocab, d});
    add_param("speech_embed", "speech_adapter", {spec_.speech_vocab, da});
    add_param("adapter_w", "speech_adapter", {d, da});
    add_param("adapter_b", "speech_adapter", {d});
    for (int l = 0; l < spec_.total_layers; ++l) {
        std::string g = "layer." + std::to_string(l);
        add_param(g + ".ln1_g", g, {d});
        add_param(g + ".ln1_b", g, {d});
        add_param(g + ".wq", g, {d, d});
        add_param(g + ".bq", g, {d});
        add_param(g + ".wk", g, {d, d});
        add_param(g + ".bk", g, {d});
        add_param(g + ".wv", g, {d, d});
        add_param(g + ".bv", g, {d});
        add_param(g + ".wo", g, {d, d});
        add_param(g + ".bo", g, {d});
        add_param(g + ".ln2_g", g, {d});
        add_param(g + ".ln2_b", g, {d});
        add_param(g + ".fc1_w", g, {ff, d});
        add_param(g + ".fc1_b", g, {ff});
        add_param(g + ".fc2_w", g, {d, ff});
        add_param(g + ".fc2_b", g, {d});
    }
    add_param("final_norm.g", "final_norm", {d});
    add_param("final_norm.b", "final_norm", {d});
    add_param("text_head.w", "text_head", {spec_.text_vocab, d});
    add_param("text_head.b", "text_head", {spec_.text_vocab});
    for (int m = 0; m < spec_.mtp_depth; ++m) {
        std::string g = "speech_head." + std::to_string(m);
        add_param(g + ".w", g, {spec_.speech_vocab, d});
        add_param(g + ".b", g, {spec_.speech_vocab});
    }

    // seed-deterministic init: N(0, 0.02) weights, zero biases, unit norms
    auto rng = make_rng(seed);
    std::normal_distribution<double> dist(0.0, 0.02);
    for (Param& p : params_) {
        bool is_bias = p.shape.size() == 1;
        bool is_norm_gain = p.name.ends_with("ln1_g") || p.name.ends_with("ln2_g") ||
                            p.name == "final_norm.g";
        if (is_norm_gain) {
            std::fill(p.w.begin(), p.w.end(), 1.0);
        } else if (is_bias) {
            // biases and norm shifts start at zero
        } else {
            for (double& v : p.w) v = dist(rng);
        }
    }
}

Param& Model::param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw DimensionMismatchError("no parameter named " + name);
    return params_[it->second];
}

const Param& Model::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DimensionMismatchError("no parameter named " + name);
    return params_[it->second];
}

int64_t Model::parameter_count() const {
    int64_t n = 0;
    for (const Param& p : params_) n += static_cast<int64_t>(p.size());
    return n;
}

void Model::zero_grads() {
    for (Param& p : params_) std::fill(p.g.begin(), p.g.end(), 0.0);
}

void Model::zero_group(const std::string& group) {
    for (Param& p : params_) {
        if (p.group == group) std::fill(p.w.begin(), p.w.end(), 0.0);
    }
}

std::map<std::string, std::string> Model::group_digests() const {
    std::map<std::string, Sha256> hashers;
    std::vector<std::string> order;
    for (const Param& p : params_) {
        if (!hashers.count(p.group)) order.push_back(p.group);
        hashers[p.group].update(p.w.data(), p.w.size() * sizeof(double));
    }
    std::map<std::string, std::string> digests;
    static const char* hex = "0123456789abcdef";
    for (const std::string& g : order) {
        auto bytes = hashers[g].finish();
        std::string out;
        for (uint8_t b : bytes) {
            out += hex[b >> 4];
            out += hex[b & 0xf];
        }
        digests[g] = out;
    }
    return digests;
}

std::set<std::string> Model::groups() const {
    std::set<std::string> out;
    for (const Param& p : params_) out.insert(p.group);
    return out;
}

// --- forward / backward machinery ---

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

// y[o] = W[o,:] . x + b[o]
void linear(const double* w, const double* b, const double* x, double* y, int out, int in) {
    for (int o = 0; o < out; ++o) {
        const double* row = w + static_cast<size_t>(o) * in;
        double acc = b ? b[o] : 0.0;
        for (int i = 0; i < in; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

// accumulate dW += dy (x) x, db += dy, dx += W^T dy
void linear_backward(const double* w, const double* x, const double* dy, double* dw, double* db,
                     double* dx, int out, int in) {
    for (int o = 0; o < out; ++o) {
        const double g = dy[o];
        if (g == 0.0) continue;
        const double* row = w + static_cast<size_t>(o) * in;
        double* drow = dw + static_cast<size_t>(o) * in;
        for (int i = 0; i < in; ++i) {
            drow[i] += g * x[i];
            if (dx) dx[i] += row[i] * g;
        }
        if (db) db[o] += g;
    }
}

void layer_norm(const double* x, const double* g, const double* b, double* y, double& mean_out,
                double& rstd_out, int d) {
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += x[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
        double c = x[i] - mean;
        var += c * c;
    }
    var /= d;
    double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (int i = 0; i < d; ++i) y[i] = (x[i] - mean) * rstd * g[i] + b[i];
    mean_out = mean;
    rstd_out = rstd;
}

void layer_norm_backward(const double* x, const double* g, const double* dy, double mean,
                         double rstd, double* dx, double* dg, double* db, int d) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (int i = 0; i < d; ++i) {
        double xhat = (x[i] - mean) * rstd;
        double dxhat = dy[i] * g[i];
        dg[i] += dy[i] * xhat;
        db[i] += dy[i];
        mean_dxhat += dxhat;
        mean_dxhat_xhat += dxhat * xhat;
    }
    mean_dxhat /= d;
    mean_dxhat_xhat /= d;
    for (int i = 0; i < d; ++i) {
        double xhat = (x[i] - mean) * rstd;
        double dxhat = dy[i] * g[i];
        dx[i] += rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
    }
}

double log_sum_exp(const double* z, int n) {
    double mx = z[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, z[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += std::exp(z[i] - mx);
    return mx + std::log(sum);
}

std::vector<double> sinusoidal_pe(int t, int d) {
    std::vector<double> pe(d);
    for (int i = 0; i < d; i += 2) {
        double div = std::exp(-std::log(10000.0) * i / d);
        pe[i] = std::sin(t * div);
        if (i + 1 < d) pe[i + 1] = std::cos(t * div);
    }
    return pe;
}

struct LayerCache {
    std::vector<double> x_in, norm1, mean1, rstd1;
    std::vector<double> q, k, v, attn, ctx;
    std::vector<double> x_mid, norm2, mean2, rstd2;
    std::vector<double> h1, act;
};

struct ForwardCache {
    int T = 0;
    std::vector<double> x0;  // embeddings + positional encoding
    std::vector<LayerCache> layers;
    std::vector<double> xf, normf, meanf, rstdf;
};

}  // namespace

// Runs the trunk, filling the cache. Implemented as a member-free helper so
// the const forward paths can share it.
static void run_forward(const Model& model, const std::vector<int>& ids, ForwardCache& cache) {
    const ModelSpec& spec = model.spec();
    const int T = static_cast<int>(ids.size());
    const int d = spec.hidden_dim, h = spec.head_count, dh = d / h, ff = 4 * d;
    if (T == 0) throw DimensionMismatchError("empty input sequence");
    cache.T = T;

    const Param& text_embed = model.param("text_embed");
    const Param& speech_embed = model.param("speech_embed");
    const Param& adapter_w = model.param("adapter_w");
    const Param& adapter_b = model.param("adapter_b");

    cache.x0.assign(static_cast<size_t>(T) * d, 0.0);
    for (int t = 0; t < T; ++t) {
        int id = ids[t];
        double* x = &cache.x0[static_cast<size_t>(t) * d];
        if (id >= 0 && id < spec.text_vocab) {
            const double* e = &text_embed.w[static_cast<size_t>(id) * d];
            std::copy(e, e + d, x);
        } else if (id >= spec.text_vocab && id < spec.text_vocab + spec.speech_vocab) {
            const double* e = &speech_embed.w[static_cast<size_t>(id - spec.text_vocab) *
                                              spec.speech_adapter_dim];
            linear(adapter_w.w.data(), adapter_b.w.data(), e, x, d, spec.speech_adapter_dim);
        } else {
            throw DimensionMismatchError("token id outside unified vocab: " + std::to_string(id));
        }
        std::vector<double> pe = sinusoidal_pe(t, d);
        for (int i = 0; i < d; ++i) x[i] += pe[i];
    }

    std::vector<double> x = cache.x0;
    cache.layers.resize(spec.total_layers);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (int l = 0; l < spec.total_layers; ++l) {
        LayerCache& lc = cache.layers[l];
        const std::string g = "layer." + std::to_string(l);
        const Param& ln1_g = model.param(g + ".ln1_g");
        const Param& ln1_b = model.param(g + ".ln1_b");
        const Param& wq = model.param(g + ".wq");
        const Param& bq = model.param(g + ".bq");
        const Param& wk = model.param(g + ".wk");
        const Param& bk = model.param(g + ".bk");
        const Param& wv = model.param(g + ".wv");
        const Param& bv = model.param(g + ".bv");
        const Param& wo = model.param(g + ".wo");
        const Param& bo = model.param(g + ".bo");
        const Param& ln2_g = model.param(g + ".ln2_g");
        const Param& ln2_b = model.param(g + ".ln2_b");
        const Param& fc1_w = model.param(g + ".fc1_w");
        const Param& fc1_b = model.param(g + ".fc1_b");
        const Param& fc2_w = model.param(g + ".fc2_w");
        const Param& fc2_b = model.param(g + ".fc2_b");

        lc.x_in = x;
        lc.norm1.assign(static_cast<size_t>(T) * d, 0.0);
        lc.mean1.assign(T, 0.0);
        lc.rstd1.assign(T, 0.0);
        lc.q.assign(static_cast<size_t>(T) * d, 0.0);
        lc.k.assign(static_cast<size_t>(T) * d, 0.0);
        lc.v.assign(static_cast<size_t>(T) * d, 0.0);
        lc.attn.assign(static_cast<size_t>(h) * T * T, 0.0);
        lc.ctx.assign(static_cast<size_t>(T) * d, 0.0);

        for (int t = 0; t < T; ++t) {
            layer_norm(&lc.x_in[static_cast<size_t>(t) * d], ln1_g.w.data(), ln1_b.w.data(),
                       &lc.norm1[static_cast<size_t>(t) * d], lc.mean1[t], lc.rstd1[t], d);
            linear(wq.w.data(), bq.w.data(), &lc.norm1[static_cast<size_t>(t) * d],
                   &lc.q[static_cast<size_t>(t) * d], d, d);
            linear(wk.w.data(), bk.w.data(), &lc.norm1[static_cast<size_t>(t) * d],
                   &lc.k[static_cast<size_t>(t) * d], d, d);
            linear(wv.w.data(), bv.w.data(), &lc.norm1[static_cast<size_t>(t) * d],
                   &lc.v[static_cast<size_t>(t) * d], d, d);
        }

        for (int hh = 0; hh < h; ++hh) {
            const int off = hh * dh;
            for (int t = 0; t < T; ++t) {
                double* att_row = &lc.attn[(static_cast<size_t>(hh) * T + t) * T];
                double mx = -1e300;
                for (int u = 0; u <= t; ++u) {
                    double dot = 0.0;
                    const double* qt = &lc.q[static_cast<size_t>(t) * d + off];
                    const double* ku = &lc.k[static_cast<size_t>(u) * d + off];
                    for (int i = 0; i < dh; ++i) dot += qt[i] * ku[i];
                    att_row[u] = dot * scale;
                    mx = std::max(mx, att_row[u]);
                }
                double sum = 0.0;
                for (int u = 0; u <= t; ++u) {
                    att_row[u] = std::exp(att_row[u] - mx);
                    sum += att_row[u];
                }
                double* ctx = &lc.ctx[static_cast<size_t>(t) * d + off];
                for (int u = 0; u <= t; ++u) {
                    att_row[u] /= sum;
                    const double* vu = &lc.v[static_cast<size_t>(u) * d + off];
                    for (int i = 0; i < dh; ++i) ctx[i] += att_row[u] * vu[i];
                }
            }
        }

        lc.x_mid.assign(static_cast<size_t>(T) * d, 0.0);
        std::vector<double> attn_out(d);
        for (int t = 0; t < T; ++t) {
            linear(wo.w.data(), bo.w.data(), &lc.ctx[static_cast<size_t>(t) * d], attn_out.data(), d,
                   d);
            for (int i = 0; i < d; ++i) {
                lc.x_mid[static_cast<size_t>(t) * d + i] =
                    lc.x_in[static_cast<size_t>(t) * d + i] + attn_out[i];
            }
        }

        lc.norm2.assign(static_cast<size_t>(T) * d, 0.0);
        lc.mean2.assign(T, 0.0);
        lc.rstd2.assign(T, 0.0);
        lc.h1.assign(static_cast<size_t>(T) * ff, 0.0);
        lc.act.assign(static_cast<size_t>(T) * ff, 0.0);
        std::vector<double> mlp_out(d);
        for (int t = 0; t < T; ++t) {
            layer_norm(&lc.x_mid[static_cast<size_t>(t) * d], ln2_g.w.data(), ln2_b.w.data(),
                       &lc.norm2[static_cast<size_t>(t) * d], lc.mean2[t], lc.rstd2[t], d);
            linear(fc1_w.w.data(), fc1_b.w.data(), &lc.norm2[static_cast<size_t>(t) * d],
                   &lc.h1[static_cast<size_t>(t) * ff], ff, d);
            for (int i = 0; i < ff; ++i) {
                lc.act[static_cast<size_t>(t) * ff + i] = gelu(lc.h1[static_cast<size_t>(t) * ff + i]);
            }
            linear(fc2_w.w.data(), fc2_b.w.data(), &lc.act[static_cast<size_t>(t) * ff],
                   mlp_out.data(), d, ff);
            for (int i = 0; i < d; ++i) {
                x[static_cast<size_t>(t) * d + i] =
                    lc.x_mid[static_cast<size_t>(t) * d + i] + mlp_out[i];
            }
        }
    }

    cache.xf = x;
    cache.normf.assign(static_cast<size_t>(T) * d, 0.0);
    cache.meanf.assign(T, 0.0);
    cache.rstdf.assign(T, 0.0);
    const Param& fg = model.param("final_norm.g");
    const Param& fb = model.param("final_norm.b");
    for (int t = 0; t < T; ++t) {
        layer_norm(&cache.xf[static_cast<size_t>(t) * d], fg.w.data(), fb.w.data(),
                   &cache.normf[static_cast<size_t>(t) * d], cache.meanf[t], cache.rstdf[t], d);
    }
}

// Backward through trunk and embeddings given d(normf).
static void run_backward(Model& model, const std::vector<int>& ids, const ForwardCache& cache,
                         std::vector<double>& dnormf) {
    const ModelSpec& spec = model.spec();
    const int T = cache.T, d = spec.hidden_dim, h = spec.head_count, dh = d / h, ff = 4 * d;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Param& fg = model.param("final_norm.g");
    Param& fb = model.param("final_norm.b");
    std::vector<double> dx(static_cast<size_t>(T) * d, 0.0);
    for (int t = 0; t < T; ++t) {
        layer_norm_backward(&cache.xf[static_cast<size_t>(t) * d], fg.w.data(),
                            &dnormf[static_cast<size_t>(t) * d], cache.meanf[t], cache.rstdf[t],
                            &dx[static_cast<size_t>(t) * d], fg.g.data(), fb.g.data(), d);
    }

    for (int l = spec.total_layers - 1; l >= 0; --l) {
        const LayerCache& lc = cache.layers[l];
        const std::string g = "layer." + std::to_string(l);
        Param& ln1_g = model.param(g + ".ln1_g");
        Param& ln1_b = model.param(g + ".ln1_b");
        Param& wq = model.param(g + ".wq");
        Param& bq = model.param(g + ".bq");
        Param& wk = model.param(g + ".wk");
        Param& bk = model.param(g + ".bk");
        Param& wv = model.param(g + ".wv");
        Param& bv = model.param(g + ".bv");
        Param& wo = model.param(g + ".wo");
        Param& bo = model.param(g + ".bo");
        Param& ln2_g = model.param(g + ".ln2_g");
        Param& ln2_b = model.param(g + ".ln2_b");
        Param& fc1_w = model.param(g + ".fc1_w");
        Param& fc1_b = model.param(g + ".fc1_b");
        Param& fc2_w = model.param(g + ".fc2_w");
        Param& fc2_b = model.param(g + ".fc2_b");

        // MLP sublayer: dx is the gradient at the layer output
        std::vector<double> dx_mid = dx;  // residual branch
        std::vector<double> dact(ff), dh1(ff), dnorm2(static_cast<size_t>(T) * d, 0.0);
        for (int t = 0; t < T; ++t) {
            const double* dy = &dx[static_cast<size_t>(t) * d];
            std::fill(dact.begin(), dact.end(), 0.0);
            linear_backward(fc2_w.w.data(), &lc.act[static_cast<size_t>(t) * ff], dy,
                            fc2_w.g.data(), fc2_b.g.data(), dact.data(), d, ff);
            for (int i = 0; i < ff; ++i) {
                dh1[i] = dact[i] * gelu_grad(lc.h1[static_cast<size_t>(t) * ff + i]);
            }
            linear_backward(fc1_w.w.data(), &lc.norm2[static_cast<size_t>(t) * d], dh1.data(),
                            fc1_w.g.data(), fc1_b.g.data(), &dnorm2[static_cast<size_t>(t) * d], ff,
                            d);
            layer_norm_backward(&lc.x_mid[static_cast<size_t>(t) * d], ln2_g.w.data(),
                                &dnorm2[static_cast<size_t>(t) * d], lc.mean2[t], lc.rstd2[t],
                                &dx_mid[static_cast<size_t>(t) * d], ln2_g.g.data(), ln2_b.g.data(),
                                d);
        }

        // attention sublayer
        std::vector<double> dx_in = dx_mid;  // residual branch
        std::vector<double> dctx(static_cast<size_t>(T) * d, 0.0);
        for (int t = 0; t < T; ++t) {
            linear_backward(wo.w.data(), &lc.ctx[static_cast<size_t>(t) * d],
                            &dx_mid[static_cast<size_t>(t) * d], wo.g.data(), bo.g.data(),
                            &dctx[static_cast<size_t>(t) * d], d, d);
        }

        std::vector<double> dq(static_cast<size_t>(T) * d, 0.0), dk(static_cast<size_t>(T) * d, 0.0),
            dv(static_cast<size_t>(T) * d, 0.0);
        std::vector<double> datt(T), dscore(T);
        for (int hh = 0; hh < h; ++hh) {
            const int off = hh * dh;
            for (int t = 0; t < T; ++t) {
                const double* att_row = &lc.attn[(static_cast<size_t>(hh) * T + t) * T];
                const double* dctx_t = &dctx[static_cast<size_t>(t) * d + off];
                double inner = 0.0;
                for (int u = 0; u <= t; ++u) {
                    const double* vu = &lc.v[static_cast<size_t>(u) * d + off];
                    double dot = 0.0;
                    for (int i = 0; i < dh; ++i) {
                        dot += dctx_t[i] * vu[i];
                        dv[static_cast<size_t>(u) * d + off + i] += att_row[u] * dctx_t[i];
                    }
                    datt[u] = dot;
                    inner += att_row[u] * dot;
                }
                for (int u = 0; u <= t; ++u) dscore[u] = att_row[u] * (datt[u] - inner);
                double* dq_t = &dq[static_cast<size_t>(t) * d + off];
                const double* q_t = &lc.q[static_cast<size_t>(t) * d + off];
                for (int u = 0; u <= t; ++u) {
                    const double s = dscore[u] * scale;
                    if (s == 0.0) continue;
                    const double* ku = &lc.k[static_cast<size_t>(u) * d + off];
                    double* dk_u = &dk[static_cast<size_t>(u) * d + off];
                    for (int i = 0; i < dh; ++i) {
                        dq_t[i] += s * ku[i];
                        dk_u[i] += s * q_t[i];
                    }
                }
            }
        }

        std::vector<double> dnorm1(static_cast<size_t>(T) * d, 0.0);
        for (int t = 0; t < T; ++t) {
            const double* n1 = &lc.norm1[static_cast<size_t>(t) * d];
            linear_backward(wq.w.data(), n1, &dq[static_cast<size_t>(t) * d], wq.g.data(),
                            bq.g.data(), &dnorm1[static_cast<size_t>(t) * d], d, d);
            linear_backward(wk.w.data(), n1, &dk[static_cast<size_t>(t) * d], wk.g.data(),
                            bk.g.data(), &dnorm1[static_cast<size_t>(t) * d], d, d);
            linear_backward(wv.w.data(), n1, &dv[static_cast<size_t>(t) * d], wv.g.data(),
                            bv.g.data(), &dnorm1[static_cast<size_t>(t) * d], d, d);
            layer_norm_backward(&lc.x_in[static_cast<size_t>(t) * d], ln1_g.w.data(),
                                &dnorm1[static_cast<size_t>(t) * d], lc.mean1[t], lc.rstd1[t],
                                &dx_in[static_cast<size_t>(t) * d], ln1_g.g.data(), ln1_b.g.data(),
                                d);
        }
        dx = std::move(dx_in);
    }

    // embedding backward
    Param& text_embed = model.param("text_embed");
    Param& speech_embed = model.param("speech_embed");
    Param& adapter_w = model.param("adapter_w");
    Param& adapter_b = model.param("adapter_b");
    const int da = spec.speech_adapter_dim;
    for (int t = 0; t < T; ++t) {
        const double* dx_t = &dx[static_cast<size_t>(t) * d];
        int id = ids[t];
        if (id < spec.text_vocab) {
            double* ge = &text_embed.g[static_cast<size_t>(id) * d];
            for (int i = 0; i < d; ++i) ge[i] += dx_t[i];
        } else {
            const int s = id - spec.text_vocab;
            const double* e = &speech_embed.w[static_cast<size_t>(s) * da];
            double* de = &speech_embed.g[static_cast<size_t>(s) * da];
            linear_backward(adapter_w.w.data(), e, dx_t, adapter_w.g.data(), adapter_b.g.data(), de,
                            d, da);
        }
    }
}

std::vector<size_t> mtp_head_positions(const std::vector<int>& speech_targets, int head) {
    std::vector<size_t> positions;
    const size_t T = speech_targets.size();
    for (size_t t = 0; t < T; ++t) {
        const size_t target_index = t + static_cast<size_t>(head);
        if (target_index < T && speech_targets[target_index] >= 0) positions.push_back(t);
    }
    return positions;
}

BatchLoss Model::compute_batch(const std::vector<TrainExample>& batch, int mtp_depth,
                               double lambda_speech, bool with_grads) {
    if (mtp_depth < 0 || mtp_depth > spec_.mtp_depth) {
        throw DimensionMismatchError("mtp_depth outside [0, spec.mtp_depth]");
    }
    BatchLoss loss;
    loss.head_positions.assign(static_cast<size_t>(std::max(mtp_depth, 0)), 0);

    for (const TrainExample& ex : batch) {
        if (ex.input_ids.size() != ex.text_targets.size() ||
            ex.input_ids.size() != ex.speech_targets.size()) {
            throw DimensionMismatchError("target lengths must match input length");
        }
        for (int t : ex.text_targets) loss.text_positions += (t >= 0) ? 1 : 0;
        for (int j = 0; j < mtp_depth; ++j) {
            loss.head_positions[j] += mtp_head_positions(ex.speech_targets, j).size();
        }
    }
    for (size_t c : loss.head_positions) loss.heads_supervised += (c > 0) ? 1 : 0;

    const double text_w = loss.text_positions > 0 ? 1.0 / loss.text_positions : 0.0;
    const int d = spec_.hidden_dim;

    Param& thw = param("text_head.w");
    Param& thb = param("text_head.b");

    for (const TrainExample& ex : batch) {
        ForwardCache cache;
        run_forward(*this, ex.input_ids, cache);
        const int T = cache.T;
        std::vector<double> dnormf;
        if (with_grads) dnormf.assign(static_cast<size_t>(T) * d, 0.0);

        // text loss
        std::vector<double> logits(spec_.text_vocab), probs;
        for (int t = 0; t < T; ++t) {
            const int target = ex.text_targets[t];
            if (target < 0) continue;
            const double* hidden = &cache.normf[static_cast<size_t>(t) * d];
            linear(thw.w.data(), thb.w.data(), hidden, logits.data(), spec_.text_vocab, d);
            const double lse = log_sum_exp(logits.data(), spec_.text_vocab);
            loss.text_loss += text_w * (lse - logits[target]);
            if (with_grads) {
                probs.resize(spec_.text_vocab);
                for (int i = 0; i < spec_.text_vocab; ++i) {
                    probs[i] = std::exp(logits[i] - lse) * text_w;
                }
                probs[target] -= text_w;
                linear_backward(thw.w.data(), hidden, probs.data(), thw.g.data(), thb.g.data(),
                                &dnormf[static_cast<size_t>(t) * d], spec_.text_vocab, d);
            }
        }

        // MTP speech losses
        std::vector<double> slogits(spec_.speech_vocab), sprobs;
        for (int j = 0; j < mtp_depth; ++j) {
            if (loss.head_positions[j] == 0) continue;
            const double head_w = 1.0 / (static_cast<double>(loss.head_positions[j]) *
                                         loss.heads_supervised);
            Param& shw = param("speech_head." + std::to_string(j) + ".w");
            Param& shb = param("speech_head." + std::to_string(j) + ".b");
            for (size_t t : mtp_head_positions(ex.speech_targets, j)) {
                const int target = ex.speech_targets[t + static_cast<size_t>(j)];
                const double* hidden = &cache.normf[t * static_cast<size_t>(d)];
                linear(shw.w.data(), shb.w.data(), hidden, slogits.data(), spec_.speech_vocab, d);
                const double lse = log_sum_exp(slogits.data(), spec_.speech_vocab);
                loss.speech_loss += head_w * (lse - slogits[target]);
                if (with_grads) {
                    const double scaled = head_w * lambda_speech;
                    sprobs.resize(spec_.speech_vocab);
                    for (int i = 0; i < spec_.speech_vocab; ++i) {
                        sprobs[i] = std::exp(slogits[i] - lse) * scaled;
                    }
                    sprobs[target] -= scaled;
                    linear_backward(shw.w.data(), hidden, sprobs.data(), shw.g.data(), shb.g.data(),
                                    &dnormf[t * static_cast<size_t>(d)], spec_.speech_vocab, d);
                }
            }
        }

        if (with_grads) run_backward(*this, ex.input_ids, cache, dnormf);
    }
    return loss;
}

std::vector<std::vector<double>> Model::final_hidden(const std::vector<int>& input_ids) const {
    ForwardCache cache;
    run_forward(*this, input_ids, cache);
    const int d = spec_.hidden_dim;
    std::vector<std::vector<double>> out(cache.T);
    for (int t = 0; t < cache.T; ++t) {
        out[t].assign(cache.normf.begin() + static_cast<size_t>(t) * d,
                      cache.normf.begin() + static_cast<size_t>(t + 1) * d);
    }
    return out;
}

std::vector<double> Model::speech_head_logits(int head, const std::vector<double>& hidden) const {
    if (head < 0 || head >= spec_.mtp_depth) throw DimensionMismatchError("no such speech head");
    if (static_cast<int>(hidden.size()) != spec_.hidden_dim) {
        throw DimensionMismatchError("hidden state dimension mismatch");
    }
    const Param& w = param("speech_head." + std::to_string(head) + ".w");
    const Param& b = param("speech_head." + std::to_string(head) + ".b");
    std::vector<double> logits(spec_.speech_vocab);
    linear(w.w.data(), b.w.data(), hidden.data(), logits.data(), spec_.speech_vocab,
           spec_.hidden_dim);
    return logits;
}

std::vector<double> Model::text_head_logits(const std::vector<double>& hidden) const {
    if (static_cast<int>(hidden.size()) != spec_.hidden_dim) {
        throw DimensionMismatchError("hidden state dimension mismatch");
    }
    const Param& w = param("text_head.w");
    const Param& b = param("text_head.b");
    std::vector<double> logits(spec_.text_vocab);
    linear(w.w.data(), b.w.data(), hidden.data(), logits.data(), spec_.text_vocab, spec_.hidden_dim);
    return logits;
}

double mtp_loss(Model& model, const std::vector<std::vector<double>>& final_hidden,
                const std::vector<int>& speech_targets, int m) {
    const ModelSpec& spec = model.spec();
    if (m < 1 || m > spec.mtp_depth) {
        throw DimensionMismatchError("m outside [1, mtp_depth]: " + std::to_string(m));
    }
    if (final_hidden.size() != speech_targets.size()) {
        throw DimensionMismatchError("hidden state count differs from target count");
    }
    double total = 0.0;
    int supervised_heads = 0;
    for (int j = 0; j < m; ++j) {
        auto positions = mtp_head_positions(speech_targets, j);
        if (positions.empty()) continue;
        ++supervised_heads;
        double head_loss = 0.0;
        for (size_t t : positions) {
            std::vector<double> logits = model.speech_head_logits(j, final_hidden[t]);
            const int target = speech_targets[t + static_cast<size_t>(j)];
            head_loss += log_sum_exp(logits.data(), spec.speech_vocab) - logits[target];
        }
        total += head_loss / positions.size();
    }
    if (supervised_heads == 0) {
        throw EmptySupervisionError("all MTP targets masked or out of range");
    }
    return total / supervised_heads;
}

}  // namespace ieatforge::trainkit
