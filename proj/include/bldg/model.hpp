#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bldg/common.hpp"
#include "bldg/container.hpp"
#include "bldg/nn.hpp"
#include "bldg/tensor.hpp"

namespace bldg {

// Siamese encoder + 2-layer GCN head. The encoder is a compact stack of
// (3x3 conv, stride 1, pad 1 -> ReLU -> 2x2 max pool) blocks followed by a
// global average pool, so the embedding width equals the last channel
// count. Both streams share one physical parameter set.
struct ModelConfig {
    std::vector<int> channels{16, 32, 64, 128};
    int input_size = 128;
    int in_channels = 3;
    int meta_dim = 0;  // 0 or 20
    int gcn_hidden = 32;
    int num_classes = 2;
    double dropout = 0.5;
    bool identity_adjacency = false;  // ablation: drop all edges

    int blocks() const { return static_cast<int>(channels.size()); }
    int embedding_dim() const { return channels.back(); }
    int gcn_input_dim() const { return embedding_dim() + meta_dim; }
    int crop_values() const { return input_size * input_size * in_channels; }
    int feature_dim() const { return 2 * crop_values() + meta_dim; }
    int final_map() const { return input_size >> blocks(); }

    void validate() const {
        require(!channels.empty(), "model needs at least one conv block");
        for (int c : channels) require(c >= 1, "conv channel counts must be >= 1");
        require(input_size >= 1 && in_channels >= 1, "invalid input plane");
        require((input_size % (1 << blocks())) == 0 && final_map() >= 1,
                "input size ", input_size, " is not divisible by 2^", blocks());
        require(meta_dim >= 0, "meta_dim must be >= 0");
        require(gcn_hidden >= 1, "gcn_hidden must be >= 1");
        require(num_classes >= 2, "num_classes must be >= 2");
        require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
    }

    bool operator==(const ModelConfig&) const = default;

    nlohmann::json to_json() const {
        return {{"channels", channels},
                {"input_size", input_size},
                {"in_channels", in_channels},
                {"meta_dim", meta_dim},
                {"gcn_hidden", gcn_hidden},
                {"num_classes", num_classes},
                {"dropout", dropout},
                {"identity_adjacency", identity_adjacency}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        try {
            c.channels = j.at("channels").get<std::vector<int>>();
            c.input_size = j.at("input_size").get<int>();
            c.in_channels = j.at("in_channels").get<int>();
            c.meta_dim = j.at("meta_dim").get<int>();
            c.gcn_hidden = j.at("gcn_hidden").get<int>();
            c.num_classes = j.at("num_classes").get<int>();
            c.dropout = j.at("dropout").get<double>();
            c.identity_adjacency = j.at("identity_adjacency").get<bool>();
        } catch (const nlohmann::json::exception& e) {
            fail("malformed model config: ", e.what());
        }
        c.validate();
        return c;
    }
};

template <typename T>
struct ParamSet {
    std::vector<Tensor<T>> conv_w;  // {3, 3, cin, cout}
    std::vector<Tensor<T>> conv_b;  // {cout}
    Tensor<T> gcn_w1, gcn_b1, gcn_w2, gcn_b2;

    static ParamSet shaped(const ModelConfig& cfg) {
        cfg.validate();
        ParamSet p;
        int cin = cfg.in_channels;
        for (int cout : cfg.channels) {
            p.conv_w.emplace_back(std::vector<int>{3, 3, cin, cout});
            p.conv_b.emplace_back(std::vector<int>{cout});
            cin = cout;
        }
        p.gcn_w1 = Tensor<T>({cfg.gcn_input_dim(), cfg.gcn_hidden});
        p.gcn_b1 = Tensor<T>({cfg.gcn_hidden});
        p.gcn_w2 = Tensor<T>({cfg.gcn_hidden, cfg.num_classes});
        p.gcn_b2 = Tensor<T>({cfg.num_classes});
        return p;
    }

    // He-normal conv kernels, Glorot-uniform GCN weights, zero biases.
    // Draw order is fixed: conv blocks first, then the two GCN layers.
    static ParamSet init(const ModelConfig& cfg, Rng& rng) {
        ParamSet p = shaped(cfg);
        int cin = cfg.in_channels;
        for (int b = 0; b < cfg.blocks(); ++b) {
            const double sd = std::sqrt(2.0 / (9.0 * cin));
            for (auto& w : p.conv_w[b].data) w = static_cast<T>(rng.normal(0.0, sd));
            cin = cfg.channels[b];
        }
        auto glorot = [&](Tensor<T>& t, int fan_in, int fan_out) {
            const double lim = std::sqrt(6.0 / (fan_in + fan_out));
            for (auto& w : t.data) w = static_cast<T>(rng.uniform(-lim, lim));
        };
        glorot(p.gcn_w1, cfg.gcn_input_dim(), cfg.gcn_hidden);
        glorot(p.gcn_w2, cfg.gcn_hidden, cfg.num_classes);
        return p;
    }

    std::vector<std::pair<std::string, Tensor<T>*>> named() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        for (std::size_t b = 0; b < conv_w.size(); ++b) {
            out.emplace_back(concat("conv", b, ".w"), &conv_w[b]);
            out.emplace_back(concat("conv", b, ".b"), &conv_b[b]);
        }
        out.emplace_back("gcn1.w", &gcn_w1);
        out.emplace_back("gcn1.b", &gcn_b1);
        out.emplace_back("gcn2.w", &gcn_w2);
        out.emplace_back("gcn2.b", &gcn_b2);
        return out;
    }

    std::vector<std::pair<std::string, const Tensor<T>*>> named() const {
        std::vector<std::pair<std::string, const Tensor<T>*>> out;
        for (std::size_t b = 0; b < conv_w.size(); ++b) {
            out.emplace_back(concat("conv", b, ".w"), &conv_w[b]);
            out.emplace_back(concat("conv", b, ".b"), &conv_b[b]);
        }
        out.emplace_back("gcn1.w", &gcn_w1);
        out.emplace_back("gcn1.b", &gcn_b1);
        out.emplace_back("gcn2.w", &gcn_w2);
        out.emplace_back("gcn2.b", &gcn_b2);
        return out;
    }

    void zero() {
        for (auto& [name, t] : named()) t->zero();
    }

    void add(const ParamSet& other) {
        auto a = named();
        auto b = other.named();
        for (std::size_t k = 0; k < a.size(); ++k)
            for (std::size_t i = 0; i < a[k].second->data.size(); ++i)
                a[k].second->data[i] += b[k].second->data[i];
    }

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& t : conv_w) out.conv_w.push_back(t.template cast<U>());
        for (const auto& t : conv_b) out.conv_b.push_back(t.template cast<U>());
        out.gcn_w1 = gcn_w1.template cast<U>();
        out.gcn_b1 = gcn_b1.template cast<U>();
        out.gcn_w2 = gcn_w2.template cast<U>();
        out.gcn_b2 = gcn_b2.template cast<U>();
        return out;
    }
};

struct WeightedEdge {
    int i = 0;
    int j = 0;
    double w = 1.0;
};

// Asym = D^(-1/2) (A + I) D^(-1/2) with D the row sums of A + I; stored as
// CSR with explicit diagonal entries. Symmetric, non-negative, diagonal > 0.
template <typename T>
struct NormalizedAdjacency {
    int n = 0;
    std::vector<int> row_ptr;
    std::vector<int> col;
    std::vector<T> val;

    static NormalizedAdjacency build(int n, std::span<const WeightedEdge> edges) {
        require(n >= 1, "adjacency needs n >= 1");
        std::vector<double> degree(n, 1.0);  // self-loop weight 1
        for (const auto& e : edges) {
            require(e.i >= 0 && e.i < n && e.j >= 0 && e.j < n,
                    "edge node index out of range: (", e.i, ", ", e.j, ")");
            require(e.i != e.j, "self-edges are not allowed in the edge list");
            require(e.w > 0.0, "edge weights must be > 0, got ", e.w);
            degree[e.i] += e.w;
            degree[e.j] += e.w;
        }
        std::vector<std::vector<std::pair<int, double>>> rows(n);
        for (int i = 0; i < n; ++i) rows[i].emplace_back(i, 1.0 / degree[i]);
        for (const auto& e : edges) {
            const double v = e.w / std::sqrt(degree[e.i] * degree[e.j]);
            rows[e.i].emplace_back(e.j, v);
            rows[e.j].emplace_back(e.i, v);
        }
        NormalizedAdjacency out;
        out.n = n;
        out.row_ptr.assign(n + 1, 0);
        for (int i = 0; i < n; ++i) {
            std::sort(rows[i].begin(), rows[i].end());
            out.row_ptr[i + 1] = out.row_ptr[i] + static_cast<int>(rows[i].size());
            for (const auto& [j, v] : rows[i]) {
                out.col.push_back(j);
                out.val.push_back(static_cast<T>(v));
            }
        }
        return out;
    }

    static NormalizedAdjacency identity(int n) { return build(n, {}); }

    // out = Asym * H, H and out dense n x d row-major.
    void multiply(const T* H, int d, T* out) const {
        for (int i = 0; i < n; ++i) {
            T* dst = out + static_cast<std::size_t>(i) * d;
            std::fill(dst, dst + d, T(0));
            for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
                const T v = val[k];
                const T* src = H + static_cast<std::size_t>(col[k]) * d;
                for (int c = 0; c < d; ++c) dst[c] += v * src[c];
            }
        }
    }
};

template <typename T>
NormalizedAdjacency<T> gcn_normalize(std::span<const WeightedEdge> edges, int n) {
    return NormalizedAdjacency<T>::build(n, edges);
}

enum class Activation { None, Relu, SoftmaxRows };

// out = activation(Asym * H * W + b); H is n x d, W is d x d'.
template <typename T>
std::vector<T> gcn_layer(const T* H, int n, int d, const NormalizedAdjacency<T>& adj,
                         const Tensor<T>& W, const Tensor<T>& b, Activation act) {
    require(adj.n == n, "gcn_layer: adjacency size mismatch");
    require(W.shape.size() == 2 && W.shape[0] == d, "gcn_layer: weight shape mismatch");
    const int dout = W.shape[1];
    require(static_cast<int>(b.data.size()) == dout, "gcn_layer: bias shape mismatch");
    std::vector<T> agg(static_cast<std::size_t>(n) * d);
    adj.multiply(H, d, agg.data());
    std::vector<T> out(static_cast<std::size_t>(n) * dout);
    nn::ConstMapRM<T> am(agg.data(), n, d);
    nn::ConstMapRM<T> wm(W.ptr(), d, dout);
    nn::MapRM<T> om(out.data(), n, dout);
    om.noalias() = am * wm;
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bm(b.ptr(), dout);
    om.rowwise() += bm.transpose();
    if (act == Activation::Relu)
        nn::relu_inplace(out.data(), out.size());
    else if (act == Activation::SoftmaxRows)
        nn::softmax_rows(out.data(), n, dout);
    return out;
}

// Inverted dropout; training mode zeroes with probability `rate` and scales
// survivors by 1/(1-rate). Inference is the identity. The mask is drawn
// element-by-element in buffer order from `rng`.
template <typename T>
void dropout_forward(const T* src, T* dst, std::size_t count, double rate, bool training,
                     Rng& rng, std::uint8_t* mask_out = nullptr) {
    require(rate >= 0.0 && rate < 1.0, "dropout rate must be in [0, 1)");
    if (!training || rate == 0.0) {
        if (dst != src) std::copy(src, src + count, dst);
        if (mask_out) std::fill(mask_out, mask_out + count, std::uint8_t(1));
        return;
    }
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < count; ++i) {
        const bool keep = rng.uniform() >= rate;
        if (mask_out) mask_out[i] = keep ? 1 : 0;
        dst[i] = keep ? src[i] * scale : T(0);
    }
}

template <typename T>
std::vector<T> dropout(const std::vector<T>& h, double rate, Rng& rng, bool training) {
    std::vector<T> out(h.size());
    dropout_forward(h.data(), out.data(), h.size(), rate, training, rng);
    return out;
}

// -(1/|mask|) * sum over mask of w[y_i] * log(max(probs[i, y_i], 1e-12)).
// Accumulates in double regardless of T.
template <typename T>
double weighted_masked_ce(const T* probs, int n, int k, std::span<const int> labels,
                          std::span<const int> mask, std::span<const double> class_weights) {
    require(!mask.empty(), "weighted_masked_ce: empty mask");
    require(static_cast<int>(labels.size()) == n, "weighted_masked_ce: labels size mismatch");
    require(static_cast<int>(class_weights.size()) == k, "weighted_masked_ce: weights size mismatch");
    double acc = 0.0;
    for (int i : mask) {
        require(i >= 0 && i < n, "weighted_masked_ce: mask index out of range");
        const int y = labels[i];
        require(y >= 0 && y < k, "weighted_masked_ce: label out of range at node ", i);
        const double p = std::max(static_cast<double>(probs[static_cast<std::size_t>(i) * k + y]), 1e-12);
        acc += class_weights[y] * std::log(p);
    }
    return -acc / static_cast<double>(mask.size());
}

// Reusable per-call buffers for one backbone pass. `keep` retains the
// post-ReLU activations and pool indices needed by the backward pass.
template <typename T>
struct BackboneScratch {
    std::vector<T> input_chw;          // crop converted to planar layout
    std::vector<std::vector<T>> act;   // per block, post-ReLU conv output
    std::vector<std::vector<T>> pool;  // per block, pooled output
    std::vector<std::vector<std::uint8_t>> idx;
    std::vector<T> col, dcol, da, db;

    void resize(const ModelConfig& cfg) {
        const int blocks = cfg.blocks();
        input_chw.resize(static_cast<std::size_t>(cfg.crop_values()));
        act.resize(blocks);
        pool.resize(blocks);
        idx.resize(blocks);
        std::size_t max_col = 0, max_buf = 0;
        int s = cfg.input_size, cin = cfg.in_channels;
        for (int b = 0; b < blocks; ++b) {
            const int cout = cfg.channels[b];
            const std::size_t n_act = static_cast<std::size_t>(s) * s * cout;
            act[b].resize(n_act);
            pool[b].resize(n_act / 4);
            idx[b].resize(n_act / 4);
            max_col = std::max(max_col, static_cast<std::size_t>(s) * s * 9 * cin);
            max_buf = std::max(max_buf, n_act);
            max_buf = std::max(max_buf, static_cast<std::size_t>(s) * s * cin);
            s /= 2;
            cin = cout;
        }
        col.resize(max_col);
        dcol.resize(max_col);
        da.resize(max_buf);
        db.resize(max_buf);
    }
};

// crop (HWC, as stored in feature vectors) -> E-dim embedding (E = last
// channel count). Internals run on planar buffers.
template <typename T>
void backbone_forward(const ParamSet<T>& params, const ModelConfig& cfg, const T* crop,
                      T* embedding, BackboneScratch<T>& ws) {
    nn::hwc_to_chw(crop, cfg.input_size, cfg.input_size, cfg.in_channels, ws.input_chw.data());
    const T* cur = ws.input_chw.data();
    int s = cfg.input_size, cin = cfg.in_channels;
    for (int b = 0; b < cfg.blocks(); ++b) {
        const int cout = cfg.channels[b];
        nn::conv3x3_forward(cur, s, s, cin, params.conv_w[b].ptr(), params.conv_b[b].ptr(), cout,
                            ws.col.data(), ws.act[b].data());
        nn::relu_inplace(ws.act[b].data(), ws.act[b].size());
        nn::maxpool2x2_forward(ws.act[b].data(), s, s, cout, ws.pool[b].data(), ws.idx[b].data());
        cur = ws.pool[b].data();
        s /= 2;
        cin = cout;
    }
    nn::gap_forward(cur, s, s, cfg.embedding_dim(), embedding);
}

// Accumulates parameter gradients for one crop. `ws` must hold the forward
// state for this same crop (run backbone_forward on it first).
template <typename T>
void backbone_backward(const ParamSet<T>& params, const ModelConfig& cfg,
                       const T* d_embedding, BackboneScratch<T>& ws, ParamSet<T>& grads) {
    const int blocks = cfg.blocks();
    const int fm = cfg.final_map();
    // d wrt the last pooled map
    nn::gap_backward(d_embedding, fm, fm, cfg.embedding_dim(), ws.da.data());
    T* d_pool = ws.da.data();
    T* d_other = ws.db.data();
    int s = fm;
    for (int b = blocks - 1; b >= 0; --b) {
        s *= 2;  // spatial size at this block's conv output
        const int cin = b == 0 ? cfg.in_channels : cfg.channels[b - 1];
        const int cout = cfg.channels[b];
        nn::maxpool2x2_backward(d_pool, ws.idx[b].data(), s, s, cout, d_other);
        nn::relu_backward_inplace(ws.act[b].data(), d_other, static_cast<std::size_t>(s) * s * cout);
        const T* src = b == 0 ? ws.input_chw.data() : ws.pool[b - 1].data();
        nn::conv3x3_backward(src, s, s, cin, params.conv_w[b].ptr(), cout, d_other, ws.col.data(),
                             ws.dcol.data(), grads.conv_w[b].ptr(), grads.conv_b[b].ptr(),
                             b > 0 ? d_pool : nullptr);
        // d_pool now holds d wrt pool[b-1]'s output
    }
}

// backbone(pre) - backbone(post), both streams through the shared params.
template <typename T>
std::vector<T> siamese_difference(const ParamSet<T>& params, const ModelConfig& cfg, const T* pre,
                                  const T* post, BackboneScratch<T>& ws) {
    const int e = cfg.embedding_dim();
    std::vector<T> diff(e), tmp(e);
    backbone_forward(params, cfg, pre, diff.data(), ws);
    backbone_forward(params, cfg, post, tmp.data(), ws);
    for (int k = 0; k < e; ++k) diff[k] -= tmp[k];
    return diff;
}

// Node-feature access: flat per-node rows of [pre crop | post crop | meta].
template <typename T>
struct FeatureView {
    const T* data = nullptr;
    int n = 0;
    int dim = 0;

    const T* row(int i) const { return data + static_cast<std::size_t>(i) * dim; }
};

// X rows: [backbone(pre) - backbone(post) | meta]. Parallel over fixed
// node chunks; every node writes only its own row.
template <typename T>
void compute_embeddings(const ParamSet<T>& params, const ModelConfig& cfg,
                        const FeatureView<T>& features, T* X, unsigned threads) {
    require(features.dim == cfg.feature_dim(), "feature dim ", features.dim,
            " does not match model config dim ", cfg.feature_dim());
    const int cv = cfg.crop_values();
    const int e = cfg.embedding_dim();
    const int d0 = cfg.gcn_input_dim();
    for_chunks(static_cast<std::size_t>(features.n), 16, threads,
               [&](std::size_t, std::size_t begin, std::size_t end) {
                   BackboneScratch<T> ws;
                   ws.resize(cfg);
                   std::vector<T> pre_emb(e), post_emb(e);
                   for (std::size_t i = begin; i < end; ++i) {
                       const T* row = features.row(static_cast<int>(i));
                       backbone_forward(params, cfg, row, pre_emb.data(), ws);
                       backbone_forward(params, cfg, row + cv, post_emb.data(), ws);
                       T* x = X + i * d0;
                       for (int k = 0; k < e; ++k) x[k] = pre_emb[k] - post_emb[k];
                       for (int k = 0; k < cfg.meta_dim; ++k) x[e + k] = row[2 * cv + k];
                   }
               });
}

// Cached intermediates of one GCN head pass over fixed embeddings.
template <typename T>
struct GcnPass {
    std::vector<T> Z0;      // dropout(X)
    std::vector<T> A1;      // Asym * Z0
    std::vector<T> S1;      // A1 * W1 + b1 (pre-activation)
    std::vector<T> H1;      // relu(S1)
    std::vector<T> Z1;      // dropout(H1)
    std::vector<T> A2;      // Asym * Z1
    std::vector<T> probs;   // softmax(A2 * W2 + b2)
    std::vector<std::uint8_t> m0, m1;  // dropout keep masks
};

template <typename T>
void gcn_forward(const ParamSet<T>& params, const ModelConfig& cfg,
                 const NormalizedAdjacency<T>& adj, const T* X, int n, bool training, Rng& rng,
                 GcnPass<T>& pass) {
    const int d0 = cfg.gcn_input_dim();
    const int h = cfg.gcn_hidden;
    const int k = cfg.num_classes;
    require(adj.n == n, "gcn_forward: adjacency size mismatch");

    const std::size_t n0 = static_cast<std::size_t>(n) * d0;
    const std::size_t nh = static_cast<std::size_t>(n) * h;
    pass.Z0.resize(n0);
    pass.m0.resize(n0);
    dropout_forward(X, pass.Z0.data(), n0, cfg.dropout, training, rng, pass.m0.data());

    pass.A1.resize(n0);
    adj.multiply(pass.Z0.data(), d0, pass.A1.data());
    pass.S1.resize(nh);
    {
        nn::ConstMapRM<T> am(pass.A1.data(), n, d0);
        nn::ConstMapRM<T> wm(params.gcn_w1.ptr(), d0, h);
        nn::MapRM<T> sm(pass.S1.data(), n, h);
        sm.noalias() = am * wm;
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bm(params.gcn_b1.ptr(), h);
        sm.rowwise() += bm.transpose();
    }
    pass.H1 = pass.S1;
    nn::relu_inplace(pass.H1.data(), pass.H1.size());

    pass.Z1.resize(nh);
    pass.m1.resize(nh);
    dropout_forward(pass.H1.data(), pass.Z1.data(), nh, cfg.dropout, training, rng, pass.m1.data());

    pass.A2.resize(nh);
    adj.multiply(pass.Z1.data(), h, pass.A2.data());
    pass.probs.resize(static_cast<std::size_t>(n) * k);
    {
        nn::ConstMapRM<T> am(pass.A2.data(), n, h);
        nn::ConstMapRM<T> wm(params.gcn_w2.ptr(), h, k);
        nn::MapRM<T> pm(pass.probs.data(), n, k);
        pm.noalias() = am * wm;
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bm(params.gcn_b2.ptr(), k);
        pm.rowwise() += bm.transpose();
    }
    nn::softmax_rows(pass.probs.data(), n, k);
}

// GCN-head backward for the masked weighted CE loss. Fills the GCN weight
// grads and dX (n x gcn_input_dim).
template <typename T>
void gcn_backward(const ParamSet<T>& params, const ModelConfig& cfg,
                  const NormalizedAdjacency<T>& adj, const GcnPass<T>& pass, int n,
                  std::span<const int> labels, std::span<const int> mask,
                  std::span<const double> class_weights, ParamSet<T>& grads, T* dX) {
    const int d0 = cfg.gcn_input_dim();
    const int h = cfg.gcn_hidden;
    const int k = cfg.num_classes;
    const double inv_mask = 1.0 / static_cast<double>(mask.size());

    std::vector<T> d_logits(static_cast<std::size_t>(n) * k, T(0));
    for (int i : mask) {
        const int y = labels[i];
        const T scale = static_cast<T>(class_weights[y] * inv_mask);
        const T* p = pass.probs.data() + static_cast<std::size_t>(i) * k;
        T* d = d_logits.data() + static_cast<std::size_t>(i) * k;
        for (int c = 0; c < k; ++c) d[c] = scale * (p[c] - (c == y ? T(1) : T(0)));
    }

    nn::ConstMapRM<T> dlm(d_logits.data(), n, k);
    {
        nn::ConstMapRM<T> a2m(pass.A2.data(), n, h);
        nn::MapRM<T> dw2(grads.gcn_w2.ptr(), h, k);
        dw2.noalias() += a2m.transpose() * dlm;
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db2(grads.gcn_b2.ptr(), k);
        db2.noalias() += dlm.colwise().sum().transpose();
    }

    // dZ1 = Asym * (d_logits * W2^T), then through dropout and ReLU.
    std::vector<T> tmp_nh(static_cast<std::size_t>(n) * h);
    {
        nn::ConstMapRM<T> w2(params.gcn_w2.ptr(), h, k);
        nn::MapRM<T> tm(tmp_nh.data(), n, h);
        tm.noalias() = dlm * w2.transpose();
    }
    std::vector<T> dS1(static_cast<std::size_t>(n) * h);
    adj.multiply(tmp_nh.data(), h, dS1.data());
    const T keep_scale = cfg.dropout > 0.0 ? static_cast<T>(1.0 / (1.0 - cfg.dropout)) : T(1);
    for (std::size_t i = 0; i < dS1.size(); ++i) {
        if (cfg.dropout > 0.0) dS1[i] = pass.m1[i] ? dS1[i] * keep_scale : T(0);
        if (pass.S1[i] <= T(0)) dS1[i] = T(0);
    }

    {
        nn::ConstMapRM<T> a1m(pass.A1.data(), n, d0);
        nn::ConstMapRM<T> ds1(dS1.data(), n, h);
        nn::MapRM<T> dw1(grads.gcn_w1.ptr(), d0, h);
        dw1.noalias() += a1m.transpose() * ds1;
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db1(grads.gcn_b1.ptr(), h);
        db1.noalias() += ds1.colwise().sum().transpose();
    }

    std::vector<T> tmp_nd(static_cast<std::size_t>(n) * d0);
    {
        nn::ConstMapRM<T> ds1(dS1.data(), n, h);
        nn::ConstMapRM<T> w1(params.gcn_w1.ptr(), d0, h);
        nn::MapRM<T> tm(tmp_nd.data(), n, d0);
        tm.noalias() = ds1 * w1.transpose();
    }
    adj.multiply(tmp_nd.data(), d0, dX);
    if (cfg.dropout > 0.0)
        for (std::size_t i = 0; i < static_cast<std::size_t>(n) * d0; ++i)
            dX[i] = pass.m0[i] ? dX[i] * keep_scale : T(0);
}

template <typename T>
struct GradientResult {
    double loss = 0.0;
    ParamSet<T> grads;
};

// Full-model gradients of the masked weighted CE: forward through the
// Siamese backbone and GCN head (fixed dropout masks drawn from `rng`),
// then exact reverse-mode backward. Backbone activations are recomputed
// per node during the backward sweep; gradient accumulation runs over
// fixed node chunks reduced in chunk order, so results do not depend on
// the thread count.
template <typename T>
GradientResult<T> model_gradients(const ParamSet<T>& params, const ModelConfig& cfg,
                                  const FeatureView<T>& features,
                                  const NormalizedAdjacency<T>& adj, std::span<const int> labels,
                                  std::span<const int> mask, std::span<const double> class_weights,
                                  Rng& rng, unsigned threads, const T* X_precomputed = nullptr,
                                  GcnPass<T>* pass_out = nullptr) {
    cfg.validate();
    const int n = features.n;
    const int d0 = cfg.gcn_input_dim();
    require(!mask.empty(), "model_gradients: empty mask");

    std::vector<T> X_local;
    const T* X = X_precomputed;
    if (!X) {
        X_local.resize(static_cast<std::size_t>(n) * d0);
        compute_embeddings(params, cfg, features, X_local.data(), threads);
        X = X_local.data();
    }

    GcnPass<T> local_pass;
    GcnPass<T>& pass = pass_out ? *pass_out : local_pass;
    gcn_forward(params, cfg, adj, X, n, true, rng, pass);

    GradientResult<T> result;
    result.loss = weighted_masked_ce(pass.probs.data(), n, cfg.num_classes, labels, mask,
                                     class_weights);
    result.grads = ParamSet<T>::shaped(cfg);

    std::vector<T> dX(static_cast<std::size_t>(n) * d0);
    gcn_backward(params, cfg, adj, pass, n, labels, mask, class_weights, result.grads, dX.data());

    // Backbone sweep: d(embedding of pre) = +dX[:, :E], post gets the sign
    // flip from the siamese difference.
    const int cv = cfg.crop_values();
    const int e = cfg.embedding_dim();
    const std::size_t num_chunks = chunk_count(static_cast<std::size_t>(n), 16);
    std::vector<ParamSet<T>> partials;
    partials.reserve(num_chunks);
    for (std::size_t c = 0; c < num_chunks; ++c) partials.push_back(ParamSet<T>::shaped(cfg));

    for_chunks(static_cast<std::size_t>(n), 16, threads,
               [&](std::size_t chunk_idx, std::size_t begin, std::size_t end) {
                   BackboneScratch<T> ws;
                   ws.resize(cfg);
                   std::vector<T> emb(e), d_emb(e);
                   ParamSet<T>& acc = partials[chunk_idx];
                   for (std::size_t i = begin; i < end; ++i) {
                       const T* row = features.row(static_cast<int>(i));
                       const T* dx = dX.data() + i * d0;
                       backbone_forward(params, cfg, row, emb.data(), ws);
                       for (int k = 0; k < e; ++k) d_emb[k] = dx[k];
                       backbone_backward(params, cfg, d_emb.data(), ws, acc);
                       backbone_forward(params, cfg, row + cv, emb.data(), ws);
                       for (int k = 0; k < e; ++k) d_emb[k] = -dx[k];
                       backbone_backward(params, cfg, d_emb.data(), ws, acc);
                   }
               });
    for (auto& partial : partials) result.grads.add(partial);
    return result;
}

// Standard bias-corrected Adam. Moment updates run in double and are
// stored back at parameter precision.
template <typename T>
struct AdamState {
    double lr = 0.0003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::vector<Tensor<T>> m, v;  // aligned with ParamSet::named order

    static AdamState shaped(const ModelConfig& cfg) {
        AdamState st;
        ParamSet<T> ref = ParamSet<T>::shaped(cfg);
        for (const auto& [name, tensor] : ref.named()) {
            st.m.emplace_back(tensor->shape);
            st.v.emplace_back(tensor->shape);
        }
        return st;
    }
};

template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state) {
    auto pn = params.named();
    auto gn = grads.named();
    require(pn.size() == gn.size() && pn.size() == state.m.size() && pn.size() == state.v.size(),
            "adam_step: parameter/state layout mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < pn.size(); ++k) {
        Tensor<T>& p = *pn[k].second;
        const Tensor<T>& g = *gn[k].second;
        require(p.data.size() == g.data.size(), "adam_step: grad shape mismatch for ", pn[k].first);
        Tensor<T>& m = state.m[k];
        Tensor<T>& v = state.v[k];
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double gi = static_cast<double>(g.data[i]);
            const double mi = state.beta1 * static_cast<double>(m.data[i]) + (1.0 - state.beta1) * gi;
            const double vi = state.beta2 * static_cast<double>(v.data[i]) + (1.0 - state.beta2) * gi * gi;
            m.data[i] = static_cast<T>(mi);
            v.data[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            p.data[i] = static_cast<T>(static_cast<double>(p.data[i]) -
                                       state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

struct BestRecord {
    int epoch = -1;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, specificity = 0.0, f1 = 0.0;

    nlohmann::json to_json() const {
        return {{"epoch", epoch},       {"accuracy", accuracy},       {"precision", precision},
                {"recall", recall},     {"specificity", specificity}, {"f1", f1}};
    }
    static BestRecord from_json(const nlohmann::json& j) {
        BestRecord r;
        r.epoch = j.value("epoch", -1);
        r.accuracy = j.value("accuracy", 0.0);
        r.precision = j.value("precision", 0.0);
        r.recall = j.value("recall", 0.0);
        r.specificity = j.value("specificity", 0.0);
        r.f1 = j.value("f1", 0.0);
        return r;
    }
};

constexpr char kCheckpointMagic[4] = {'B', 'L', 'D', 'C'};
constexpr std::uint16_t kCheckpointVersion = 1;

// Selected-epoch snapshot: model params plus optimizer state.
struct Checkpoint {
    ModelConfig config;
    ParamSet<float> params;
    AdamState<float> adam;
    int epoch = 0;
    BestRecord best;

    void save(const std::string& path) const {
        nlohmann::json header;
        header["config"] = config.to_json();
        header["epoch"] = epoch;
        header["best"] = best.to_json();
        header["adam"] = {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2},
                          {"eps", adam.eps}, {"t", adam.t}};
        std::vector<float> payload;
        nlohmann::json index = nlohmann::json::array();
        std::uint64_t offset = 0;
        auto push = [&](const std::string& name, const Tensor<float>& t) {
            index.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
            payload.insert(payload.end(), t.data.begin(), t.data.end());
            offset += t.data.size();
        };
        for (const auto& [name, t] : params.named()) push(name, *t);
        auto named = params.named();
        for (std::size_t k = 0; k < named.size(); ++k) push(concat("adam.m.", named[k].first), adam.m[k]);
        for (std::size_t k = 0; k < named.size(); ++k) push(concat("adam.v.", named[k].first), adam.v[k]);
        header["tensors"] = index;
        write_container(path, kCheckpointMagic, kCheckpointVersion, header, payload.data(),
                        payload.size());
    }

    static Checkpoint load(const std::string& path) {
        ContainerData c = read_container(path, kCheckpointMagic);
        require(c.version == kCheckpointVersion, path, ": unsupported checkpoint version ",
                c.version);
        Checkpoint ck;
        try {
            ck.config = ModelConfig::from_json(c.header.at("config"));
            ck.epoch = c.header.at("epoch").get<int>();
            ck.best = BestRecord::from_json(c.header.at("best"));
            ck.params = ParamSet<float>::shaped(ck.config);
            ck.adam = AdamState<float>::shaped(ck.config);
            const auto& aj = c.header.at("adam");
            ck.adam.lr = aj.at("lr").get<double>();
            ck.adam.beta1 = aj.at("beta1").get<double>();
            ck.adam.beta2 = aj.at("beta2").get<double>();
            ck.adam.eps = aj.at("eps").get<double>();
            ck.adam.t = aj.at("t").get<std::int64_t>();

            std::map<std::string, std::pair<std::uint64_t, std::size_t>> index;
            for (const auto& entry : c.header.at("tensors"))
                index[entry.at("name").get<std::string>()] = {
                    entry.at("offset").get<std::uint64_t>(),
                    Tensor<float>::numel_of(entry.at("shape").get<std::vector<int>>())};
            auto fetch = [&](const std::string& name, Tensor<float>& t) {
                auto it = index.find(name);
                require(it != index.end(), path, ": checkpoint missing tensor '", name, "'");
                require(it->second.second == t.data.size(), path, ": tensor '", name,
                        "' has unexpected shape");
                require(it->second.first + t.data.size() <= c.payload.size(), path,
                        ": tensor '", name, "' overruns payload");
                std::copy_n(c.payload.begin() + static_cast<std::ptrdiff_t>(it->second.first),
                            t.data.size(), t.data.begin());
            };
            auto named = ck.params.named();
            for (auto& [name, t] : named) fetch(name, *t);
            for (std::size_t k = 0; k < named.size(); ++k)
                fetch(concat("adam.m.", named[k].first), ck.adam.m[k]);
            for (std::size_t k = 0; k < named.size(); ++k)
                fetch(concat("adam.v.", named[k].first), ck.adam.v[k]);
        } catch (const nlohmann::json::exception& e) {
            fail(path, ": malformed checkpoint header: ", e.what());
        }
        return ck;
    }
};

}  // namespace bldg
