// Small pre-norm transformer encoder with K CLS tokens. Each CLS token gets
// its own linear projection at the configured injection layers; with the
// re-parameterization enabled, the projection applied for CLS k is
// W_k - mean_k'(W_k'), which keeps the K projections from collapsing to a
// shared value (their effective sum is pinned to zero).
//
// Conventions: hidden states are row vectors, H is (K+T) x d, weights apply
// on the right (h' = h W + b). CLS tokens occupy vocabulary ids 0..K-1 and
// the first K sequence positions.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace m2spe {

inline constexpr double kLayerNormEps = 1e-5;

struct EncoderConfig {
    int num_layers = 4;
    int num_heads = 4;
    int hidden_dim = 64;
    int ff_dim = 256;
    int num_cls = 3;                          // K
    std::vector<int> injection_layers{2, 4};  // 1-based, must contain num_layers
    int vocab_size = 256;
    int max_seq_len = 32;
    double lambda = 0.1;
    bool reparam_enabled = true;
    bool injections_enabled = true;

    void validate() const {
        if (num_layers < 1) throw std::invalid_argument("config: num_layers must be >= 1");
        if (num_heads < 1 || hidden_dim % num_heads != 0)
            throw std::invalid_argument("config: hidden_dim must be divisible by num_heads");
        if (ff_dim < 1) throw std::invalid_argument("config: ff_dim must be >= 1");
        if (num_cls < 1) throw std::invalid_argument("config: K must be >= 1");
        if (vocab_size < num_cls) throw std::invalid_argument("config: vocab_size must cover the K CLS ids");
        if (max_seq_len < 1) throw std::invalid_argument("config: max_seq_len must be >= 1");
        if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("config: lambda must be in [0,1]");
        if (injection_layers.empty()) throw std::invalid_argument("config: injection_layers must be nonempty");
        int prev = 0;
        bool has_top = false;
        for (int l : injection_layers) {
            if (l < 1 || l > num_layers) throw std::invalid_argument("config: injection layer out of range");
            if (l <= prev) throw std::invalid_argument("config: injection_layers must be strictly increasing");
            prev = l;
            has_top = has_top || l == num_layers;
        }
        if (!has_top) throw std::invalid_argument("config: injection_layers must contain the top layer");
    }

    bool is_injection_layer(int layer_1based) const {
        for (int l : injection_layers)
            if (l == layer_1based) return true;
        return false;
    }
};

// Parameter container templated on the array type so the same structure
// (and the same enumeration order) serves Matrix storage, gradient
// accumulators, Adam moments and tape leaves alike.
template <typename T>
struct ParamsT {
    struct Layer {
        T attn_wq, attn_bq, attn_wk, attn_bk, attn_wv, attn_bv, attn_wo, attn_bo;
        T ln1_gain, ln1_bias;
        T ff_w1, ff_b1, ff_w2, ff_b2;
        T ln2_gain, ln2_bias;
    };
    struct Injection {
        T w, b;
    };

    T token_embedding;
    T position_embedding;
    std::vector<Layer> layers;
    std::vector<std::vector<Injection>> injections;  // [injection layer index][k]

    // Fixed enumeration order; checkpoints, optimizer state and gradient
    // maps all rely on it.
    template <typename F>
    void for_each_array(const EncoderConfig& cfg, F&& f) {
        f("token_embedding", token_embedding);
        f("position_embedding", position_embedding);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            Layer& ly = layers[l];
            f(p + "attn_wq", ly.attn_wq);
            f(p + "attn_bq", ly.attn_bq);
            f(p + "attn_wk", ly.attn_wk);
            f(p + "attn_bk", ly.attn_bk);
            f(p + "attn_wv", ly.attn_wv);
            f(p + "attn_bv", ly.attn_bv);
            f(p + "attn_wo", ly.attn_wo);
            f(p + "attn_bo", ly.attn_bo);
            f(p + "ln1_gain", ly.ln1_gain);
            f(p + "ln1_bias", ly.ln1_bias);
            f(p + "ff_w1", ly.ff_w1);
            f(p + "ff_b1", ly.ff_b1);
            f(p + "ff_w2", ly.ff_w2);
            f(p + "ff_b2", ly.ff_b2);
            f(p + "ln2_gain", ly.ln2_gain);
            f(p + "ln2_bias", ly.ln2_bias);
        }
        for (size_t i = 0; i < injections.size(); ++i) {
            const std::string p = "inj" + std::to_string(cfg.injection_layers[i]) + ".";
            for (size_t k = 0; k < injections[i].size(); ++k) {
                f(p + "k" + std::to_string(k) + ".w", injections[i][k].w);
                f(p + "k" + std::to_string(k) + ".b", injections[i][k].b);
            }
        }
    }
};

using EncoderParams = ParamsT<Matrix>;
using ParamLeaves = ParamsT<ad::Node*>;

// The K per-CLS output vectors and their sum. pooled is built by summing
// the component rows in order, so pooled == sum(components) holds exactly.
struct EmbeddingSet {
    Matrix components;  // K x d
    Matrix pooled;      // 1 x d

    int num_cls() const { return components.rows; }
    int dim() const { return components.cols; }
};

namespace detail {

inline Matrix xavier_uniform(int rows, int cols, Rng& rng, double gain = 1.0) {
    Matrix m(rows, cols);
    const double limit = gain * std::sqrt(6.0 / (rows + cols));
    for (double& v : m.data) v = rng.uniform(-limit, limit);
    return m;
}

// Top-layer injections feed raw dot-product logits, so their random init is
// kept small; full-width output projections start the contrastive softmax
// deeply saturated.
inline constexpr double kTopInjectionInitGain = 0.3;

}  // namespace detail

// Transformer weights get scaled-uniform init; biases zero, norm gains one.
// Injections below the top layer start as the identity so an untrained
// encoder initially passes CLS states through unchanged; the top-layer
// injections are random. Deterministic in seed, independent of the
// enable flags.
inline EncoderParams init_encoder(const EncoderConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, 0x1a17));

    const int d = cfg.hidden_dim;
    EncoderParams p;
    p.token_embedding = detail::xavier_uniform(cfg.vocab_size, d, rng);
    p.position_embedding = detail::xavier_uniform(cfg.max_seq_len + cfg.num_cls, d, rng);

    p.layers.resize(static_cast<size_t>(cfg.num_layers));
    for (auto& ly : p.layers) {
        ly.attn_wq = detail::xavier_uniform(d, d, rng);
        ly.attn_wk = detail::xavier_uniform(d, d, rng);
        ly.attn_wv = detail::xavier_uniform(d, d, rng);
        ly.attn_wo = detail::xavier_uniform(d, d, rng);
        ly.attn_bq = Matrix::zeros(1, d);
        ly.attn_bk = Matrix::zeros(1, d);
        ly.attn_bv = Matrix::zeros(1, d);
        ly.attn_bo = Matrix::zeros(1, d);
        ly.ln1_gain = Matrix::full(1, d, 1.0);
        ly.ln1_bias = Matrix::zeros(1, d);
        ly.ff_w1 = detail::xavier_uniform(d, cfg.ff_dim, rng);
        ly.ff_b1 = Matrix::zeros(1, cfg.ff_dim);
        ly.ff_w2 = detail::xavier_uniform(cfg.ff_dim, d, rng);
        ly.ff_b2 = Matrix::zeros(1, d);
        ly.ln2_gain = Matrix::full(1, d, 1.0);
        ly.ln2_bias = Matrix::zeros(1, d);
    }

    p.injections.resize(cfg.injection_layers.size());
    for (size_t i = 0; i < cfg.injection_layers.size(); ++i) {
        const bool top = cfg.injection_layers[i] == cfg.num_layers;
        p.injections[i].resize(static_cast<size_t>(cfg.num_cls));
        for (auto& inj : p.injections[i]) {
            inj.w = top ? detail::xavier_uniform(d, d, rng, detail::kTopInjectionInitGain) : Matrix::identity(d);
            inj.b = Matrix::zeros(1, d);
        }
    }
    return p;
}

// W_k minus the across-CLS mean; at K=1 (or with the trick disabled) the
// projection is used as-is, since subtracting the mean of a single matrix
// would zero it out.
inline Matrix effective_projection(const std::vector<Matrix>& w_all, int k, bool reparam_enabled) {
    const int num_cls = static_cast<int>(w_all.size());
    if (k < 0 || k >= num_cls) throw std::invalid_argument("effective_projection: k out of range");
    if (!reparam_enabled || num_cls == 1) return w_all[static_cast<size_t>(k)];
    Matrix mean = w_all[0];
    for (int j = 1; j < num_cls; ++j) add_in_place(mean, w_all[static_cast<size_t>(j)]);
    scale_in_place(mean, 1.0 / num_cls);
    Matrix eff = w_all[static_cast<size_t>(k)];
    add_scaled(eff, -1.0, mean);
    return eff;
}

inline ParamLeaves leaves_on_tape(ad::Tape& tape, EncoderParams& params, const EncoderConfig& cfg) {
    ParamLeaves leaves;
    leaves.layers.resize(params.layers.size());
    leaves.injections.resize(params.injections.size());
    for (size_t i = 0; i < params.injections.size(); ++i) leaves.injections[i].resize(params.injections[i].size());

    std::vector<Matrix*> arrays;
    params.for_each_array(cfg, [&](const std::string&, Matrix& m) { arrays.push_back(&m); });
    size_t idx = 0;
    leaves.for_each_array(cfg, [&](const std::string&, ad::Node*& n) { n = tape.leaf(*arrays[idx++]); });
    return leaves;
}

namespace detail {

inline ad::Node* effective_projection_node(ad::Tape&, const std::vector<typename ParamLeaves::Injection>& inj, int k,
                                           bool reparam_enabled) {
    const int num_cls = static_cast<int>(inj.size());
    if (!reparam_enabled || num_cls == 1) return inj[static_cast<size_t>(k)].w;
    ad::Node* sum = inj[0].w;
    for (int j = 1; j < num_cls; ++j) sum = ad::add(sum, inj[static_cast<size_t>(j)].w);
    return ad::sub(inj[static_cast<size_t>(k)].w, ad::scale(sum, 1.0 / num_cls));
}

// Replaces the first K rows of H by their per-CLS projections.
inline ad::Node* cls_injection_nodes(ad::Tape& tape, ad::Node* h, const std::vector<typename ParamLeaves::Injection>& inj,
                                     int num_cls, bool reparam_enabled) {
    std::vector<ad::Node*> parts;
    parts.reserve(static_cast<size_t>(num_cls) + 1);
    for (int k = 0; k < num_cls; ++k) {
        ad::Node* row = ad::slice_rows(h, k, 1);
        ad::Node* w = effective_projection_node(tape, inj, k, reparam_enabled);
        parts.push_back(ad::add(ad::matmul(row, w), inj[static_cast<size_t>(k)].b));
    }
    if (h->value.rows > num_cls) parts.push_back(ad::slice_rows(h, num_cls, h->value.rows - num_cls));
    return ad::concat_rows(parts);
}

inline ad::Node* transformer_layer(ad::Tape& tape, ad::Node* h, const typename ParamLeaves::Layer& ly,
                                   const EncoderConfig& cfg) {
    const int d = cfg.hidden_dim;
    const int head_dim = d / cfg.num_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(head_dim));

    // attention sublayer
    ad::Node* z = ad::layer_norm_rows(h, ly.ln1_gain, ly.ln1_bias, kLayerNormEps);
    ad::Node* q = ad::add_row_broadcast(ad::matmul(z, ly.attn_wq), ly.attn_bq);
    ad::Node* k = ad::add_row_broadcast(ad::matmul(z, ly.attn_wk), ly.attn_bk);
    ad::Node* v = ad::add_row_broadcast(ad::matmul(z, ly.attn_wv), ly.attn_bv);
    std::vector<ad::Node*> head_outputs;
    head_outputs.reserve(static_cast<size_t>(cfg.num_heads));
    for (int hd = 0; hd < cfg.num_heads; ++hd) {
        ad::Node* qh = ad::slice_cols(q, hd * head_dim, head_dim);
        ad::Node* kh = ad::slice_cols(k, hd * head_dim, head_dim);
        ad::Node* vh = ad::slice_cols(v, hd * head_dim, head_dim);
        ad::Node* scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt_dh);
        ad::Node* weights = ad::softmax_rows(scores);
        head_outputs.push_back(ad::matmul(weights, vh));
    }
    ad::Node* attn = ad::add_row_broadcast(ad::matmul(ad::concat_cols(head_outputs), ly.attn_wo), ly.attn_bo);
    h = ad::add(h, attn);

    // feed-forward sublayer
    ad::Node* z2 = ad::layer_norm_rows(h, ly.ln2_gain, ly.ln2_bias, kLayerNormEps);
    ad::Node* f = ad::gelu(ad::add_row_broadcast(ad::matmul(z2, ly.ff_w1), ly.ff_b1));
    ad::Node* f2 = ad::add_row_broadcast(ad::matmul(f, ly.ff_w2), ly.ff_b2);
    return ad::add(h, f2);
}

}  // namespace detail

struct EncodeNodes {
    std::vector<ad::Node*> components;  // K nodes, each 1 x d
    ad::Node* pooled = nullptr;         // 1 x d
};

inline void validate_tokens(const EncoderConfig& cfg, const std::vector<int>& tokens) {
    if (tokens.empty()) throw std::invalid_argument("encode: empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg.max_seq_len)
        throw std::invalid_argument("encode: sequence longer than max_seq_len");
    for (int t : tokens)
        if (t < 0 || t >= cfg.vocab_size) throw std::invalid_argument("encode: token id out of vocabulary");
}

inline EncodeNodes encode_on_tape(ad::Tape& tape, const ParamLeaves& leaves, const EncoderConfig& cfg,
                                  const std::vector<int>& tokens) {
    validate_tokens(cfg, tokens);
    const int num_cls = cfg.num_cls;
    const int total = num_cls + static_cast<int>(tokens.size());

    std::vector<int> ids(static_cast<size_t>(total));
    std::vector<int> pos(static_cast<size_t>(total));
    for (int i = 0; i < num_cls; ++i) ids[static_cast<size_t>(i)] = i;
    for (size_t i = 0; i < tokens.size(); ++i) ids[static_cast<size_t>(num_cls) + i] = tokens[i];
    for (int i = 0; i < total; ++i) pos[static_cast<size_t>(i)] = i;

    ad::Node* h = ad::add(ad::gather_rows(leaves.token_embedding, ids), ad::gather_rows(leaves.position_embedding, pos));

    size_t inj_idx = 0;
    for (int l = 1; l <= cfg.num_layers; ++l) {
        h = detail::transformer_layer(tape, h, leaves.layers[static_cast<size_t>(l - 1)], cfg);
        if (cfg.is_injection_layer(l)) {
            if (cfg.injections_enabled)
                h = detail::cls_injection_nodes(tape, h, leaves.injections[inj_idx], num_cls, cfg.reparam_enabled);
            ++inj_idx;
        }
    }

    EncodeNodes out;
    out.components.reserve(static_cast<size_t>(num_cls));
    for (int k = 0; k < num_cls; ++k) out.components.push_back(ad::slice_rows(h, k, 1));
    out.pooled = ad::sum_rows(ad::slice_rows(h, 0, num_cls));
    return out;
}

// Forward pass without gradient bookkeeping exposed to the caller: builds a
// throwaway tape so there is exactly one implementation of the math.
inline EmbeddingSet encode(EncoderParams& params, const EncoderConfig& cfg, const std::vector<int>& tokens) {
    ad::Tape tape;
    ParamLeaves leaves = leaves_on_tape(tape, params, cfg);
    EncodeNodes nodes = encode_on_tape(tape, leaves, cfg, tokens);

    EmbeddingSet set;
    set.components = Matrix(cfg.num_cls, cfg.hidden_dim);
    for (int k = 0; k < cfg.num_cls; ++k)
        for (int j = 0; j < cfg.hidden_dim; ++j) set.components(k, j) = nodes.components[static_cast<size_t>(k)]->value(0, j);
    set.pooled = nodes.pooled->value;
    return set;
}

// Standalone form of the per-layer CLS replacement, for layer l (1-based).
inline Matrix apply_cls_injection(const Matrix& h, int layer_1based, const EncoderParams& params,
                                  const EncoderConfig& cfg) {
    if (!cfg.is_injection_layer(layer_1based)) throw std::invalid_argument("apply_cls_injection: not an injection layer");
    if (h.rows < cfg.num_cls || h.cols != cfg.hidden_dim)
        throw std::invalid_argument("apply_cls_injection: bad hidden-state shape");
    if (!cfg.injections_enabled) return h;

    size_t inj_idx = 0;
    while (cfg.injection_layers[inj_idx] != layer_1based) ++inj_idx;
    const auto& inj = params.injections[inj_idx];

    std::vector<Matrix> w_all;
    w_all.reserve(inj.size());
    for (const auto& i : inj) w_all.push_back(i.w);

    Matrix out = h;
    for (int k = 0; k < cfg.num_cls; ++k) {
        const Matrix eff = effective_projection(w_all, k, cfg.reparam_enabled);
        for (int j = 0; j < cfg.hidden_dim; ++j) {
            double acc = inj[static_cast<size_t>(k)].b(0, j);
            for (int i = 0; i < cfg.hidden_dim; ++i) acc += h(k, i) * eff(i, j);
            out(k, j) = acc;
        }
    }
    return out;
}

}  // namespace m2spe
