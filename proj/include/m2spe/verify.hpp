// End-to-end gradient verification: reverse-mode gradients of the
// contrastive loss through the encoder, checked against the central
// finite-difference oracle for every parameter array.
#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "encoder.hpp"
#include "gradcheck.hpp"
#include "rng.hpp"
#include "similarity.hpp"
#include "train.hpp"

namespace m2spe {

inline std::vector<Matrix> flatten_params(EncoderParams& params, const EncoderConfig& cfg) {
    std::vector<Matrix> out;
    params.for_each_array(cfg, [&](const std::string&, Matrix& m) { out.push_back(m); });
    return out;
}

inline void unflatten_params(EncoderParams& params, const EncoderConfig& cfg, const std::vector<Matrix>& arrays) {
    size_t idx = 0;
    params.for_each_array(cfg, [&](const std::string&, Matrix& m) { m = arrays[idx++]; });
}

namespace detail {

// Uniform jitter moves every array off its structured starting point
// (identity injections, unit gains) so the check runs at a generic point.
inline void perturb_params(EncoderParams& params, const EncoderConfig& cfg, Rng& rng, double amplitude) {
    params.for_each_array(cfg, [&](const std::string&, Matrix& m) {
        for (double& v : m.data) v += rng.uniform(-amplitude, amplitude);
    });
}

inline std::vector<int> random_tokens(Rng& rng, const EncoderConfig& cfg, int len) {
    std::vector<int> t(static_cast<size_t>(len));
    for (int& x : t) x = cfg.num_cls + rng.index(static_cast<size_t>(cfg.vocab_size - cfg.num_cls));
    return t;
}

// The max term of the similarity is non-differentiable at ties; reject
// instances where any pair-dot max is nearly tied so the finite-difference
// oracle stays valid.
inline bool has_tied_max(EncoderParams& params, const EncoderConfig& cfg, const std::vector<int>& a,
                         const std::vector<int>& b, double margin) {
    const EmbeddingSet ea = encode(params, cfg, a);
    const EmbeddingSet eb = encode(params, cfg, b);
    double best = -std::numeric_limits<double>::infinity();
    double second = best;
    for (int i = 0; i < cfg.num_cls; ++i)
        for (int j = 0; j < cfg.num_cls; ++j) {
            const double v = dot_span(ea.components.row_ptr(i), eb.components.row_ptr(j), cfg.hidden_dim);
            if (v > best) {
                second = best;
                best = v;
            } else if (v > second) {
                second = v;
            }
        }
    return cfg.num_cls > 1 && best - second < margin * std::max(1.0, std::abs(best));
}

}  // namespace detail

struct GradCheckResult {
    bool passed = true;
    int instances = 0;
    double worst_rel_error = 0.0;
    std::string worst_array;
};

// One instance: random parameters and token sequences, loss over a triplet
// with two negatives, full finite differences over every coordinate.
inline GradCheckResult encoder_gradient_check(const EncoderConfig& cfg, int num_instances, double rel_tol,
                                              uint64_t seed, std::ostream* log = nullptr, int seq_len = 4) {
    cfg.validate();
    GradCheckResult result;

    uint64_t instance_seed = seed;
    for (int inst = 0; inst < num_instances; ++inst) {
        EncoderParams params;
        std::vector<int> q, p;
        std::vector<std::vector<int>> negs;
        for (int attempt = 0;; ++attempt) {
            ++instance_seed;
            Rng rng(derive_seed(instance_seed, 0x6c));
            params = init_encoder(cfg, instance_seed);
            detail::perturb_params(params, cfg, rng, 0.1);
            q = detail::random_tokens(rng, cfg, seq_len);
            p = detail::random_tokens(rng, cfg, seq_len);
            negs = {detail::random_tokens(rng, cfg, seq_len), detail::random_tokens(rng, cfg, seq_len)};

            bool tied = detail::has_tied_max(params, cfg, q, p, 1e-2);
            for (const auto& n : negs) tied = tied || detail::has_tied_max(params, cfg, q, n, 1e-2);
            if (!tied) break;
            if (attempt > 64) throw std::runtime_error("encoder_gradient_check: cannot find tie-free instance");
        }

        // reverse-mode gradients
        ad::Tape tape;
        const ParamLeaves leaves = leaves_on_tape(tape, params, cfg);
        ad::Node* loss = triplet_loss_nodes(tape, leaves, cfg, cfg.lambda, q, p, negs);
        tape.backward(loss);
        std::vector<Matrix> autodiff_grads;
        const_cast<ParamLeaves&>(leaves).for_each_array(
            cfg, [&](const std::string&, ad::Node*& n) { autodiff_grads.push_back(n->grad); });

        // finite-difference oracle
        EncoderParams scratch = params;
        auto loss_value = [&](const std::vector<Matrix>& theta) {
            unflatten_params(scratch, cfg, theta);
            ad::Tape t;
            const ParamLeaves lv = leaves_on_tape(t, scratch, cfg);
            return triplet_loss_nodes(t, lv, cfg, cfg.lambda, q, p, negs)->value(0, 0);
        };
        const std::vector<Matrix> fd_grads = finite_difference_gradient(loss_value, flatten_params(params, cfg));

        std::vector<std::string> names;
        params.for_each_array(cfg, [&](const std::string& name, Matrix&) { names.push_back(name); });
        for (size_t a = 0; a < fd_grads.size(); ++a) {
            double worst = 0.0;
            const bool ok = gradients_close(autodiff_grads[a], fd_grads[a], rel_tol, 1e-6, &worst);
            if (worst > result.worst_rel_error) {
                result.worst_rel_error = worst;
                result.worst_array = names[a];
            }
            if (!ok) {
                result.passed = false;
                if (log) *log << "gradcheck FAIL instance " << inst << " array " << names[a] << " rel error " << worst
                              << "\n";
            }
        }
        ++result.instances;
    }
    if (log)
        *log << "gradcheck " << (result.passed ? "ok" : "FAILED") << ": " << result.instances
             << " instances, worst rel error " << result.worst_rel_error << " (" << result.worst_array << ")\n";
    return result;
}

}  // namespace m2spe
