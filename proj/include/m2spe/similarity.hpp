// Pair similarity and the contrastive citation loss.
//
// Training similarity blends the best single CLS-pair dot product with the
// pooled dot product: lambda * max_{i,j} c_i^A . c_j^B + (1-lambda) * c^A . c^B.
// The max term is subdifferentiated through the argmax pair only; ties are
// broken toward the lexicographically smallest (i, j).
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "autodiff.hpp"
#include "encoder.hpp"
#include "matrix.hpp"

namespace m2spe {

struct SimilarityScore {
    double value = 0.0;
    int argmax_i = 1;  // 1-based CLS indices of the winning pair
    int argmax_j = 1;
};

struct TripletBatch {
    EmbeddingSet query;
    EmbeddingSet positive;
    std::vector<EmbeddingSet> negatives;
};

inline Matrix pooled_embedding(const EmbeddingSet& es) { return es.pooled; }

inline void check_compatible(const EmbeddingSet& a, const EmbeddingSet& b) {
    if (a.num_cls() != b.num_cls() || a.dim() != b.dim())
        throw std::invalid_argument("embedding sets disagree in K or dimension");
}

inline SimilarityScore pair_similarity(const EmbeddingSet& a, const EmbeddingSet& b, double lambda) {
    check_compatible(a, b);
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("pair_similarity: lambda must be in [0,1]");
    const int num_cls = a.num_cls();
    const int d = a.dim();

    SimilarityScore s;
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < num_cls; ++i) {
        for (int j = 0; j < num_cls; ++j) {
            const double v = dot_span(a.components.row_ptr(i), b.components.row_ptr(j), d);
            if (v > best) {
                best = v;
                s.argmax_i = i + 1;
                s.argmax_j = j + 1;
            }
        }
    }
    const double pooled = dot_span(a.pooled.row_ptr(0), b.pooled.row_ptr(0), d);
    s.value = lambda * best + (1.0 - lambda) * pooled;
    return s;
}

// Graph version over encoder outputs; returns the scalar similarity node.
inline ad::Node* pair_similarity_nodes(ad::Tape& tape, const EncodeNodes& a, const EncodeNodes& b, double lambda,
                                       int* argmax_flat = nullptr) {
    const int num_cls = static_cast<int>(a.components.size());
    if (num_cls != static_cast<int>(b.components.size()))
        throw std::invalid_argument("pair_similarity_nodes: K mismatch");
    std::vector<ad::Node*> dots;
    dots.reserve(static_cast<size_t>(num_cls) * num_cls);
    for (int i = 0; i < num_cls; ++i)
        for (int j = 0; j < num_cls; ++j)
            dots.push_back(ad::dot(a.components[static_cast<size_t>(i)], b.components[static_cast<size_t>(j)]));
    ad::Node* max_term = ad::max_of(dots, argmax_flat);  // list is in lexicographic (i, j) order
    ad::Node* pooled_term = ad::dot(a.pooled, b.pooled);
    return ad::add(ad::scale(max_term, lambda), ad::scale(pooled_term, 1.0 - lambda));
}

// Cross-entropy of picking the cited paper among {positive} + negatives,
// with similarities as logits: logsumexp(all) - s(query, positive).
inline ad::Node* contrastive_loss_nodes(ad::Tape& tape, ad::Node* sim_positive,
                                        const std::vector<ad::Node*>& sim_negatives) {
    if (sim_negatives.empty()) throw std::invalid_argument("contrastive_loss: needs at least one negative");
    std::vector<ad::Node*> logits;
    logits.reserve(sim_negatives.size() + 1);
    logits.push_back(sim_positive);
    for (ad::Node* n : sim_negatives) logits.push_back(n);
    return ad::sub(ad::logsumexp(logits), sim_positive);
}

namespace detail {

inline EncodeNodes embedding_set_leaves(ad::Tape& tape, const EmbeddingSet& es) {
    EncodeNodes nodes;
    nodes.components.reserve(static_cast<size_t>(es.num_cls()));
    std::vector<ad::Node*> rows;
    for (int k = 0; k < es.num_cls(); ++k) {
        Matrix row(1, es.dim());
        for (int j = 0; j < es.dim(); ++j) row(0, j) = es.components(k, j);
        nodes.components.push_back(tape.leaf(std::move(row)));
        rows.push_back(nodes.components.back());
    }
    nodes.pooled = ad::sum_rows(ad::concat_rows(rows));
    return nodes;
}

}  // namespace detail

// Loss value over concrete embedding sets (pooled vectors are recomputed
// from the components so gradients reach them through both routes).
inline double contrastive_loss(const TripletBatch& batch, double lambda) {
    check_compatible(batch.query, batch.positive);
    for (const auto& n : batch.negatives) check_compatible(batch.query, n);

    ad::Tape tape;
    EncodeNodes q = detail::embedding_set_leaves(tape, batch.query);
    EncodeNodes p = detail::embedding_set_leaves(tape, batch.positive);
    ad::Node* sim_pos = pair_similarity_nodes(tape, q, p, lambda);
    std::vector<ad::Node*> sim_negs;
    for (const auto& neg : batch.negatives) {
        EncodeNodes n = detail::embedding_set_leaves(tape, neg);
        sim_negs.push_back(pair_similarity_nodes(tape, q, n, lambda));
    }
    return contrastive_loss_nodes(tape, sim_pos, sim_negs)->value(0, 0);
}

}  // namespace m2spe
