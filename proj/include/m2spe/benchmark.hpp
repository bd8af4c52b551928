// Retrieval / classification task construction over a corpus graph and the
// metrics that score them: MAP and nDCG under binary relevance, macro-F1
// via a multinomial logistic probe on frozen pooled embeddings.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "citegraph.hpp"
#include "encoder.hpp"
#include "matrix.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace m2spe {

enum class RetrievalKind { cite, cocite };

inline const char* retrieval_kind_name(RetrievalKind k) { return k == RetrievalKind::cite ? "cite" : "cocite"; }

struct RetrievalQuery {
    int query_id = 0;
    std::vector<int> positives;  // nonempty, bounded by max_pos
    std::vector<int> negatives;  // exactly n_neg, disjoint from positives and the query
};

struct RetrievalTask {
    RetrievalKind kind = RetrievalKind::cite;
    std::vector<RetrievalQuery> queries;
};

struct ClassificationTask {
    std::vector<std::pair<int, int>> train;  // (paper_id, domain)
    std::vector<std::pair<int, int>> test;
};

struct MetricEntry {
    std::string task;
    std::string metric;
    double value = 0.0;
};

struct MetricsReport {
    uint64_t seed = 0;
    std::string config_fingerprint;
    std::vector<MetricEntry> entries;

    double get(const std::string& task, const std::string& metric) const {
        for (const auto& e : entries)
            if (e.task == task && e.metric == metric) return e.value;
        throw std::invalid_argument("MetricsReport: no entry " + task + "/" + metric);
    }
};

// ---- task construction -----------------------------------------------------

namespace detail {

// Negatives avoid the query and the *entire* positive relation (every
// cited / co-cited paper), not just the sampled positives.
inline std::vector<int> sample_negatives(const CorpusGraph& g, int query_id, const std::vector<int>& related,
                                         int n_neg, Rng& rng) {
    std::vector<char> taken(static_cast<size_t>(g.size()), 0);
    taken[static_cast<size_t>(query_id)] = 1;
    int excluded = 1;
    for (int p : related)
        if (!taken[static_cast<size_t>(p)]) {
            taken[static_cast<size_t>(p)] = 1;
            ++excluded;
        }
    if (n_neg > g.size() - excluded) return {};  // pool too small; caller skips the query
    std::vector<int> negs;
    negs.reserve(static_cast<size_t>(n_neg));
    while (static_cast<int>(negs.size()) < n_neg) {
        const int c = rng.index(static_cast<size_t>(g.size()));
        if (!taken[static_cast<size_t>(c)]) {
            taken[static_cast<size_t>(c)] = 1;
            negs.push_back(c);
        }
    }
    std::sort(negs.begin(), negs.end());
    return negs;
}

inline std::vector<int> take_up_to(std::vector<int> pool, int max_count, Rng& rng) {
    rng.shuffle(pool);
    if (static_cast<int>(pool.size()) > max_count) pool.resize(static_cast<size_t>(max_count));
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace detail

// Queries are stratified exactly over domains; candidates whose positive
// pool is empty (no citations / no co-citations) are skipped.
inline RetrievalTask build_retrieval_task(const CorpusGraph& g, RetrievalKind kind, int num_queries, int max_pos,
                                          int n_neg, uint64_t seed) {
    if (num_queries < 1 || max_pos < 1 || n_neg < 1) throw std::invalid_argument("build_retrieval_task: bad sizes");
    if (n_neg > g.size() - 2) throw std::invalid_argument("build_retrieval_task: corpus too small for n_neg");

    const auto in_citations = build_in_citations(g);
    Rng rng(derive_seed(seed, kind == RetrievalKind::cite ? 0xc17e : 0xc0c17e));

    RetrievalTask task;
    task.kind = kind;
    for (int d = 1; d <= g.num_domains; ++d) {
        int quota = num_queries / g.num_domains + (d <= num_queries % g.num_domains ? 1 : 0);
        std::vector<int> candidates;
        for (const Paper& p : g.papers)
            if (p.domain == d) candidates.push_back(p.id);
        rng.shuffle(candidates);

        for (int qid : candidates) {
            if (quota == 0) break;
            std::vector<int> pool;
            if (kind == RetrievalKind::cite) {
                pool = g.papers[static_cast<size_t>(qid)].out_citations;
            } else {
                for (int citing : in_citations[static_cast<size_t>(qid)])
                    for (int sibling : g.papers[static_cast<size_t>(citing)].out_citations)
                        if (sibling != qid) pool.push_back(sibling);
                std::sort(pool.begin(), pool.end());
                pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
            }
            if (pool.empty()) continue;

            RetrievalQuery q;
            q.query_id = qid;
            std::vector<int> negatives = detail::sample_negatives(g, qid, pool, n_neg, rng);
            if (negatives.empty()) continue;
            q.positives = detail::take_up_to(std::move(pool), max_pos, rng);
            q.negatives = std::move(negatives);
            task.queries.push_back(std::move(q));
            --quota;
        }
    }
    return task;
}

inline ClassificationTask build_classification_task(const CorpusGraph& g, double test_fraction, uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw std::invalid_argument("build_classification_task: test_fraction must be in (0,1)");
    Rng rng(derive_seed(seed, 0xc1a55));

    ClassificationTask task;
    for (int d = 1; d <= g.num_domains; ++d) {
        std::vector<int> ids;
        for (const Paper& p : g.papers)
            if (p.domain == d) ids.push_back(p.id);
        if (ids.size() < 2) throw std::invalid_argument("build_classification_task: domain with fewer than 2 papers");
        rng.shuffle(ids);
        int n_test = static_cast<int>(std::llround(test_fraction * static_cast<double>(ids.size())));
        n_test = std::clamp(n_test, 1, static_cast<int>(ids.size()) - 1);
        for (size_t i = 0; i < ids.size(); ++i)
            (static_cast<int>(i) < n_test ? task.test : task.train).push_back({ids[i], d});
    }
    auto by_id = [](const std::pair<int, int>& a, const std::pair<int, int>& b) { return a.first < b.first; };
    std::sort(task.train.begin(), task.train.end(), by_id);
    std::sort(task.test.begin(), task.test.end(), by_id);
    return task;
}

// ---- ranking and metrics ----------------------------------------------------

// Pooled embeddings for a corpus, one row per paper id.
struct PooledEmbeddings {
    Matrix rows;                // n x d
    std::vector<char> present;  // per id

    const double* of(int id) const {
        if (id < 0 || id >= rows.rows || !present[static_cast<size_t>(id)])
            throw std::invalid_argument("missing embedding for paper " + std::to_string(id));
        return rows.row_ptr(id);
    }
};

// Descending dot product with the query; ties broken by ascending id.
inline std::vector<int> rank_candidates(const PooledEmbeddings& emb, int query_id, const std::vector<int>& pool) {
    const double* q = emb.of(query_id);
    std::vector<std::pair<double, int>> scored;
    scored.reserve(pool.size());
    for (int id : pool) scored.push_back({dot_span(q, emb.of(id), emb.rows.cols), id});
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<int> order;
    order.reserve(scored.size());
    for (const auto& s : scored) order.push_back(s.second);
    return order;
}

inline double average_precision(const std::vector<int>& ranking, const std::vector<int>& positives) {
    if (positives.empty()) throw std::invalid_argument("average_precision: empty positive set");
    std::vector<int> pos = positives;
    std::sort(pos.begin(), pos.end());
    int hits = 0;
    double acc = 0.0;
    for (size_t r = 0; r < ranking.size(); ++r) {
        if (std::binary_search(pos.begin(), pos.end(), ranking[r])) {
            ++hits;
            acc += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    }
    if (hits != static_cast<int>(pos.size()))
        throw std::invalid_argument("average_precision: positives missing from ranking");
    return acc / static_cast<double>(pos.size());
}

// Binary-relevance nDCG with gain 1/log2(rank+1).
inline double ndcg(const std::vector<int>& ranking, const std::vector<int>& positives) {
    if (positives.empty()) throw std::invalid_argument("ndcg: empty positive set");
    std::vector<int> pos = positives;
    std::sort(pos.begin(), pos.end());
    int hits = 0;
    double dcg = 0.0;
    for (size_t r = 0; r < ranking.size(); ++r) {
        if (std::binary_search(pos.begin(), pos.end(), ranking[r])) {
            ++hits;
            dcg += 1.0 / std::log2(static_cast<double>(r + 2));
        }
    }
    if (hits != static_cast<int>(pos.size())) throw std::invalid_argument("ndcg: positives missing from ranking");
    double ideal = 0.0;
    for (size_t r = 0; r < pos.size(); ++r) ideal += 1.0 / std::log2(static_cast<double>(r + 2));
    return dcg / ideal;
}

inline double macro_f1(const std::vector<int>& predictions, const std::vector<int>& gold) {
    if (predictions.size() != gold.size()) throw std::invalid_argument("macro_f1: length mismatch");
    std::vector<int> classes;
    for (int c : predictions) classes.push_back(c);
    for (int c : gold) classes.push_back(c);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

    double sum = 0.0;
    for (int c : classes) {
        int tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < gold.size(); ++i) {
            if (predictions[i] == c && gold[i] == c) ++tp;
            if (predictions[i] == c && gold[i] != c) ++fp;
            if (predictions[i] != c && gold[i] == c) ++fn;
        }
        const double precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        sum += precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    return sum / static_cast<double>(classes.size());
}

// ---- linear probe ------------------------------------------------------------

// Multinomial logistic regression on frozen features, full-batch gradient
// descent from a zero start. Features are standardized with training-set
// statistics for conditioning; at epochs = 0 every class is equally likely
// and argmax falls back to the lowest class index.
struct LinearProbe {
    Matrix weights;  // (d+1) x C, last row is the bias
    std::vector<double> feature_mean;
    std::vector<double> feature_inv_std;
    int num_classes = 0;

    int predict(const double* x, int d) const {
        int best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < num_classes; ++c) {
            double score = weights(d, c);
            for (int j = 0; j < d; ++j) score += (x[j] - feature_mean[static_cast<size_t>(j)]) *
                                                 feature_inv_std[static_cast<size_t>(j)] * weights(j, c);
            if (score > best_score) {
                best_score = score;
                best = c;
            }
        }
        return best;
    }
};

inline LinearProbe fit_linear_probe(const Matrix& features, const std::vector<int>& labels, int num_classes,
                                    int epochs, double lr, uint64_t /*seed: zero init, kept for the contract*/) {
    const int n = features.rows;
    const int d = features.cols;
    if (n == 0 || static_cast<int>(labels.size()) != n) throw std::invalid_argument("fit_linear_probe: bad inputs");
    std::vector<int> seen(static_cast<size_t>(num_classes), 0);
    for (int y : labels) {
        if (y < 0 || y >= num_classes) throw std::invalid_argument("fit_linear_probe: label out of range");
        seen[static_cast<size_t>(y)] = 1;
    }
    for (int c = 0; c < num_classes; ++c)
        if (!seen[static_cast<size_t>(c)]) throw std::invalid_argument("fit_linear_probe: class absent from training data");

    LinearProbe probe;
    probe.num_classes = num_classes;
    probe.feature_mean.assign(static_cast<size_t>(d), 0.0);
    probe.feature_inv_std.assign(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) probe.feature_mean[static_cast<size_t>(j)] += features(i, j);
    for (int j = 0; j < d; ++j) probe.feature_mean[static_cast<size_t>(j)] /= n;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            const double diff = features(i, j) - probe.feature_mean[static_cast<size_t>(j)];
            probe.feature_inv_std[static_cast<size_t>(j)] += diff * diff;
        }
    for (int j = 0; j < d; ++j)
        probe.feature_inv_std[static_cast<size_t>(j)] = 1.0 / std::max(std::sqrt(probe.feature_inv_std[static_cast<size_t>(j)] / n), 1e-8);

    Matrix x(n, d + 1);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j)
            x(i, j) = (features(i, j) - probe.feature_mean[static_cast<size_t>(j)]) * probe.feature_inv_std[static_cast<size_t>(j)];
        x(i, d) = 1.0;
    }

    probe.weights = Matrix::zeros(d + 1, num_classes);
    Matrix probs(n, num_classes);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        probs = mm(x, probe.weights);
        for (int i = 0; i < n; ++i) {
            double* row = probs.row_ptr(i);
            double mx = row[0];
            for (int c = 1; c < num_classes; ++c) mx = std::max(mx, row[c]);
            double sum = 0.0;
            for (int c = 0; c < num_classes; ++c) {
                row[c] = std::exp(row[c] - mx);
                sum += row[c];
            }
            for (int c = 0; c < num_classes; ++c) row[c] /= sum;
            row[labels[static_cast<size_t>(i)]] -= 1.0;
        }
        Matrix grad(d + 1, num_classes);
        add_mm_tn(grad, x, probs);
        add_scaled(probe.weights, -lr / n, grad);
    }
    return probe;
}

// ---- end-to-end evaluation ----------------------------------------------------

struct BenchmarkTasks {
    std::vector<RetrievalTask> retrieval;
    std::optional<ClassificationTask> classification;
};

struct EvalOptions {
    int probe_epochs = 300;
    double probe_lr = 0.5;
    int threads = 1;
};

inline std::string config_fingerprint(const EncoderConfig& cfg) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    auto mix = [&h](uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xff;
            h *= 1099511628211ULL;
        }
    };
    mix(static_cast<uint64_t>(cfg.num_layers));
    mix(static_cast<uint64_t>(cfg.num_heads));
    mix(static_cast<uint64_t>(cfg.hidden_dim));
    mix(static_cast<uint64_t>(cfg.ff_dim));
    mix(static_cast<uint64_t>(cfg.num_cls));
    mix(static_cast<uint64_t>(cfg.vocab_size));
    mix(static_cast<uint64_t>(cfg.max_seq_len));
    uint64_t lambda_bits;
    static_assert(sizeof(lambda_bits) == sizeof(cfg.lambda));
    std::memcpy(&lambda_bits, &cfg.lambda, sizeof(lambda_bits));
    mix(lambda_bits);
    mix(cfg.reparam_enabled ? 1u : 0u);
    mix(cfg.injections_enabled ? 2u : 0u);
    for (int l : cfg.injection_layers) mix(static_cast<uint64_t>(l));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Encodes every paper once (pooled vectors only). Tokens longer than the
// encoder window are truncated.
inline PooledEmbeddings encode_corpus(EncoderParams& params, const EncoderConfig& cfg, const CorpusGraph& g,
                                      int threads = 1) {
    PooledEmbeddings emb;
    emb.rows = Matrix(g.size(), cfg.hidden_dim);
    emb.present.assign(static_cast<size_t>(g.size()), 1);
    parallel_for(g.size(), threads, [&](int i) {
        std::vector<int> tokens = g.papers[static_cast<size_t>(i)].tokens;
        if (static_cast<int>(tokens.size()) > cfg.max_seq_len) tokens.resize(static_cast<size_t>(cfg.max_seq_len));
        const EmbeddingSet set = encode(params, cfg, tokens);
        for (int j = 0; j < cfg.hidden_dim; ++j) emb.rows(i, j) = set.pooled(0, j);
    });
    return emb;
}

inline MetricsReport evaluate_encoder(EncoderParams& params, const EncoderConfig& cfg, const CorpusGraph& g,
                                      const BenchmarkTasks& tasks, uint64_t seed, const EvalOptions& opt = {}) {
    const PooledEmbeddings emb = encode_corpus(params, cfg, g, opt.threads);

    MetricsReport report;
    report.seed = seed;
    report.config_fingerprint = config_fingerprint(cfg);

    for (const RetrievalTask& task : tasks.retrieval) {
        double map_sum = 0.0, ndcg_sum = 0.0;
        int counted = 0;
        for (const RetrievalQuery& q : task.queries) {
            if (q.positives.empty()) continue;
            std::vector<int> pool = q.positives;
            pool.insert(pool.end(), q.negatives.begin(), q.negatives.end());
            const std::vector<int> order = rank_candidates(emb, q.query_id, pool);
            map_sum += average_precision(order, q.positives);
            ndcg_sum += ndcg(order, q.positives);
            ++counted;
        }
        if (counted == 0) throw std::invalid_argument("evaluate_encoder: retrieval task has no scorable queries");
        const std::string name = retrieval_kind_name(task.kind);
        report.entries.push_back({name, "map", map_sum / counted});
        report.entries.push_back({name, "ndcg", ndcg_sum / counted});
    }

    if (tasks.classification) {
        const ClassificationTask& clf = *tasks.classification;
        Matrix train_x(static_cast<int>(clf.train.size()), cfg.hidden_dim);
        std::vector<int> train_y;
        for (size_t i = 0; i < clf.train.size(); ++i) {
            const double* row = emb.of(clf.train[i].first);
            for (int j = 0; j < cfg.hidden_dim; ++j) train_x(static_cast<int>(i), j) = row[j];
            train_y.push_back(clf.train[i].second - 1);
        }
        const LinearProbe probe =
            fit_linear_probe(train_x, train_y, g.num_domains, opt.probe_epochs, opt.probe_lr, seed);
        std::vector<int> pred, gold;
        for (const auto& [id, domain] : clf.test) {
            pred.push_back(probe.predict(emb.of(id), cfg.hidden_dim) + 1);
            gold.push_back(domain);
        }
        report.entries.push_back({"clf", "macro_f1", macro_f1(pred, gold)});
    }
    return report;
}

// CSV with one row per (task, metric, seed); values at 6 decimal places.
inline std::string metrics_csv(const std::vector<MetricsReport>& reports) {
    std::string out = "task,metric,seed,value\n";
    char buf[160];
    for (const MetricsReport& r : reports) {
        for (const MetricEntry& e : r.entries) {
            std::snprintf(buf, sizeof buf, "%s,%s,%llu,%.6f\n", e.task.c_str(), e.metric.c_str(),
                          static_cast<unsigned long long>(r.seed), e.value);
            out += buf;
        }
    }
    return out;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsReport>& reports) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
    out << metrics_csv(reports);
    if (!out) throw std::runtime_error("write_metrics_csv: write failed");
}

}  // namespace m2spe
