#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "m2spe/benchmark.hpp"
#include "m2spe/citegraph.hpp"
#include "m2spe/encoder.hpp"
#include "m2spe/rng.hpp"

using namespace m2spe;

namespace {

PooledEmbeddings planted(std::initializer_list<std::initializer_list<double>> rows) {
    PooledEmbeddings e;
    e.rows = Matrix::from_rows(rows);
    e.present.assign(static_cast<size_t>(e.rows.rows), 1);
    return e;
}

// Literal-definition oracles, coded independently of the implementation:
// membership is re-scanned at every rank instead of keeping running state.
double oracle_ap(const std::vector<int>& ranking, const std::vector<int>& positives) {
    double sum = 0.0;
    for (size_t r = 1; r <= ranking.size(); ++r) {
        const bool is_pos = std::count(positives.begin(), positives.end(), ranking[r - 1]) > 0;
        if (!is_pos) continue;
        int in_prefix = 0;
        for (size_t i = 0; i < r; ++i)
            in_prefix += std::count(positives.begin(), positives.end(), ranking[i]) > 0;
        sum += static_cast<double>(in_prefix) / static_cast<double>(r);
    }
    return sum / static_cast<double>(positives.size());
}

double oracle_ndcg(const std::vector<int>& ranking, const std::vector<int>& positives) {
    double dcg = 0.0;
    for (size_t r = 1; r <= ranking.size(); ++r)
        if (std::count(positives.begin(), positives.end(), ranking[r - 1]) > 0)
            dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    double ideal = 0.0;
    for (size_t r = 1; r <= positives.size(); ++r) ideal += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    return dcg / ideal;
}

}  // namespace

TEST_CASE("rank_candidates") {
    const PooledEmbeddings emb = planted({{1, 0}, {2, 0}, {1, 0}, {0, 5}});
    SECTION("hand-evaluated dots") {
        REQUIRE(rank_candidates(emb, 0, {1, 2, 3}) == std::vector<int>{1, 2, 3});  // dots 2, 1, 0
    }
    SECTION("ties fall back to ascending id") {
        const PooledEmbeddings same = planted({{1, 0}, {3, 0}, {3, 0}, {3, 0}});
        REQUIRE(rank_candidates(same, 0, {3, 1, 2}) == std::vector<int>{1, 2, 3});
    }
    SECTION("positive rescaling never changes the order") {
        PooledEmbeddings scaled = planted({{1, 0}, {2, 0}, {1, 0}, {0, 5}});
        scale_in_place(scaled.rows, 3.0);
        REQUIRE(rank_candidates(scaled, 0, {1, 2, 3}) == rank_candidates(emb, 0, {1, 2, 3}));
    }
    SECTION("missing embedding is rejected") {
        PooledEmbeddings partial = planted({{1, 0}, {2, 0}});
        partial.present[1] = 0;
        REQUIRE_THROWS_AS(rank_candidates(partial, 0, {1}), std::invalid_argument);
    }
}

TEST_CASE("average precision and ndcg closed forms") {
    // positives at ranks 1 and 3
    REQUIRE(average_precision({"a"[0], 'x', 'b', 'y'}, {'a', 'b'}) == Catch::Approx(5.0 / 6.0).margin(1e-12));
    REQUIRE(average_precision({'a', 'b', 'x', 'y'}, {'a', 'b'}) == 1.0);
    for (int r = 1; r <= 5; ++r) {
        std::vector<int> ranking{10, 11, 12, 13, 14};
        std::vector<int> pos{ranking[static_cast<size_t>(r - 1)]};
        REQUIRE(average_precision(ranking, pos) == Catch::Approx(1.0 / r).margin(1e-12));
    }
    REQUIRE_THROWS_AS(average_precision({1, 2}, {}), std::invalid_argument);
    REQUIRE_THROWS_AS(average_precision({1, 2}, {9}), std::invalid_argument);

    REQUIRE(ndcg({7, 8}, {7}) == 1.0);
    REQUIRE(ndcg({8, 7}, {7}) == Catch::Approx(0.630930).margin(1e-6));
    REQUIRE(ndcg({8, 7}, {7}) == Catch::Approx(1.0 / std::log2(3.0)).margin(1e-15));
    REQUIRE(ndcg({1, 2, 3}, {1, 2, 3}) == 1.0);
}

TEST_CASE("metrics match exhaustive brute force on all pools up to size 6") {
    for (int n = 2; n <= 6; ++n) {
        std::vector<int> pool(static_cast<size_t>(n));
        std::iota(pool.begin(), pool.end(), 100);
        for (int mask = 1; mask < (1 << n); ++mask) {
            std::vector<int> positives;
            for (int i = 0; i < n; ++i)
                if (mask & (1 << i)) positives.push_back(pool[static_cast<size_t>(i)]);
            std::vector<int> perm = pool;
            std::sort(perm.begin(), perm.end());
            do {
                REQUIRE(average_precision(perm, positives) == oracle_ap(perm, positives));
                REQUIRE(ndcg(perm, positives) == oracle_ndcg(perm, positives));
            } while (std::next_permutation(perm.begin(), perm.end()));
        }
    }
}

TEST_CASE("MAP is 1 exactly when every positive outranks every negative") {
    Rng rng(40);
    for (int rep = 0; rep < 200; ++rep) {
        const int n = 2 + rng.index(5);
        std::vector<int> perm(static_cast<size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        const int num_pos = 1 + rng.index(static_cast<size_t>(n - 1));
        std::vector<int> positives;
        for (int i = 0; i < num_pos; ++i) positives.push_back(i);  // ids 0..num_pos-1

        bool all_first = true;
        for (int i = 0; i < num_pos; ++i) all_first = all_first && perm[static_cast<size_t>(i)] < num_pos;
        REQUIRE((average_precision(perm, positives) == 1.0) == all_first);
    }
}

TEST_CASE("macro F1") {
    REQUIRE(macro_f1({1, 2, 1, 2}, {1, 2, 1, 2}) == 1.0);
    // class 1 perfectly predicted, class 2 never predicted
    REQUIRE(macro_f1({1, 1, 1, 1}, {1, 1, 1, 2}) == Catch::Approx(0.5 * (2.0 * (3.0 / 4.0) / (3.0 / 4.0 + 1.0))).margin(1e-12));
    // all predictions one class over uniform two-class gold: F1 = 2/3 and 0
    REQUIRE(macro_f1({1, 1, 1, 1}, {1, 1, 2, 2}) == Catch::Approx(1.0 / 3.0).margin(1e-12));
    REQUIRE_THROWS_AS(macro_f1({1}, {1, 2}), std::invalid_argument);
}

TEST_CASE("linear probe") {
    SECTION("separable clusters reach full training accuracy") {
        Rng rng(20);
        Matrix x(20, 2);
        std::vector<int> y;
        for (int i = 0; i < 20; ++i) {
            const int cls = i % 2;
            x(i, 0) = (cls == 0 ? -2.0 : 2.0) + rng.uniform(-0.3, 0.3);
            x(i, 1) = rng.uniform(-0.5, 0.5);
            y.push_back(cls);
        }
        const LinearProbe probe = fit_linear_probe(x, y, 2, 500, 0.5, 1);
        for (int i = 0; i < 20; ++i) REQUIRE(probe.predict(x.row_ptr(i), 2) == y[static_cast<size_t>(i)]);
    }
    SECTION("zero epochs predict the lowest class index") {
        const Matrix x = Matrix::from_rows({{1.0, 2.0}, {-1.0, 0.5}});
        const LinearProbe probe = fit_linear_probe(x, {0, 1}, 2, 0, 0.5, 1);
        REQUIRE(probe.predict(x.row_ptr(0), 2) == 0);
        REQUIRE(probe.predict(x.row_ptr(1), 2) == 0);
    }
    SECTION("deterministic and validated") {
        Rng rng(2);
        Matrix x(6, 3);
        for (double& v : x.data) v = rng.uniform(-1, 1);
        const std::vector<int> y{0, 1, 2, 0, 1, 2};
        const LinearProbe a = fit_linear_probe(x, y, 3, 50, 0.3, 9);
        const LinearProbe b = fit_linear_probe(x, y, 3, 50, 0.3, 9);
        REQUIRE(a.weights.data == b.weights.data);
        REQUIRE_THROWS_AS(fit_linear_probe(x, {0, 1, 1, 0, 1, 1}, 3, 10, 0.3, 9), std::invalid_argument);
    }
}

TEST_CASE("retrieval task construction validates against the graph") {
    CorpusSpec spec;
    spec.num_domains = 3;
    spec.papers_per_domain = 20;  // 60-paper corpus
    spec.citations_per_paper = 4.0;
    spec.p_cross = 0.2;
    spec.vocab_size = 64;
    spec.seq_len_min = 4;
    spec.seq_len_max = 8;
    const CorpusGraph g = generate_corpus(spec, 13);
    const auto in_citations = build_in_citations(g);

    for (const RetrievalKind kind : {RetrievalKind::cite, RetrievalKind::cocite}) {
        const RetrievalTask task = build_retrieval_task(g, kind, 30, 5, 20, 99);
        REQUIRE_FALSE(task.queries.empty());
        for (const RetrievalQuery& q : task.queries) {
            REQUIRE_FALSE(q.positives.empty());
            REQUIRE(static_cast<int>(q.positives.size()) <= 5);
            REQUIRE(static_cast<int>(q.negatives.size()) == 20);
            for (int p : q.positives) {
                REQUIRE(p != q.query_id);
                if (kind == RetrievalKind::cite) {
                    REQUIRE(g.papers[static_cast<size_t>(q.query_id)].cites(p));
                } else {
                    // brute force: some third paper cites both the query and p
                    bool found = false;
                    for (const Paper& third : g.papers) found = found || (third.cites(q.query_id) && third.cites(p));
                    REQUIRE(found);
                }
            }
            REQUIRE(static_cast<int>(q.negatives.size()) == 20);
            for (int neg : q.negatives) {
                REQUIRE(neg != q.query_id);
                REQUIRE(std::find(q.positives.begin(), q.positives.end(), neg) == q.positives.end());
                if (kind == RetrievalKind::cite) {
                    REQUIRE_FALSE(g.papers[static_cast<size_t>(q.query_id)].cites(neg));
                } else {
                    for (const Paper& third : g.papers)
                        REQUIRE_FALSE((third.cites(q.query_id) && third.cites(neg)));
                }
            }
        }
        const RetrievalTask again = build_retrieval_task(g, kind, 30, 5, 20, 99);
        REQUIRE(again.queries.size() == task.queries.size());
        for (size_t i = 0; i < task.queries.size(); ++i) {
            REQUIRE(again.queries[i].query_id == task.queries[i].query_id);
            REQUIRE(again.queries[i].positives == task.queries[i].positives);
            REQUIRE(again.queries[i].negatives == task.queries[i].negatives);
        }
    }
    REQUIRE_THROWS_AS(build_retrieval_task(g, RetrievalKind::cite, 10, 5, 60, 1), std::invalid_argument);
}

TEST_CASE("classification task construction") {
    CorpusSpec spec;
    spec.num_domains = 2;
    spec.papers_per_domain = 10;
    spec.citations_per_paper = 2.0;
    spec.vocab_size = 32;
    spec.seq_len_min = 3;
    spec.seq_len_max = 5;
    const CorpusGraph g = generate_corpus(spec, 4);

    const ClassificationTask t = build_classification_task(g, 0.5, 17);
    REQUIRE(t.train.size() == 10);
    REQUIRE(t.test.size() == 10);
    for (int d = 1; d <= 2; ++d) {
        const auto count = [&](const std::vector<std::pair<int, int>>& v) {
            return std::count_if(v.begin(), v.end(), [d](const auto& p) { return p.second == d; });
        };
        REQUIRE(count(t.train) == 5);
        REQUIRE(count(t.test) == 5);
    }
    std::vector<int> all;
    for (const auto& [id, dom] : t.train) all.push_back(id);
    for (const auto& [id, dom] : t.test) all.push_back(id);
    std::sort(all.begin(), all.end());
    for (int i = 0; i < 20; ++i) REQUIRE(all[static_cast<size_t>(i)] == i);  // disjoint and exhaustive

    const ClassificationTask t2 = build_classification_task(g, 0.5, 17);
    REQUIRE(t2.train == t.train);
    REQUIRE(t2.test == t.test);

    CorpusGraph degenerate = g;
    degenerate.papers.resize(11);  // second domain left with one paper
    REQUIRE_THROWS_AS(build_classification_task(degenerate, 0.5, 1), std::invalid_argument);
}

TEST_CASE("evaluate_encoder") {
    CorpusSpec spec;
    spec.num_domains = 3;
    spec.papers_per_domain = 100;
    spec.citations_per_paper = 4.0;
    spec.p_cross = 0.15;
    spec.vocab_size = 64;
    spec.seq_len_min = 4;
    spec.seq_len_max = 8;
    const CorpusGraph g = generate_corpus(spec, 21);

    EncoderConfig cfg;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.hidden_dim = 16;
    cfg.ff_dim = 24;
    cfg.num_cls = 2;
    cfg.injection_layers = {1, 2};
    cfg.vocab_size = 64;
    cfg.max_seq_len = 8;
    EncoderParams params = init_encoder(cfg, 123);

    SECTION("an untrained encoder scores ~0.75 MAP on 1-pos/1-neg pools") {
        BenchmarkTasks tasks;
        tasks.retrieval.push_back(build_retrieval_task(g, RetrievalKind::cite, 300, 1, 1, 5));
        const MetricsReport r = evaluate_encoder(params, cfg, g, tasks, 5, {});
        const double map = r.get("cite", "map");
        INFO("untrained MAP " << map);
        REQUIRE(std::abs(map - 0.75) < 0.05);  // analytic mean of {1, 1/2} under random order
        for (const MetricEntry& e : r.entries) {
            REQUIRE(e.value >= 0.0);
            REQUIRE(e.value <= 1.0);
        }
        REQUIRE(r.seed == 5);
    }
    SECTION("oracle embeddings give perfect retrieval") {
        PooledEmbeddings emb;
        emb.rows = Matrix(4, 2);
        emb.present.assign(4, 1);
        // query 0 equals positive 1; negatives 2, 3 point away
        emb.rows(0, 0) = 1.0;
        emb.rows(1, 0) = 1.0;
        emb.rows(2, 0) = -1.0;
        emb.rows(3, 1) = -0.5;
        const std::vector<int> order = rank_candidates(emb, 0, {1, 2, 3});
        REQUIRE(average_precision(order, {1}) == 1.0);
        REQUIRE(ndcg(order, {1}) == 1.0);
    }
    SECTION("csv output shape") {
        BenchmarkTasks tasks;
        tasks.retrieval.push_back(build_retrieval_task(g, RetrievalKind::cite, 10, 3, 10, 5));
        tasks.classification = build_classification_task(g, 0.5, 5);
        const MetricsReport r = evaluate_encoder(params, cfg, g, tasks, 5, {});
        const std::string csv = metrics_csv({r});
        REQUIRE(csv.rfind("task,metric,seed,value\n", 0) == 0);
        REQUIRE(csv.find("cite,map,5,0.") != std::string::npos);
        REQUIRE(csv.find("clf,macro_f1,5,") != std::string::npos);
    }
}
