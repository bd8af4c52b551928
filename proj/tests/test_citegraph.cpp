#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "m2spe/citegraph.hpp"

using namespace m2spe;

namespace {

CorpusSpec tiny_spec() {
    CorpusSpec s;
    s.num_domains = 2;
    s.papers_per_domain = 25;
    s.citations_per_paper = 3.0;
    s.p_cross = 0.2;
    s.vocab_size = 64;
    s.domain_token_skew = 3.0;
    s.seq_len_min = 4;
    s.seq_len_max = 8;
    return s;
}

bool same_graph(const CorpusGraph& a, const CorpusGraph& b) {
    if (a.size() != b.size() || a.num_domains != b.num_domains || a.vocab_size != b.vocab_size) return false;
    for (int i = 0; i < a.size(); ++i) {
        const Paper& pa = a.papers[static_cast<size_t>(i)];
        const Paper& pb = b.papers[static_cast<size_t>(i)];
        if (pa.id != pb.id || pa.domain != pb.domain || pa.tokens != pb.tokens || pa.out_citations != pb.out_citations)
            return false;
    }
    return true;
}

// brute-force 2-hop reachability, structured independently of the sampler
bool reachable_in_two_hops(const CorpusGraph& g, int from, int to) {
    for (const Paper& mid : g.papers) {
        bool first = false;
        for (int c : g.papers[static_cast<size_t>(from)].out_citations) first = first || c == mid.id;
        if (!first) continue;
        for (int c : mid.out_citations)
            if (c == to) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("corpus generation basics") {
    CorpusSpec spec = tiny_spec();
    spec.num_domains = 3;
    spec.papers_per_domain = 100;
    const CorpusGraph g = generate_corpus(spec, 7);

    REQUIRE(g.size() == 300);
    for (const Paper& p : g.papers) {
        REQUIRE(p.domain == p.id / 100 + 1);
        REQUIRE_FALSE(p.tokens.empty());
        REQUIRE(static_cast<int>(p.tokens.size()) >= spec.seq_len_min);
        REQUIRE(static_cast<int>(p.tokens.size()) <= spec.seq_len_max);
        for (int t : p.tokens) {
            REQUIRE(t >= kReservedClsIds);  // CLS ids never appear in text
            REQUIRE(t < spec.vocab_size);
        }
        REQUIRE_FALSE(p.out_citations.empty());
        REQUIRE(static_cast<int>(p.out_citations.size()) <= spec.papers_per_domain - 1);
        for (size_t i = 0; i < p.out_citations.size(); ++i) {
            REQUIRE(p.out_citations[i] != p.id);
            REQUIRE(p.out_citations[i] >= 0);
            REQUIRE(p.out_citations[i] < g.size());
            if (i > 0) REQUIRE(p.out_citations[i] > p.out_citations[i - 1]);
        }
    }
}

TEST_CASE("p_cross = 0 keeps every citation inside its domain") {
    CorpusSpec spec = tiny_spec();
    spec.p_cross = 0.0;
    const CorpusGraph g = generate_corpus(spec, 3);
    for (const Paper& p : g.papers)
        for (int c : p.out_citations) REQUIRE(g.papers[static_cast<size_t>(c)].domain == p.domain);
}

TEST_CASE("realized cross-domain fraction tracks p_cross") {
    for (double p_cross : {0.15, 0.5}) {
        CorpusSpec spec = tiny_spec();
        spec.num_domains = 3;
        spec.papers_per_domain = 100;
        spec.p_cross = p_cross;
        for (uint64_t seed : {1, 2, 3}) {
            const CorpusGraph g = generate_corpus(spec, seed);
            int cross = 0, total = 0;
            for (const Paper& p : g.papers)
                for (int c : p.out_citations) {
                    cross += g.papers[static_cast<size_t>(c)].domain != p.domain;
                    ++total;
                }
            const double realized = static_cast<double>(cross) / total;
            INFO("p_cross " << p_cross << " seed " << seed << " realized " << realized);
            REQUIRE(std::abs(realized - p_cross) < 0.05);
        }
    }
}

TEST_CASE("generation is deterministic in (spec, seed)") {
    const CorpusSpec spec = tiny_spec();
    REQUIRE(same_graph(generate_corpus(spec, 11), generate_corpus(spec, 11)));
    REQUIRE_FALSE(same_graph(generate_corpus(spec, 11), generate_corpus(spec, 12)));
}

TEST_CASE("infeasible specs are rejected") {
    CorpusSpec bad = tiny_spec();
    bad.citations_per_paper = 30.0;  // >= papers_per_domain
    REQUIRE_THROWS_AS(generate_corpus(bad, 1), std::invalid_argument);

    bad = tiny_spec();
    bad.p_cross = 1.5;
    REQUIRE_THROWS_AS(generate_corpus(bad, 1), std::invalid_argument);

    bad = tiny_spec();
    bad.vocab_size = kReservedClsIds;
    REQUIRE_THROWS_AS(generate_corpus(bad, 1), std::invalid_argument);

    bad = tiny_spec();
    bad.seq_len_max = bad.seq_len_min - 1;
    REQUIRE_THROWS_AS(generate_corpus(bad, 1), std::invalid_argument);
}

TEST_CASE("triplet invariants hold against brute force") {
    CorpusSpec spec = tiny_spec();
    spec.papers_per_domain = 25;  // 50-paper graph
    const CorpusGraph g = generate_corpus(spec, 5);
    const std::vector<Triplet> triplets = sample_triplets(g, 200, 1, 1, 9);
    REQUIRE_FALSE(triplets.empty());

    int hard_count = 0;
    for (const Triplet& t : triplets) {
        const Paper& q = g.papers[static_cast<size_t>(t.query_id)];
        REQUIRE(std::find(q.out_citations.begin(), q.out_citations.end(), t.positive_id) != q.out_citations.end());
        REQUIRE(std::find(q.out_citations.begin(), q.out_citations.end(), t.negative_id) == q.out_citations.end());
        REQUIRE(t.negative_id != t.query_id);
        if (t.hard) {
            ++hard_count;
            REQUIRE(reachable_in_two_hops(g, t.query_id, t.negative_id));
        }
    }
    REQUIRE(hard_count > 0);

    const std::vector<Triplet> again = sample_triplets(g, 200, 1, 1, 9);
    REQUIRE(again.size() == triplets.size());
    for (size_t i = 0; i < triplets.size(); ++i) {
        REQUIRE(again[i].query_id == triplets[i].query_id);
        REQUIRE(again[i].positive_id == triplets[i].positive_id);
        REQUIRE(again[i].negative_id == triplets[i].negative_id);
        REQUIRE(again[i].hard == triplets[i].hard);
    }
}

TEST_CASE("corpus file round trip") {
    const CorpusGraph g = generate_corpus(tiny_spec(), 77);
    const std::string path = (std::filesystem::temp_directory_path() / "m2spe_corpus_test.tsv").string();
    save_corpus(g, path);
    const CorpusGraph loaded = load_corpus(path);
    REQUIRE(same_graph(g, loaded));

    std::ofstream bad(path, std::ios::binary);
    bad << "#NOT-A-CORPUS\n";
    bad.close();
    REQUIRE_THROWS_AS(load_corpus(path), std::runtime_error);
    std::filesystem::remove(path);
}
