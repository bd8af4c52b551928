// Synthetic multi-domain corpus with a citation graph, plus the triplet
// sampler used for contrastive training. Everything here is a deterministic
// function of (spec/args, seed).
//
// Token realism comes from domain-skewed categorical distributions over a
// shared vocabulary: each domain owns a contiguous block of token ids that
// it emits with elevated weight, so domains are separable but overlapping.
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"

namespace m2spe {

// Low vocabulary ids are reserved for CLS tokens and never emitted into
// paper text; 8 covers every CLS count in the ablation grid.
inline constexpr int kReservedClsIds = 8;

struct Paper {
    int id = 0;
    int domain = 1;  // 1..D
    std::vector<int> tokens;
    std::vector<int> out_citations;  // sorted, no self-citation

    bool cites(int other) const { return std::binary_search(out_citations.begin(), out_citations.end(), other); }
};

struct CorpusSpec {
    int num_domains = 3;
    int papers_per_domain = 200;
    double citations_per_paper = 5.0;
    double p_cross = 0.15;
    int vocab_size = 256;
    double domain_token_skew = 8.0;
    int seq_len_min = 12;
    int seq_len_max = 24;

    void validate() const {
        if (num_domains < 1) throw std::invalid_argument("corpus spec: num_domains must be >= 1");
        if (papers_per_domain < 1) throw std::invalid_argument("corpus spec: papers_per_domain must be >= 1");
        if (p_cross < 0.0 || p_cross > 1.0) throw std::invalid_argument("corpus spec: p_cross must be in [0,1]");
        if (citations_per_paper < 0.0) throw std::invalid_argument("corpus spec: citations_per_paper must be >= 0");
        if (citations_per_paper >= papers_per_domain)
            throw std::invalid_argument("corpus spec: citation mean must be below papers_per_domain");
        if (domain_token_skew < 0.0) throw std::invalid_argument("corpus spec: domain_token_skew must be >= 0");
        if (vocab_size < kReservedClsIds + num_domains)
            throw std::invalid_argument("corpus spec: vocabulary too small for reserved ids plus domain blocks");
        if (seq_len_min < 1 || seq_len_max < seq_len_min)
            throw std::invalid_argument("corpus spec: bad sequence length range");
    }
};

struct CorpusGraph {
    int num_domains = 0;
    int vocab_size = 0;
    std::vector<Paper> papers;

    int size() const { return static_cast<int>(papers.size()); }
    int papers_per_domain() const { return size() / num_domains; }
};

struct Triplet {
    int query_id = 0;
    int positive_id = 0;
    int negative_id = 0;
    bool hard = false;
};

namespace detail {

// Token sampler for one domain: its own block of usable ids carries weight
// (1 + skew), every other usable id weight 1.
struct DomainTokenSampler {
    int usable_lo, usable_n;  // [usable_lo, usable_lo + usable_n)
    int own_lo, own_n;
    double p_own;

    DomainTokenSampler(const CorpusSpec& spec, int domain /*1..D*/) {
        usable_lo = kReservedClsIds;
        usable_n = spec.vocab_size - kReservedClsIds;
        const int b = domain - 1;
        own_lo = usable_lo + static_cast<int>(static_cast<int64_t>(b) * usable_n / spec.num_domains);
        const int own_hi = usable_lo + static_cast<int>(static_cast<int64_t>(b + 1) * usable_n / spec.num_domains);
        own_n = own_hi - own_lo;
        const double w_own = own_n * (1.0 + spec.domain_token_skew);
        const double w_rest = usable_n - own_n;
        p_own = w_own / (w_own + w_rest);
    }

    int sample(Rng& rng) const {
        if (own_n == usable_n || rng.bernoulli(p_own)) return own_lo + rng.index(static_cast<size_t>(own_n));
        int r = rng.index(static_cast<size_t>(usable_n - own_n));
        return (r < own_lo - usable_lo) ? usable_lo + r : usable_lo + r + own_n;
    }
};

}  // namespace detail

inline CorpusGraph generate_corpus(const CorpusSpec& spec, uint64_t seed) {
    spec.validate();
    const int total = spec.num_domains * spec.papers_per_domain;
    Rng rng(derive_seed(seed, 0xc0125));

    std::vector<detail::DomainTokenSampler> samplers;
    for (int d = 1; d <= spec.num_domains; ++d) samplers.emplace_back(spec, d);

    CorpusGraph g;
    g.num_domains = spec.num_domains;
    g.vocab_size = spec.vocab_size;
    g.papers.resize(static_cast<size_t>(total));

    for (int id = 0; id < total; ++id) {
        Paper& p = g.papers[static_cast<size_t>(id)];
        p.id = id;
        p.domain = id / spec.papers_per_domain + 1;

        const int len = spec.seq_len_min + rng.index(static_cast<size_t>(spec.seq_len_max - spec.seq_len_min + 1));
        p.tokens.resize(static_cast<size_t>(len));
        const auto& sampler = samplers[static_cast<size_t>(p.domain - 1)];
        for (int& t : p.tokens) t = sampler.sample(rng);

        int count = rng.poisson(spec.citations_per_paper);
        count = std::clamp(count, 1, spec.papers_per_domain - 1);

        const int dom_lo = (p.domain - 1) * spec.papers_per_domain;
        std::vector<int> cites;
        int misses = 0;
        while (static_cast<int>(cites.size()) < count) {
            int target;
            if (spec.num_domains > 1 && rng.bernoulli(spec.p_cross)) {
                int r = rng.index(static_cast<size_t>(total - spec.papers_per_domain));
                target = (r < dom_lo) ? r : r + spec.papers_per_domain;
            } else {
                int r = rng.index(static_cast<size_t>(spec.papers_per_domain - 1));
                target = dom_lo + ((r < id - dom_lo) ? r : r + 1);
            }
            if (std::find(cites.begin(), cites.end(), target) == cites.end()) {
                cites.push_back(target);
            } else if (++misses > 64 * count) {
                // pathological duplication; fill from the same-domain pool in id order
                for (int cand = dom_lo; cand < dom_lo + spec.papers_per_domain && static_cast<int>(cites.size()) < count;
                     ++cand)
                    if (cand != id && std::find(cites.begin(), cites.end(), cand) == cites.end()) cites.push_back(cand);
                break;
            }
        }
        std::sort(cites.begin(), cites.end());
        p.out_citations = std::move(cites);
    }
    return g;
}

// Papers citing a given paper, indexed once per graph where needed.
inline std::vector<std::vector<int>> build_in_citations(const CorpusGraph& g) {
    std::vector<std::vector<int>> in(static_cast<size_t>(g.size()));
    for (const Paper& p : g.papers)
        for (int c : p.out_citations) in[static_cast<size_t>(c)].push_back(p.id);
    return in;
}

// Citations-of-citations the query does not cite itself (and is not).
inline std::vector<int> two_hop_candidates(const CorpusGraph& g, int query_id) {
    const Paper& q = g.papers[static_cast<size_t>(query_id)];
    std::vector<int> out;
    for (int c : q.out_citations)
        for (int cc : g.papers[static_cast<size_t>(c)].out_citations)
            if (cc != query_id && !q.cites(cc)) out.push_back(cc);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// SPECTER-style sampling: per sampled query one cited positive, easy
// negatives drawn uniformly from uncited papers, hard negatives from the
// 2-hop citation neighborhood (skipped when none exists).
inline std::vector<Triplet> sample_triplets(const CorpusGraph& g, int queries_per_epoch, int easy_per_query,
                                            int hard_per_query, uint64_t seed) {
    if (g.size() < 3) throw std::invalid_argument("sample_triplets: corpus too small");
    bool any_citation = false;
    for (const Paper& p : g.papers) any_citation = any_citation || !p.out_citations.empty();
    if (!any_citation) throw std::invalid_argument("sample_triplets: graph has no citations");

    Rng rng(derive_seed(seed, 0x731b));
    std::vector<Triplet> out;
    out.reserve(static_cast<size_t>(queries_per_epoch) * static_cast<size_t>(easy_per_query + hard_per_query));

    for (int qi = 0; qi < queries_per_epoch; ++qi) {
        const Paper& q = g.papers[static_cast<size_t>(rng.index(static_cast<size_t>(g.size())))];
        if (q.out_citations.empty()) continue;
        const int positive = rng.pick(q.out_citations);

        for (int e = 0; e < easy_per_query; ++e) {
            int neg;
            do {
                neg = rng.index(static_cast<size_t>(g.size()));
            } while (neg == q.id || q.cites(neg));
            out.push_back({q.id, positive, neg, false});
        }
        if (hard_per_query > 0) {
            const std::vector<int> pool = two_hop_candidates(g, q.id);
            if (!pool.empty())
                for (int h = 0; h < hard_per_query; ++h) out.push_back({q.id, positive, rng.pick(pool), true});
        }
    }
    return out;
}

// ---- corpus file format ---------------------------------------------------
// One line per paper: id <TAB> domain <TAB> tokens <TAB> citations, token
// and citation lists space-separated, after a header line carrying the
// domain count and vocabulary size.

inline void save_corpus(const CorpusGraph& g, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_corpus: cannot open " + path);
    out << "#M2SPE-CORPUS v1 D=" << g.num_domains << " V=" << g.vocab_size << "\n";
    for (const Paper& p : g.papers) {
        out << p.id << '\t' << p.domain << '\t';
        for (size_t i = 0; i < p.tokens.size(); ++i) out << (i ? " " : "") << p.tokens[i];
        out << '\t';
        for (size_t i = 0; i < p.out_citations.size(); ++i) out << (i ? " " : "") << p.out_citations[i];
        out << '\n';
    }
    if (!out) throw std::runtime_error("save_corpus: write failed for " + path);
}

inline CorpusGraph load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_corpus: cannot open " + path);
    std::string header;
    std::getline(in, header);
    CorpusGraph g;
    if (std::sscanf(header.c_str(), "#M2SPE-CORPUS v1 D=%d V=%d", &g.num_domains, &g.vocab_size) != 2)
        throw std::runtime_error("load_corpus: bad header in " + path);

    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string id_s, dom_s, toks_s, cites_s;
        if (!std::getline(ls, id_s, '\t') || !std::getline(ls, dom_s, '\t') || !std::getline(ls, toks_s, '\t'))
            throw std::runtime_error("load_corpus: malformed line: " + line);
        std::getline(ls, cites_s, '\t');

        Paper p;
        p.id = std::stoi(id_s);
        p.domain = std::stoi(dom_s);
        std::stringstream ts(toks_s);
        for (int v; ts >> v;) p.tokens.push_back(v);
        std::stringstream cs(cites_s);
        for (int v; cs >> v;) p.out_citations.push_back(v);
        std::sort(p.out_citations.begin(), p.out_citations.end());
        g.papers.push_back(std::move(p));
    }
    for (size_t i = 0; i < g.papers.size(); ++i)
        if (g.papers[i].id != static_cast<int>(i)) throw std::runtime_error("load_corpus: ids must be dense 0..n-1");
    return g;
}

}  // namespace m2spe
