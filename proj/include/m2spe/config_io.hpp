// JSON config files. Every config is a flat object whose keys are the
// field names; unknown keys are rejected to catch typos early.
#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "citegraph.hpp"
#include "encoder.hpp"
#include "train.hpp"

namespace m2spe {

namespace detail {

inline nlohmann::json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("bad JSON in " + path + ": " + e.what());
    }
}

inline void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                                const std::string& what) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const auto& k : allowed) known = known || it.key() == k;
        if (!known) throw std::runtime_error(what + ": unknown key \"" + it.key() + "\"");
    }
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j,
                                {"num_layers", "num_heads", "hidden_dim", "ff_dim", "K", "injection_layers",
                                 "vocab_size", "max_seq_len", "lambda", "reparam_enabled", "injections_enabled"},
                                "encoder config");
    EncoderConfig cfg;
    detail::read_field(j, "num_layers", cfg.num_layers);
    detail::read_field(j, "num_heads", cfg.num_heads);
    detail::read_field(j, "hidden_dim", cfg.hidden_dim);
    detail::read_field(j, "ff_dim", cfg.ff_dim);
    detail::read_field(j, "K", cfg.num_cls);
    detail::read_field(j, "injection_layers", cfg.injection_layers);
    detail::read_field(j, "vocab_size", cfg.vocab_size);
    detail::read_field(j, "max_seq_len", cfg.max_seq_len);
    detail::read_field(j, "lambda", cfg.lambda);
    detail::read_field(j, "reparam_enabled", cfg.reparam_enabled);
    detail::read_field(j, "injections_enabled", cfg.injections_enabled);
    // a config that omits injection_layers gets {num_layers/2, num_layers}
    if (!j.contains("injection_layers")) {
        cfg.injection_layers.clear();
        if (cfg.num_layers > 1) cfg.injection_layers.push_back(cfg.num_layers / 2);
        cfg.injection_layers.push_back(cfg.num_layers);
    }
    cfg.validate();
    return cfg;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j,
                                {"base_lr", "warmup_fraction", "epochs", "micro_batch", "accumulation_steps",
                                 "adam_beta1", "adam_beta2", "adam_eps", "seeds", "lambda", "queries_per_epoch",
                                 "easy_per_query", "hard_per_query", "truncation_length"},
                                "train config");
    TrainConfig tc;
    detail::read_field(j, "base_lr", tc.base_lr);
    detail::read_field(j, "warmup_fraction", tc.warmup_fraction);
    detail::read_field(j, "epochs", tc.epochs);
    detail::read_field(j, "micro_batch", tc.micro_batch);
    detail::read_field(j, "accumulation_steps", tc.accumulation_steps);
    detail::read_field(j, "adam_beta1", tc.adam_beta1);
    detail::read_field(j, "adam_beta2", tc.adam_beta2);
    detail::read_field(j, "adam_eps", tc.adam_eps);
    detail::read_field(j, "seeds", tc.seeds);
    detail::read_field(j, "lambda", tc.lambda);
    detail::read_field(j, "queries_per_epoch", tc.queries_per_epoch);
    detail::read_field(j, "easy_per_query", tc.easy_per_query);
    detail::read_field(j, "hard_per_query", tc.hard_per_query);
    detail::read_field(j, "truncation_length", tc.truncation_length);
    tc.validate();
    return tc;
}

inline CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j,
                                {"num_domains", "papers_per_domain", "citations_per_paper", "p_cross", "vocab_size",
                                 "domain_token_skew", "seq_len_min", "seq_len_max"},
                                "corpus spec");
    CorpusSpec spec;
    detail::read_field(j, "num_domains", spec.num_domains);
    detail::read_field(j, "papers_per_domain", spec.papers_per_domain);
    detail::read_field(j, "citations_per_paper", spec.citations_per_paper);
    detail::read_field(j, "p_cross", spec.p_cross);
    detail::read_field(j, "vocab_size", spec.vocab_size);
    detail::read_field(j, "domain_token_skew", spec.domain_token_skew);
    detail::read_field(j, "seq_len_min", spec.seq_len_min);
    detail::read_field(j, "seq_len_max", spec.seq_len_max);
    spec.validate();
    return spec;
}

inline EncoderConfig load_encoder_config(const std::string& path) {
    return encoder_config_from_json(detail::parse_json_file(path));
}
inline TrainConfig load_train_config(const std::string& path) {
    return train_config_from_json(detail::parse_json_file(path));
}
inline CorpusSpec load_corpus_spec(const std::string& path) {
    return corpus_spec_from_json(detail::parse_json_file(path));
}

// Grid file for the ablation runner: the base configs, the evaluation task
// sizes, either an existing corpus file or a spec to generate one, and the
// grid cells.
struct EvalSettings {
    int num_queries = 100;
    int n_neg = 50;
    int max_pos = 5;
    double test_fraction = 0.5;
    uint64_t seed = 7;
    int probe_epochs = 300;
    double probe_lr = 0.5;
};

struct GridFile {
    EncoderConfig encoder;
    TrainConfig train;
    std::string corpus_path;  // empty when generated from a spec
    CorpusSpec corpus_spec;
    uint64_t corpus_seed = 7;
    bool has_corpus_spec = false;
    EvalSettings eval;
    std::vector<AblationCellSpec> cells;
};

inline EvalSettings eval_settings_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j, {"num_queries", "n_neg", "max_pos", "test_fraction", "seed", "probe_epochs", "probe_lr"}, "eval settings");
    EvalSettings e;
    detail::read_field(j, "num_queries", e.num_queries);
    detail::read_field(j, "n_neg", e.n_neg);
    detail::read_field(j, "max_pos", e.max_pos);
    detail::read_field(j, "test_fraction", e.test_fraction);
    detail::read_field(j, "seed", e.seed);
    detail::read_field(j, "probe_epochs", e.probe_epochs);
    detail::read_field(j, "probe_lr", e.probe_lr);
    return e;
}

inline GridFile load_grid_file(const std::string& path) {
    const nlohmann::json j = detail::parse_json_file(path);
    detail::reject_unknown_keys(
        j, {"encoder_config", "train_config", "corpus", "corpus_spec", "corpus_seed", "eval", "cells"}, "grid file");

    GridFile g;
    g.encoder = j.contains("encoder_config") ? encoder_config_from_json(j.at("encoder_config")) : EncoderConfig{};
    g.train = j.contains("train_config") ? train_config_from_json(j.at("train_config")) : TrainConfig{};
    if (j.contains("corpus")) g.corpus_path = j.at("corpus").get<std::string>();
    if (j.contains("corpus_spec")) {
        g.corpus_spec = corpus_spec_from_json(j.at("corpus_spec"));
        g.has_corpus_spec = true;
    }
    if (!g.has_corpus_spec && g.corpus_path.empty())
        throw std::runtime_error("grid file: needs either \"corpus\" or \"corpus_spec\"");
    detail::read_field(j, "corpus_seed", g.corpus_seed);
    if (j.contains("eval")) g.eval = eval_settings_from_json(j.at("eval"));

    if (j.contains("cells")) {
        for (const auto& c : j.at("cells")) {
            detail::reject_unknown_keys(c, {"variant", "K", "lambda", "injections_enabled", "reparam_enabled"},
                                        "grid cell");
            AblationCellSpec cell;
            detail::read_field(c, "variant", cell.variant);
            detail::read_field(c, "K", cell.num_cls);
            detail::read_field(c, "lambda", cell.lambda);
            detail::read_field(c, "injections_enabled", cell.injections_enabled);
            detail::read_field(c, "reparam_enabled", cell.reparam_enabled);
            if (cell.variant.empty()) throw std::runtime_error("grid cell: missing variant name");
            g.cells.push_back(std::move(cell));
        }
    } else {
        g.cells = default_ablation_grid();
    }
    return g;
}

}  // namespace m2spe
