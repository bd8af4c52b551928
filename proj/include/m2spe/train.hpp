// Optimizer, schedule, training loop with gradient accumulation, and the
// ablation grid runner.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "benchmark.hpp"
#include "citegraph.hpp"
#include "encoder.hpp"
#include "matrix.hpp"
#include "parallel.hpp"
#include "similarity.hpp"

namespace m2spe {

struct TrainConfig {
    double base_lr = 1e-3;
    double warmup_fraction = 0.1;
    int epochs = 2;
    int micro_batch = 2;
    int accumulation_steps = 16;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::vector<uint64_t> seeds{1783, 1918, 1945, 1991};
    double lambda = -1.0;  // < 0: use the encoder config's lambda
    int queries_per_epoch = 2048;
    int easy_per_query = 1;
    int hard_per_query = 0;
    int truncation_length = 0;  // 0: encoder max_seq_len

    void validate() const {
        if (base_lr <= 0.0) throw std::invalid_argument("train config: base_lr must be positive");
        if (warmup_fraction < 0.0 || warmup_fraction > 1.0)
            throw std::invalid_argument("train config: warmup_fraction must be in [0,1]");
        if (epochs < 1 || micro_batch < 1 || accumulation_steps < 1)
            throw std::invalid_argument("train config: counts must be positive");
        if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0 || adam_eps <= 0.0)
            throw std::invalid_argument("train config: bad Adam constants");
        if (lambda > 1.0) throw std::invalid_argument("train config: lambda must be <= 1");
        if (queries_per_epoch < micro_batch * accumulation_steps)
            throw std::invalid_argument("train config: queries_per_epoch smaller than one effective batch");
        if (easy_per_query < 0 || hard_per_query < 0 || easy_per_query + hard_per_query < 1)
            throw std::invalid_argument("train config: need at least one negative per query");
        if (seeds.empty()) throw std::invalid_argument("train config: seed list must be nonempty");
    }
};

// Linear rise from 0 to base_lr over the warmup window, then linear decay
// back to 0 at total_steps.
inline double lr_schedule(int step, int total_steps, double warmup_fraction, double base_lr) {
    if (step < 0 || step > total_steps) throw std::invalid_argument("lr_schedule: step out of range");
    const double warmup_end = warmup_fraction * total_steps;
    if (warmup_end <= 0.0) return base_lr * (total_steps - step) / total_steps;
    if (step <= warmup_end) return base_lr * step / warmup_end;
    return base_lr * (total_steps - step) / (total_steps - warmup_end);
}

struct AdamState {
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    int64_t step = 0;
};

inline AdamState init_adam_state(EncoderParams& params, const EncoderConfig& cfg) {
    AdamState s;
    params.for_each_array(cfg, [&](const std::string&, Matrix& m) {
        s.first_moment.emplace_back(m.rows, m.cols);
        s.second_moment.emplace_back(m.rows, m.cols);
    });
    return s;
}

// Standard bias-corrected Adam over the flattened parameter list. Aborts on
// non-finite gradients rather than skipping them.
inline void adam_step(EncoderParams& params, const EncoderConfig& cfg, const std::vector<Matrix>& grads,
                      AdamState& state, double lr, double beta1, double beta2, double eps) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    size_t idx = 0;
    params.for_each_array(cfg, [&](const std::string& name, Matrix& theta) {
        const Matrix& g = grads[idx];
        if (!g.all_finite())
            throw std::runtime_error("adam_step: non-finite gradient in " + name + " at step " +
                                     std::to_string(state.step));
        Matrix& m = state.first_moment[idx];
        Matrix& v = state.second_moment[idx];
        for (size_t i = 0; i < theta.size(); ++i) {
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g.data[i];
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
            theta.data[i] -= lr * (m.data[i] / bc1) / (std::sqrt(v.data[i] / bc2) + eps);
        }
        ++idx;
    });
}

// One training unit: a query, its cited positive, and the sampled negatives.
struct TripletGroup {
    int query_id = 0;
    int positive_id = 0;
    std::vector<int> negative_ids;
};

inline std::vector<TripletGroup> group_triplets(const std::vector<Triplet>& triplets) {
    std::vector<TripletGroup> groups;
    for (const Triplet& t : triplets) {
        if (groups.empty() || groups.back().query_id != t.query_id || groups.back().positive_id != t.positive_id)
            groups.push_back({t.query_id, t.positive_id, {}});
        groups.back().negative_ids.push_back(t.negative_id);
    }
    return groups;
}

// Builds the full differentiable loss for one triplet group on the tape.
inline ad::Node* triplet_loss_nodes(ad::Tape& tape, const ParamLeaves& leaves, const EncoderConfig& cfg, double lambda,
                                    const std::vector<int>& query_tokens, const std::vector<int>& positive_tokens,
                                    const std::vector<std::vector<int>>& negative_tokens) {
    const EncodeNodes q = encode_on_tape(tape, leaves, cfg, query_tokens);
    const EncodeNodes p = encode_on_tape(tape, leaves, cfg, positive_tokens);
    ad::Node* sim_pos = pair_similarity_nodes(tape, q, p, lambda);
    std::vector<ad::Node*> sim_negs;
    sim_negs.reserve(negative_tokens.size());
    for (const auto& toks : negative_tokens) {
        const EncodeNodes n = encode_on_tape(tape, leaves, cfg, toks);
        sim_negs.push_back(pair_similarity_nodes(tape, q, n, lambda));
    }
    return contrastive_loss_nodes(tape, sim_pos, sim_negs);
}

struct StepLog {
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    EncoderParams params;
    std::vector<StepLog> loss_log;
};

inline TrainResult train(const EncoderConfig& enc_cfg, const TrainConfig& tc, const CorpusGraph& graph,
                         uint64_t seed) {
    enc_cfg.validate();
    tc.validate();
    const double lambda = tc.lambda >= 0.0 ? tc.lambda : enc_cfg.lambda;
    const int trunc =
        tc.truncation_length > 0 ? std::min(tc.truncation_length, enc_cfg.max_seq_len) : enc_cfg.max_seq_len;

    // Sampled up front so the total step count (and with it the schedule)
    // is known before the first update.
    std::vector<std::vector<TripletGroup>> epochs;
    int total_steps = 0;
    const int groups_per_step = tc.micro_batch * tc.accumulation_steps;
    for (int e = 0; e < tc.epochs; ++e) {
        epochs.push_back(group_triplets(
            sample_triplets(graph, tc.queries_per_epoch, tc.easy_per_query, tc.hard_per_query, derive_seed(seed, 0xe90c + static_cast<uint64_t>(e)))));
        total_steps += static_cast<int>(epochs.back().size()) / groups_per_step;
    }
    if (total_steps < 1) throw std::invalid_argument("train: not enough triplets for a single optimizer step");

    TrainResult result;
    result.params = init_encoder(enc_cfg, seed);
    AdamState adam = init_adam_state(result.params, enc_cfg);

    std::vector<Matrix> grad_accum;
    result.params.for_each_array(enc_cfg, [&](const std::string&, Matrix& m) { grad_accum.emplace_back(m.rows, m.cols); });

    auto tokens_of = [&](int id) {
        std::vector<int> t = graph.papers[static_cast<size_t>(id)].tokens;
        if (static_cast<int>(t.size()) > trunc) t.resize(static_cast<size_t>(trunc));
        return t;
    };

    int step = 0;
    for (int e = 0; e < tc.epochs; ++e) {
        const auto& groups = epochs[static_cast<size_t>(e)];
        const int steps_this_epoch = static_cast<int>(groups.size()) / groups_per_step;
        for (int s = 0; s < steps_this_epoch; ++s) {
            for (Matrix& g : grad_accum) std::fill(g.data.begin(), g.data.end(), 0.0);
            double step_loss = 0.0;

            for (int a = 0; a < tc.accumulation_steps; ++a) {
                ad::Tape tape;
                const ParamLeaves leaves = leaves_on_tape(tape, result.params, enc_cfg);

                std::vector<ad::Node*> losses;
                const int base = (s * tc.accumulation_steps + a) * tc.micro_batch;
                for (int b = 0; b < tc.micro_batch; ++b) {
                    const TripletGroup& g = groups[static_cast<size_t>(base + b)];
                    std::vector<std::vector<int>> negs;
                    for (int n : g.negative_ids) negs.push_back(tokens_of(n));
                    losses.push_back(
                        triplet_loss_nodes(tape, const_cast<ParamLeaves&>(leaves), enc_cfg, lambda,
                                           tokens_of(g.query_id), tokens_of(g.positive_id), negs));
                }
                ad::Node* micro_loss = losses[0];
                for (size_t i = 1; i < losses.size(); ++i) micro_loss = ad::add(micro_loss, losses[i]);
                micro_loss = ad::scale(micro_loss, 1.0 / tc.micro_batch);
                const double loss_value = micro_loss->value(0, 0);
                if (!std::isfinite(loss_value))
                    throw std::runtime_error("train: non-finite loss at step " + std::to_string(step + 1));
                step_loss += loss_value;

                tape.backward(micro_loss);
                size_t idx = 0;
                const_cast<ParamLeaves&>(leaves).for_each_array(
                    enc_cfg, [&](const std::string&, ad::Node*& n) { add_in_place(grad_accum[idx++], n->grad); });
            }

            for (Matrix& g : grad_accum) scale_in_place(g, 1.0 / tc.accumulation_steps);
            ++step;
            // Evaluated at 1..total inside a grid of total+1 so no optimizer
            // step lands on the schedule's zero endpoints.
            const double lr = lr_schedule(step, total_steps + 1, tc.warmup_fraction, tc.base_lr);
            adam_step(result.params, enc_cfg, grad_accum, adam, lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
            result.loss_log.push_back({step, lr, step_loss / tc.accumulation_steps});
        }
    }
    return result;
}

// ---- ablation harness -------------------------------------------------------

struct AblationCellSpec {
    std::string variant;
    int num_cls = 3;
    double lambda = 0.1;
    bool injections_enabled = true;
    bool reparam_enabled = true;

    bool is_baseline() const {
        return num_cls == 3 && std::abs(lambda - 0.1) < 1e-12 && injections_enabled && reparam_enabled;
    }
};

inline std::vector<AblationCellSpec> default_ablation_grid() {
    return {
        {"3cls_lambda0.1", 3, 0.1, true, true},  // baseline
        {"3cls_lambda0.0", 3, 0.0, true, true},
        {"3cls_lambda0.5", 3, 0.5, true, true},
        {"3cls_lambda1.0", 3, 1.0, true, true},
        {"1cls", 1, 0.1, true, true},
        {"5cls", 5, 0.1, true, true},
        {"no_injection", 3, 0.1, false, true},
        {"no_reparam", 3, 0.1, true, false},
    };
}

struct AblationRow {
    std::string variant;
    int num_cls = 0;
    double lambda = 0.0;
    std::string metric;
    double mean = 0.0;
    double stderr_ = 0.0;
    double err_reduction_pct = 0.0;
};

struct AblationReport {
    std::vector<AblationCellSpec> cells;
    std::vector<std::vector<MetricsReport>> per_cell_reports;  // [cell][seed]
    std::vector<AblationRow> rows;
};

inline EncoderConfig apply_cell(const EncoderConfig& base, const AblationCellSpec& cell) {
    EncoderConfig cfg = base;
    cfg.num_cls = cell.num_cls;
    cfg.lambda = cell.lambda;
    cfg.injections_enabled = cell.injections_enabled;
    cfg.reparam_enabled = cell.reparam_enabled;
    return cfg;
}

inline AblationReport run_ablation(const EncoderConfig& base_cfg, const TrainConfig& tc, const CorpusGraph& graph,
                                   const BenchmarkTasks& tasks, const std::vector<AblationCellSpec>& cells,
                                   const std::vector<uint64_t>& seeds, const EvalOptions& eval_opt = {},
                                   int threads = 1) {
    if (cells.empty() || seeds.empty()) throw std::invalid_argument("run_ablation: empty grid or seed list");
    int baseline = -1;
    for (size_t i = 0; i < cells.size(); ++i)
        if (cells[i].is_baseline()) {
            baseline = static_cast<int>(i);
            break;
        }
    if (baseline < 0) throw std::invalid_argument("run_ablation: grid lacks the (3 CLS, lambda=0.1) baseline");

    AblationReport report;
    report.cells = cells;
    report.per_cell_reports.assign(cells.size(), std::vector<MetricsReport>(seeds.size()));

    const int jobs = static_cast<int>(cells.size() * seeds.size());
    parallel_for(jobs, threads, [&](int j) {
        const size_t ci = static_cast<size_t>(j) / seeds.size();
        const size_t si = static_cast<size_t>(j) % seeds.size();
        const EncoderConfig cfg = apply_cell(base_cfg, cells[ci]);
        TrainResult tr = train(cfg, tc, graph, seeds[si]);
        report.per_cell_reports[ci][si] = evaluate_encoder(tr.params, cfg, graph, tasks, seeds[si], eval_opt);
    });

    // metric keys in first-report order, e.g. cite_map, cite_ndcg, ...
    std::vector<std::pair<std::string, std::string>> keys;
    for (const MetricEntry& e : report.per_cell_reports[0][0].entries) keys.push_back({e.task, e.metric});

    auto cell_mean = [&](size_t ci, const std::pair<std::string, std::string>& key) {
        double sum = 0.0;
        for (const MetricsReport& r : report.per_cell_reports[ci]) sum += r.get(key.first, key.second);
        return sum / static_cast<double>(seeds.size());
    };

    for (size_t ci = 0; ci < cells.size(); ++ci) {
        for (const auto& key : keys) {
            AblationRow row;
            row.variant = cells[ci].variant;
            row.num_cls = cells[ci].num_cls;
            row.lambda = cells[ci].lambda;
            row.metric = key.first + "_" + key.second;
            row.mean = cell_mean(ci, key);
            double ss = 0.0;
            for (const MetricsReport& r : report.per_cell_reports[ci]) {
                const double d = r.get(key.first, key.second) - row.mean;
                ss += d * d;
            }
            row.stderr_ = seeds.size() > 1
                              ? std::sqrt(ss / static_cast<double>(seeds.size() - 1)) / std::sqrt(static_cast<double>(seeds.size()))
                              : 0.0;
            const double err_base = 1.0 - cell_mean(static_cast<size_t>(baseline), key);
            const double err_cell = 1.0 - row.mean;
            row.err_reduction_pct = 100.0 * (err_base - err_cell) / (err_base != 0.0 ? err_base : 1.0);
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

inline std::string ablation_csv(const AblationReport& report) {
    std::string out = "variant,K,lambda,metric,mean,stderr,err_reduction_pct\n";
    char buf[256];
    for (const AblationRow& r : report.rows) {
        std::snprintf(buf, sizeof buf, "%s,%d,%g,%s,%.6f,%.6f,%.6f\n", r.variant.c_str(), r.num_cls, r.lambda,
                      r.metric.c_str(), r.mean, r.stderr_, r.err_reduction_pct);
        out += buf;
    }
    return out;
}

}  // namespace m2spe
