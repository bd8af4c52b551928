// Command-line surface: corpus generation, training, evaluation, gradient
// checking and the ablation grid runner.
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "m2spe/benchmark.hpp"
#include "m2spe/checkpoint.hpp"
#include "m2spe/citegraph.hpp"
#include "m2spe/config_io.hpp"
#include "m2spe/train.hpp"
#include "m2spe/verify.hpp"

namespace {

int default_threads() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

std::vector<uint64_t> parse_seed_list(const std::string& s) {
    std::vector<uint64_t> seeds;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) seeds.push_back(std::stoull(item));
    }
    if (seeds.empty()) throw std::runtime_error("empty seed list");
    return seeds;
}

m2spe::BenchmarkTasks build_tasks(const m2spe::CorpusGraph& graph, const std::vector<std::string>& names,
                                  const m2spe::EvalSettings& ev) {
    m2spe::BenchmarkTasks tasks;
    for (const std::string& t : names) {
        if (t == "cite")
            tasks.retrieval.push_back(
                m2spe::build_retrieval_task(graph, m2spe::RetrievalKind::cite, ev.num_queries, ev.max_pos, ev.n_neg, ev.seed));
        else if (t == "cocite")
            tasks.retrieval.push_back(m2spe::build_retrieval_task(graph, m2spe::RetrievalKind::cocite, ev.num_queries,
                                                                  ev.max_pos, ev.n_neg, ev.seed));
        else if (t == "clf")
            tasks.classification = m2spe::build_classification_task(graph, ev.test_fraction, ev.seed);
        else
            throw std::runtime_error("unknown task \"" + t + "\" (expected cite, cocite or clf)");
    }
    return tasks;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-CLS paper encoder: synthetic corpus, training and retrieval benchmark"};
    app.require_subcommand(1);

    // gen
    std::string gen_spec, gen_out;
    uint64_t gen_seed = 7;
    auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
    gen->add_option("--spec", gen_spec, "corpus spec JSON")->required();
    gen->add_option("--out", gen_out, "output corpus file")->required();
    gen->add_option("--seed", gen_seed, "generation seed");

    // train
    std::string tr_enc, tr_train, tr_corpus, tr_out;
    uint64_t tr_seed = 1783;
    bool tr_quiet = false;
    auto* tr = app.add_subcommand("train", "train an encoder on a corpus");
    tr->add_option("--encoder-config", tr_enc, "encoder config JSON")->required();
    tr->add_option("--train-config", tr_train, "train config JSON")->required();
    tr->add_option("--corpus", tr_corpus, "corpus file")->required();
    tr->add_option("--seed", tr_seed, "training seed");
    tr->add_option("--out", tr_out, "output checkpoint")->required();
    tr->add_flag("--quiet", tr_quiet, "suppress the per-step loss log");

    // eval
    std::string ev_ckpt, ev_corpus, ev_tasks = "cite,cocite,clf", ev_out;
    uint64_t ev_seed = 7;
    m2spe::EvalSettings ev_settings;
    int ev_threads = default_threads();
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on benchmark tasks");
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--corpus", ev_corpus, "corpus file")->required();
    ev->add_option("--tasks", ev_tasks, "comma list of cite,cocite,clf");
    ev->add_option("--out", ev_out, "metrics CSV output")->required();
    ev->add_option("--seed", ev_seed, "task construction seed");
    ev->add_option("--num-queries", ev_settings.num_queries, "queries per retrieval task");
    ev->add_option("--n-neg", ev_settings.n_neg, "negatives per query");
    ev->add_option("--max-pos", ev_settings.max_pos, "positives cap per query");
    ev->add_option("--test-fraction", ev_settings.test_fraction, "classification test fraction");
    ev->add_option("--probe-epochs", ev_settings.probe_epochs, "linear probe epochs");
    ev->add_option("--probe-lr", ev_settings.probe_lr, "linear probe learning rate");
    ev->add_option("--threads", ev_threads, "encoding threads");

    // gradcheck
    std::string gc_enc;
    double gc_tol = 1e-3;
    int gc_instances = 3;
    uint64_t gc_seed = 7;
    auto* gc = app.add_subcommand("gradcheck", "check reverse-mode gradients against finite differences");
    gc->add_option("--encoder-config", gc_enc, "encoder config JSON")->required();
    gc->add_option("--tolerance", gc_tol, "relative tolerance");
    gc->add_option("--instances", gc_instances, "random instances");
    gc->add_option("--seed", gc_seed, "instance seed");

    // ablate
    std::string ab_grid, ab_seeds = "1783,1918,1945,1991", ab_out;
    int ab_threads = default_threads();
    auto* ab = app.add_subcommand("ablate", "run the ablation grid");
    ab->add_option("--grid", ab_grid, "grid JSON")->required();
    ab->add_option("--seeds", ab_seeds, "comma list of training seeds");
    ab->add_option("--out", ab_out, "report CSV output")->required();
    ab->add_option("--threads", ab_threads, "parallel training runs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const m2spe::CorpusSpec spec = m2spe::load_corpus_spec(gen_spec);
            const m2spe::CorpusGraph graph = m2spe::generate_corpus(spec, gen_seed);
            m2spe::save_corpus(graph, gen_out);
            std::cout << "wrote " << graph.size() << " papers to " << gen_out << "\n";
        } else if (*tr) {
            const m2spe::EncoderConfig cfg = m2spe::load_encoder_config(tr_enc);
            const m2spe::TrainConfig tc = m2spe::load_train_config(tr_train);
            const m2spe::CorpusGraph graph = m2spe::load_corpus(tr_corpus);
            m2spe::TrainResult result = m2spe::train(cfg, tc, graph, tr_seed);
            if (!tr_quiet)
                for (const m2spe::StepLog& s : result.loss_log)
                    std::printf("step %d lr %.8f loss %.6f\n", s.step, s.lr, s.loss);
            m2spe::save_checkpoint(tr_out, cfg, result.params);
            std::cout << "wrote checkpoint " << tr_out << "\n";
        } else if (*ev) {
            auto [cfg, params] = m2spe::load_checkpoint(ev_ckpt);
            const m2spe::CorpusGraph graph = m2spe::load_corpus(ev_corpus);
            ev_settings.seed = ev_seed;
            const m2spe::BenchmarkTasks tasks = build_tasks(graph, split_csv(ev_tasks), ev_settings);
            m2spe::EvalOptions opt;
            opt.probe_epochs = ev_settings.probe_epochs;
            opt.probe_lr = ev_settings.probe_lr;
            opt.threads = ev_threads;
            const m2spe::MetricsReport report = m2spe::evaluate_encoder(params, cfg, graph, tasks, ev_seed, opt);
            m2spe::write_metrics_csv(ev_out, {report});
            std::cout << m2spe::metrics_csv({report});
        } else if (*gc) {
            const m2spe::EncoderConfig cfg = m2spe::load_encoder_config(gc_enc);
            const m2spe::GradCheckResult r =
                m2spe::encoder_gradient_check(cfg, gc_instances, gc_tol, gc_seed, &std::cout);
            return r.passed ? 0 : 1;
        } else if (*ab) {
            const m2spe::GridFile grid = m2spe::load_grid_file(ab_grid);
            const m2spe::CorpusGraph graph = grid.corpus_path.empty()
                                                 ? m2spe::generate_corpus(grid.corpus_spec, grid.corpus_seed)
                                                 : m2spe::load_corpus(grid.corpus_path);
            const m2spe::BenchmarkTasks tasks = build_tasks(graph, {"cite", "cocite", "clf"}, grid.eval);
            m2spe::EvalOptions opt;
            opt.probe_epochs = grid.eval.probe_epochs;
            opt.probe_lr = grid.eval.probe_lr;
            const m2spe::AblationReport report = m2spe::run_ablation(
                grid.encoder, grid.train, graph, tasks, grid.cells, parse_seed_list(ab_seeds), opt, ab_threads);
            write_text_file(ab_out, m2spe::ablation_csv(report));
            std::cout << m2spe::ablation_csv(report);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
