#include "gpdense/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gpdense {

PlanConfig plan_for_dataset(const RunConfig& cfg, const DatasetSplit& data) {
    PlanConfig p = cfg.plan;
    p.stem.alphabet_size = data.alphabet.size();
    p.stem.max_len = data.max_len;
    p.stem.out_channels = p.channels;
    p.head.num_classes = data.num_classes;
    return p;
}

std::uint64_t data_seed(std::uint64_t run_seed) { return stable_hash(run_seed, 0x64617461ULL); }

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << text;
        if (!out.flush()) throw std::runtime_error("write failed: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

RunConfig config_from_echo(const nlohmann::json& echo) { return apply_config(RunConfig{}, echo); }

RunReport run_experiment(const RunConfig& cfg, const ExperimentOptions& options) {
    cfg.validate();
    const DatasetSplit data = load_dataset(cfg, data_seed(cfg.evo.master_seed));
    const PlanConfig plan_cfg = plan_for_dataset(cfg, data);
    const std::filesystem::path& dir = options.out_dir;

    RunHooks hooks;
    hooks.evaluate = make_evaluator(plan_cfg, cfg.train, data);
    hooks.retrain = make_retrainer(plan_cfg, cfg.train, data, cfg.evo.retrain_epoch_factor);
    hooks.resume = options.resume;
    hooks.stop_after_generation = options.stop_after_generation;
    hooks.workers = cfg.workers;
    hooks.config_echo = config_to_json(cfg);
    if (options.resume && options.resume->config != hooks.config_echo)
        throw std::invalid_argument("checkpoint was written with a different configuration");
    if (!dir.empty())
        hooks.on_generation = [&dir](const EvolutionState& st) {
            write_text(dir / "checkpoint.json", state_to_json(st).dump(1) + "\n");
        };

    const RunReport report = run_evolution(cfg.evo, hooks);
    if (dir.empty()) return report;

    write_text(dir / "report.json", report_to_json(report).dump(2) + "\n");
    write_text(dir / "generations.csv", generations_csv(report));
    if (report.final_result) {
        const FinalResult& fin = *report.final_result;
        const NetworkPlan plan = decode(Genotype::parse(fin.genotype), plan_cfg);
        write_text(dir / "best_genotype.txt", fin.genotype + "\n");
        write_text(dir / "best_plan.json", plan_to_json(plan).dump(2) + "\n");
        write_text(dir / "best_plan.dot", plan_to_dot(plan));
        write_text(dir / "training_curve.csv", curves_csv(fin.retrain));
    }
    return report;
}

std::string summary_line(const RunReport& report) {
    char buf[128];
    std::string line = "seed " + std::to_string(report.seed);
    if (!report.final_result) {
        const double best = report.generations.empty() ? 0.0 : report.generations.back().best_so_far;
        std::snprintf(buf, sizeof buf, "  stopped after generation %d  best so far %.4f",
                      report.generations.empty() ? -1 : report.generations.back().generation, best);
        return line + buf;
    }
    const FinalResult& f = *report.final_result;
    std::snprintf(buf, sizeof buf, "  fitness %.4f  test %.4f  params %lld  ", f.evolved_fitness,
                  f.retrain.test_accuracy.value_or(0.0), static_cast<long long>(f.parameter_count));
    return line + buf + f.genotype;
}

}  // namespace gpdense
