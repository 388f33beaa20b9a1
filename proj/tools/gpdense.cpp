// gpdense: evolve, decode, retrain and summarize GP-DenseNet runs.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "gpdense/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gpdense;

namespace {

struct ConfigArgs {
    std::string config_path;
    std::map<std::string, std::string> raw;  // flag value per config key
};

std::string flag_for(const std::string& key) {
    std::string f = "--" + key;
    for (char& c : f)
        if (c == '_') c = '-';
    return f;
}

// Every config key becomes a --dashed-flag overriding the file and defaults.
void add_config_flags(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file")->check(CLI::ExistingFile);
    const json defaults = config_to_json(RunConfig{}, true);
    for (const auto& [key, value] : defaults.items()) {
        std::string shown = value.is_null() ? "unset" : value.is_string() ? value.get<std::string>() : value.dump();
        if (shown.empty()) shown = "none";
        cmd->add_option(flag_for(key), args.raw[key], "default " + shown);
    }
}

json overrides(CLI::App* cmd, const ConfigArgs& args) {
    const json defaults = config_to_json(RunConfig{}, true);
    json patch = json::object();
    for (const auto& [key, text] : args.raw) {
        if (cmd->count(flag_for(key)) == 0) continue;
        if (defaults.at(key).is_string()) {
            patch[key] = text;
            continue;
        }
        json v = json::parse(text, nullptr, false);
        if (v.is_discarded() || !v.is_number())
            throw std::invalid_argument(flag_for(key) + " expects a number, got '" + text + "'");
        patch[key] = std::move(v);
    }
    return patch;
}

RunConfig resolve_config(CLI::App* cmd, const ConfigArgs& args) {
    RunConfig cfg;
    if (!args.config_path.empty()) {
        json file = json::parse(read_text(args.config_path), nullptr, false);
        if (file.is_discarded()) throw std::invalid_argument("config file is not valid JSON: " + args.config_path);
        cfg = apply_config(cfg, file);
    }
    return apply_config(cfg, overrides(cmd, args));
}

int cmd_evolve(CLI::App* cmd, const ConfigArgs& args, const std::string& resume_path, int stop_after) {
    if (!resume_path.empty()) {
        EvolutionState state = state_from_json(json::parse(read_text(resume_path)));
        RunConfig cfg = config_from_echo(state.config);
        const json patch = overrides(cmd, args);
        for (const auto& [key, value] : patch.items())
            if (key != "out" && key != "workers")
                throw std::invalid_argument("--resume only accepts --out and --workers overrides");
        cfg = apply_config(cfg, patch);
        if (patch.contains("out") == false) cfg.out = fs::path(resume_path).parent_path().string();
        ExperimentOptions opts{std::move(state), stop_after, cfg.out};
        std::cout << summary_line(run_experiment(cfg, opts)) << "\n";
        return 0;
    }

    const RunConfig base = resolve_config(cmd, args);
    for (int r = 0; r < base.evo.runs; ++r) {
        RunConfig cfg = base;
        cfg.evo.master_seed = base.evo.master_seed + static_cast<std::uint64_t>(r);
        fs::path dir = base.out;
        if (base.evo.runs > 1) dir /= "seed_" + std::to_string(cfg.evo.master_seed);
        ExperimentOptions opts;
        opts.stop_after_generation = stop_after;
        opts.out_dir = dir;
        std::cout << summary_line(run_experiment(cfg, opts)) << std::endl;
    }
    return 0;
}

int cmd_decode(CLI::App* cmd, const ConfigArgs& args, const std::string& text, const std::string& json_path,
               const std::string& dot_path) {
    Genotype g;
    try {
        g = Genotype::parse(text);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n  " << text << "\n  " << std::string(e.offset(), ' ') << "^\n";
        return 2;
    }
    const RunConfig cfg = resolve_config(cmd, args);
    PlanConfig pc = cfg.plan;
    pc.stem.out_channels = pc.channels;
    if (cfg.num_classes > 0) pc.head.num_classes = cfg.num_classes;
    const NetworkPlan plan = decode(g, pc);

    const auto node = [](int n) {
        return n == kStemNode ? std::string("stem") : n == kHeadNode ? std::string("head") : std::to_string(n);
    };
    const GenotypeStats s = genotype_stats(g);
    std::cout << "genotype    " << g.to_string() << "\n"
              << "depth       " << s.depth << " (S " << s.num_seq << ", P " << s.num_par << ")\n"
              << "blocks      " << plan.blocks.size() << "\n"
              << "edges       " << plan.edges.size() << "\n"
              << "parameters  " << count_parameters(plan) << "\n";
    for (const DenseBlockSpec& b : plan.blocks)
        std::cout << "  block " << b.id << ": " << b.num_conv_blocks << " conv blocks, dropout "
                  << format_real(b.drop_prob) << ", length " << b.in_length << " -> " << b.out_length << "\n";
    for (const Edge& e : plan.edges) {
        std::cout << "  " << node(e.from) << " -> " << node(e.to);
        if (e.align_pools > 0) std::cout << " (pooled x" << e.align_pools << ")";
        std::cout << "\n";
    }
    if (!json_path.empty()) write_text(json_path, plan_to_json(plan).dump(2) + "\n");
    if (!dot_path.empty()) write_text(dot_path, plan_to_dot(plan));
    return 0;
}

int cmd_retrain(CLI::App* cmd, const ConfigArgs& args, std::string genotype_text, const std::string& from_report) {
    RunConfig cfg;
    if (!from_report.empty()) {
        const json rep = json::parse(read_text(from_report));
        cfg = config_from_echo(rep.at("config"));
        cfg.evo.master_seed = rep.at("seed").get<std::uint64_t>();
        if (genotype_text.empty()) {
            if (rep.at("final").is_null()) throw std::invalid_argument("report has no final genotype");
            genotype_text = rep.at("final").at("genotype").get<std::string>();
        }
        cfg = apply_config(cfg, overrides(cmd, args));
    } else {
        cfg = resolve_config(cmd, args);
    }
    if (genotype_text.empty()) throw std::invalid_argument("pass --genotype or --from-report");
    cfg.validate();

    const Genotype g = Genotype::parse(genotype_text);
    const DatasetSplit data = load_dataset(cfg, data_seed(cfg.evo.master_seed));
    const NetworkPlan plan = decode(g, plan_for_dataset(cfg, data));
    TrainConfig tc = cfg.train;
    tc.seed = stable_hash(cfg.evo.master_seed, 0x72657472ULL);
    tc.epochs *= cfg.evo.retrain_epoch_factor;
    tc.data_fraction = 1.0;
    TrainOptions opts;
    opts.evaluate_test = true;
    std::unique_ptr<DenseNetModel<float>> model;
    const FitnessRecord rec = train_model(plan, data, tc, opts, &model);

    const fs::path dir = cfg.out;
    json rj = record_to_json(rec);
    rj["genotype"] = g.to_string();
    write_text(dir / "retrain.json", rj.dump(2) + "\n");
    write_text(dir / "training_curve.csv", curves_csv(rec));
    if (model) write_text(dir / "model.json", model_to_json(*model, {{"epochs", tc.epochs}}).dump() + "\n");
    if (rec.failed) {
        std::cerr << "error: training failed: " << rec.failure << "\n";
        return 1;
    }
    std::printf("%s  validation %.4f  test %.4f  params %lld\n", g.to_string().c_str(), rec.fitness,
                rec.test_accuracy.value_or(0.0), static_cast<long long>(rec.parameter_count));
    return 0;
}

void collect_reports(const fs::path& p, std::vector<fs::path>& out) {
    if (fs::is_directory(p)) {
        std::vector<fs::path> found;
        for (const auto& e : fs::recursive_directory_iterator(p))
            if (e.is_regular_file() && e.path().filename() == "report.json") found.push_back(e.path());
        std::sort(found.begin(), found.end());
        out.insert(out.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
        out.push_back(p);
    } else {
        throw std::invalid_argument("no such file or directory: " + p.string());
    }
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_path) {
    std::vector<fs::path> files;
    for (const auto& in : inputs) collect_reports(in, files);
    if (files.empty()) throw std::invalid_argument("no report.json files found");

    std::ostringstream csv;
    csv << "seed,generations,evolved_fitness,test_accuracy,parameter_count,num_seq,num_par,depth,genotype\n";
    std::vector<double> fit, test;
    for (const fs::path& f : files) {
        const json r = json::parse(read_text(f));
        if (r.value("format", "") != "gpdense-run-report") throw std::invalid_argument(f.string() + " is not a run report");
        const json& fin = r.at("final");
        if (fin.is_null()) {
            std::cerr << "skipping unfinished run " << f << "\n";
            continue;
        }
        const double ta = fin.at("test_accuracy").is_null() ? 0.0 : fin.at("test_accuracy").get<double>();
        fit.push_back(fin.at("evolved_fitness"));
        test.push_back(ta);
        const json& s = fin.at("stats");
        csv << r.at("seed").get<std::uint64_t>() << ',' << r.at("generations").size() << ','
            << format_real(fit.back()) << ',' << format_real(ta) << ',' << fin.at("parameter_count").get<long long>()
            << ',' << s.at("num_seq").get<int>() << ',' << s.at("num_par").get<int>() << ','
            << s.at("depth").get<int>() << ",\"" << fin.at("genotype").get<std::string>() << "\"\n";
    }
    if (out_path.empty())
        std::cout << csv.str();
    else
        write_text(out_path, csv.str());

    const auto mean_sd = [](const std::vector<double>& v) {
        double m = 0, ss = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        for (double x : v) ss += (x - m) * (x - m);
        return std::pair{m, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
    };
    if (!fit.empty()) {
        const auto [fm, fs_] = mean_sd(fit);
        const auto [tm, ts] = mean_sd(test);
        const double best = *std::max_element(test.begin(), test.end());
        std::fprintf(stderr, "%zu runs  fitness %.4f +- %.4f  test %.4f +- %.4f  best test %.4f\n", fit.size(), fm,
                     fs_, tm, ts, best);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Evolve character-level DenseNets with genetic programming"};
    app.require_subcommand(1);

    ConfigArgs evolve_args, decode_args, retrain_args;
    std::string resume_path, genotype_text, json_path, dot_path, retrain_genotype, from_report, report_out;
    int stop_after = -1;
    std::vector<std::string> report_inputs;

    CLI::App* evolve = app.add_subcommand("evolve", "Run the evolutionary search");
    add_config_flags(evolve, evolve_args);
    evolve->add_option("--resume", resume_path, "Continue from a checkpoint.json")->check(CLI::ExistingFile);
    evolve->add_option("--stop-after", stop_after, "Stop after this generation (checkpoint kept)");

    CLI::App* dec = app.add_subcommand("decode", "Decode a genotype and describe the network");
    dec->add_option("genotype", genotype_text, "Genotype text, e.g. \"S(5;E,E)\"")->required();
    dec->add_option("--json", json_path, "Write the plan as JSON");
    dec->add_option("--dot", dot_path, "Write the plan as Graphviz DOT");
    add_config_flags(dec, decode_args);

    CLI::App* retrain = app.add_subcommand("retrain", "Train one genotype on the full training split");
    retrain->add_option("--genotype", retrain_genotype, "Genotype text");
    retrain->add_option("--from-report", from_report, "Take genotype, seed and config from a report.json")
        ->check(CLI::ExistingFile);
    add_config_flags(retrain, retrain_args);

    CLI::App* rep = app.add_subcommand("report", "Summarize run reports into one CSV");
    rep->add_option("inputs", report_inputs, "report.json files or directories")->required();
    rep->add_option("-o,--output", report_out, "CSV path (stdout when omitted)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (evolve->parsed()) return cmd_evolve(evolve, evolve_args, resume_path, stop_after);
        if (dec->parsed()) return cmd_decode(dec, decode_args, genotype_text, json_path, dot_path);
        if (retrain->parsed()) return cmd_retrain(retrain, retrain_args, retrain_genotype, from_report);
        if (rep->parsed()) return cmd_report(report_inputs, report_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
