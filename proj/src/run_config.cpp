#include "gpdense/run_config.hpp"

#include <filesystem>
#include <functional>
#include <map>

namespace gpdense {

namespace {

using nlohmann::json;
using Setter = std::function<void(RunConfig&, const json&)>;

template <typename T>
Setter set(T RunConfig::*field) {
    return [field](RunConfig& c, const json& v) { c.*field = v.get<T>(); };
}

#define GPDENSE_FIELD(path) [](RunConfig& c, const json& v) { c.path = v.get<decltype(c.path)>(); }

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table{
        {"pop_size", GPDENSE_FIELD(evo.pop_size)},
        {"generations", GPDENSE_FIELD(evo.generations)},
        {"tournament_size", GPDENSE_FIELD(evo.tournament_k)},
        {"crossover_prob", GPDENSE_FIELD(evo.p_crossover)},
        {"mutation_prob", GPDENSE_FIELD(evo.p_mutation)},
        {"elitism_rate", GPDENSE_FIELD(evo.elitism_rate)},
        {"depth_init_min", GPDENSE_FIELD(evo.depth_init_min)},
        {"depth_init_max", GPDENSE_FIELD(evo.depth_init_max)},
        {"depth_max", GPDENSE_FIELD(evo.depth_max)},
        {"decorate_prob", GPDENSE_FIELD(evo.p_decorate)},
        {"mutation_depth_min", GPDENSE_FIELD(evo.mutation_depth_min)},
        {"mutation_depth_max", GPDENSE_FIELD(evo.mutation_depth_max)},
        {"runs", GPDENSE_FIELD(evo.runs)},
        {"seed", GPDENSE_FIELD(evo.master_seed)},
        {"retrain_epoch_factor", GPDENSE_FIELD(evo.retrain_epoch_factor)},
        {"epochs", GPDENSE_FIELD(train.epochs)},
        {"batch_size", GPDENSE_FIELD(train.batch_size)},
        {"learning_rate", GPDENSE_FIELD(train.lr0)},
        {"momentum", GPDENSE_FIELD(train.momentum)},
        {"halve_every", GPDENSE_FIELD(train.halve_every)},
        {"data_fraction", GPDENSE_FIELD(train.data_fraction)},
        {"clip_norm", GPDENSE_FIELD(train.clip_norm)},
        {"max_len", GPDENSE_FIELD(plan.stem.max_len)},
        {"embed_dim", GPDENSE_FIELD(plan.stem.embed_dim)},
        {"channels", [](RunConfig& c, const json& v) {
             c.plan.channels = v.get<int>();
             c.plan.stem.out_channels = c.plan.channels;
         }},
        {"growth", GPDENSE_FIELD(plan.growth)},
        {"kmax", GPDENSE_FIELD(plan.head.k)},
        {"fc1", GPDENSE_FIELD(plan.head.fc1)},
        {"fc2", GPDENSE_FIELD(plan.head.fc2)},
        {"task", set(&RunConfig::task)},
        {"task_train", set(&RunConfig::task_train)},
        {"task_validation", set(&RunConfig::task_validation)},
        {"task_test", set(&RunConfig::task_test)},
        {"train_csv", set(&RunConfig::train_csv)},
        {"test_csv", set(&RunConfig::test_csv)},
        {"num_classes", set(&RunConfig::num_classes)},
        {"validation_fraction", [](RunConfig& c, const json& v) {
             if (v.is_null())
                 c.validation_fraction.reset();
             else
                 c.validation_fraction = v.get<double>();
         }},
        {"out", set(&RunConfig::out)},
        {"workers", set(&RunConfig::workers)},
    };
    return table;
}

#undef GPDENSE_FIELD

}  // namespace

void RunConfig::validate() const {
    evo.validate();
    train.validate();
    if (plan.stem.max_len < plan.head.k) throw std::invalid_argument("max_len must be >= kmax");
    if (plan.stem.embed_dim < 1 || plan.channels < 1 || plan.growth < 1 || plan.head.fc1 < 1 || plan.head.fc2 < 1)
        throw std::invalid_argument("network widths must be positive");
    if (workers < 1) throw std::invalid_argument("workers must be >= 1");
    if (train_csv.empty()) {
        if (task.empty()) throw std::invalid_argument("no dataset: set train_csv/test_csv or a synthetic task");
        if (task_train < 1) throw std::invalid_argument("synthetic task needs training samples");
    } else {
        if (test_csv.empty()) throw std::invalid_argument("test_csv is required with train_csv");
        for (const auto& p : {train_csv, test_csv})
            if (!std::filesystem::exists(p)) throw std::invalid_argument("dataset file not found: " + p);
    }
}

json config_to_json(const RunConfig& c, bool include_execution) {
    json j{
        {"pop_size", c.evo.pop_size},
        {"generations", c.evo.generations},
        {"tournament_size", c.evo.tournament_k},
        {"crossover_prob", c.evo.p_crossover},
        {"mutation_prob", c.evo.p_mutation},
        {"elitism_rate", c.evo.elitism_rate},
        {"depth_init_min", c.evo.depth_init_min},
        {"depth_init_max", c.evo.depth_init_max},
        {"depth_max", c.evo.depth_max},
        {"decorate_prob", c.evo.p_decorate},
        {"mutation_depth_min", c.evo.mutation_depth_min},
        {"mutation_depth_max", c.evo.mutation_depth_max},
        {"runs", c.evo.runs},
        {"seed", c.evo.master_seed},
        {"retrain_epoch_factor", c.evo.retrain_epoch_factor},
        {"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.lr0},
        {"momentum", c.train.momentum},
        {"halve_every", c.train.halve_every},
        {"data_fraction", c.train.data_fraction},
        {"clip_norm", c.train.clip_norm},
        {"max_len", c.plan.stem.max_len},
        {"embed_dim", c.plan.stem.embed_dim},
        {"channels", c.plan.channels},
        {"growth", c.plan.growth},
        {"kmax", c.plan.head.k},
        {"fc1", c.plan.head.fc1},
        {"fc2", c.plan.head.fc2},
        {"task", c.task},
        {"task_train", c.task_train},
        {"task_validation", c.task_validation},
        {"task_test", c.task_test},
        {"train_csv", c.train_csv},
        {"test_csv", c.test_csv},
        {"num_classes", c.num_classes},
        {"validation_fraction", c.validation_fraction ? json(*c.validation_fraction) : json()},
    };
    if (include_execution) {
        j["out"] = c.out;
        j["workers"] = c.workers;
    }
    return j;
}

RunConfig apply_config(RunConfig base, const json& patch) {
    if (!patch.is_object()) throw std::invalid_argument("configuration must be a JSON object");
    for (const auto& [key, value] : patch.items()) {
        const auto it = setters().find(key);
        if (it == setters().end()) throw std::invalid_argument("unknown configuration key '" + key + "'");
        try {
            it->second(base, value);
        } catch (const json::exception& e) {
            throw std::invalid_argument("bad value for '" + key + "': " + e.what());
        }
    }
    return base;
}

DatasetSplit load_dataset(const RunConfig& cfg, std::uint64_t seed) {
    if (!cfg.train_csv.empty()) {
        CsvOptions opts;
        opts.max_len = cfg.plan.stem.max_len;
        opts.num_classes = cfg.num_classes;
        opts.validation_fraction = cfg.validation_fraction;
        opts.seed = seed;
        return load_csv(cfg.train_csv, cfg.test_csv, opts);
    }
    SyntheticSizes sizes;
    sizes.train = cfg.task_train;
    sizes.validation = cfg.task_validation;
    sizes.test = cfg.task_test;
    sizes.length = cfg.plan.stem.max_len;
    return synthetic_task(cfg.task, sizes, seed);
}

}  // namespace gpdense
