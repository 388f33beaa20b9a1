#include "gpdense/evolution.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

namespace gpdense {

namespace {

FitnessRecord failed_record(std::uint64_t seed, const std::string& why) {
    FitnessRecord r;
    r.seed = seed;
    r.failed = true;
    r.failure = why;
    r.fitness = 0.0;
    return r;
}

double fitness_of(const Individual& ind) {
    if (!ind.fitness) throw std::logic_error("individual has not been evaluated");
    return *ind.fitness;
}

// Index of the fittest individual; ties go to the lower index.
std::size_t fittest_index(std::span<const Individual> pop) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < pop.size(); ++i)
        if (fitness_of(pop[i]) > fitness_of(pop[best])) best = i;
    return best;
}

GenerationRow summarize(const std::vector<Individual>& pop, int generation, std::size_t trained, double prev_best) {
    GenerationRow row;
    row.generation = generation;
    row.trained = trained;
    const std::size_t b = fittest_index(pop);
    row.best = fitness_of(pop[b]);
    row.min = row.best;
    double sum = 0.0;
    for (const Individual& ind : pop) {
        sum += fitness_of(ind);
        row.min = std::min(row.min, fitness_of(ind));
    }
    row.mean = sum / static_cast<double>(pop.size());
    row.best_so_far = std::max(prev_best, row.best);
    row.best_genotype = pop[b].genotype.to_string();
    const GenotypeStats s = genotype_stats(pop[b].genotype);
    row.best_num_seq = s.num_seq;
    row.best_num_par = s.num_par;
    row.individuals = pop;
    for (Individual& ind : row.individuals) ind.record.reset();
    return row;
}

}  // namespace

std::string origin_name(Origin o) {
    switch (o) {
        case Origin::Init: return "init";
        case Origin::Crossover: return "crossover";
        case Origin::Mutation: return "mutation";
        case Origin::Clone: return "clone";
        case Origin::Elite: return "elite";
    }
    return "init";
}

Origin origin_from_name(const std::string& s) {
    for (Origin o : {Origin::Init, Origin::Crossover, Origin::Mutation, Origin::Clone, Origin::Elite})
        if (origin_name(o) == s) return o;
    throw std::invalid_argument("unknown origin '" + s + "'");
}

void EvoConfig::validate() const {
    auto rate = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(name) + " must be in [0,1]");
    };
    if (pop_size < 2) throw std::invalid_argument("population size must be >= 2");
    if (generations < 1) throw std::invalid_argument("generations must be >= 1");
    if (tournament_k < 1 || tournament_k > pop_size) throw std::invalid_argument("tournament size must be in [1, pop_size]");
    rate(p_crossover, "crossover probability");
    rate(p_mutation, "mutation probability");
    rate(elitism_rate, "elitism rate");
    rate(p_decorate, "decoration probability");
    if (depth_max < 1 || depth_max > kMaxTreeDepth) throw std::invalid_argument("max depth must be in [1,17]");
    if (depth_init_min < 1 || depth_init_min > depth_init_max || depth_init_max > depth_max)
        throw std::invalid_argument("initial depth range must satisfy 1 <= min <= max <= depth_max");
    if (mutation_depth_min < 1 || mutation_depth_min > mutation_depth_max || mutation_depth_max > depth_max)
        throw std::invalid_argument("mutation growth range invalid");
    if (runs < 1) throw std::invalid_argument("runs must be >= 1");
    if (retrain_epoch_factor < 1) throw std::invalid_argument("retrain epoch factor must be >= 1");
    if (elite_count() >= pop_size) throw std::invalid_argument("elitism leaves no room for offspring");
}

int EvoConfig::elite_count() const { return static_cast<int>(std::lround(elitism_rate * pop_size)); }

std::uint64_t training_seed(std::uint64_t master_seed, int generation, std::size_t index) {
    return stable_hash(master_seed, static_cast<std::uint64_t>(generation), index);
}

std::size_t evaluate_population(std::vector<Individual>& pop, int generation, const Evaluator& evaluate,
                                FitnessCache& cache, std::uint64_t master_seed, int workers) {
    std::vector<std::size_t> todo;
    std::map<std::string, std::size_t> pending;
    for (std::size_t i = 0; i < pop.size(); ++i) {
        if (pop[i].fitness) continue;
        const std::string& id = pop[i].genotype.id();
        if (cache.contains(id) || pending.contains(id)) continue;
        pending.emplace(id, i);
        todo.push_back(i);
    }

    std::vector<FitnessRecord> results(todo.size());
    auto run_one = [&](std::size_t t) {
        const std::size_t i = todo[t];
        const std::uint64_t seed = training_seed(master_seed, generation, i);
        try {
            results[t] = evaluate(pop[i].genotype, seed);
        } catch (const std::exception& e) {
            results[t] = failed_record(seed, e.what());
        }
        if (results[t].failed) results[t].fitness = 0.0;
    };
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), todo.size());
    if (n_threads <= 1) {
        for (std::size_t t = 0; t < todo.size(); ++t) run_one(t);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < n_threads; ++w)
            pool.emplace_back([&] {
                for (std::size_t t = next++; t < todo.size(); t = next++) run_one(t);
            });
    }

    for (std::size_t t = 0; t < todo.size(); ++t) cache.emplace(pop[todo[t]].genotype.id(), std::move(results[t]));
    for (Individual& ind : pop) {
        if (ind.fitness) continue;
        const FitnessRecord& rec = cache.at(ind.genotype.id());
        ind.record = rec;
        ind.fitness = rec.fitness;
    }
    return todo.size();
}

std::size_t tournament_select(std::span<const Individual> pop, int k, Rng& rng) {
    if (k < 1 || static_cast<std::size_t>(k) > pop.size())
        throw std::invalid_argument("tournament size " + std::to_string(k) + " exceeds population size " +
                                    std::to_string(pop.size()));
    std::vector<std::size_t> idx(pop.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i)
        std::swap(idx[i], idx[i + uniform_index(rng, pop.size() - i)]);
    std::size_t best = idx[0];
    for (std::size_t i = 1; i < static_cast<std::size_t>(k); ++i) {
        const std::size_t c = idx[i];
        const double fc = fitness_of(pop[c]), fb = fitness_of(pop[best]);
        if (fc > fb || (fc == fb && c < best)) best = c;
    }
    return best;
}

std::vector<Individual> next_generation(std::span<const Individual> pop, const EvoConfig& cfg, Rng& rng) {
    const auto target = static_cast<std::size_t>(cfg.pop_size);
    std::vector<std::size_t> order(pop.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fitness_of(pop[a]) > fitness_of(pop[b]); });

    std::vector<Individual> out;
    out.reserve(target);
    const auto elites = std::min<std::size_t>(static_cast<std::size_t>(cfg.elite_count()), pop.size());
    for (std::size_t e = 0; e < elites; ++e) {
        Individual copy = pop[order[e]];
        copy.origin = Origin::Elite;
        out.push_back(std::move(copy));
    }

    const MutationParams mp{cfg.mutation_depth_min, cfg.mutation_depth_max, cfg.p_decorate, cfg.depth_max};
    while (out.size() < target) {
        const Genotype& a = pop[tournament_select(pop, cfg.tournament_k, rng)].genotype;
        const Genotype& b = pop[tournament_select(pop, cfg.tournament_k, rng)].genotype;
        Origin origin = Origin::Clone;
        std::pair<Genotype, Genotype> kids{a, b};
        if (bernoulli(rng, cfg.p_crossover)) {
            kids = crossover(a, b, rng, cfg.depth_max);
            origin = Origin::Crossover;
        }
        for (Genotype* kid : {&kids.first, &kids.second}) {
            if (out.size() == target) break;
            Individual child{*kid, std::nullopt, std::nullopt, origin};
            if (bernoulli(rng, cfg.p_mutation)) {
                child.genotype = mutate(child.genotype, rng, mp);
                child.origin = Origin::Mutation;
            }
            out.push_back(std::move(child));
        }
    }
    return out;
}

GenotypeStats genotype_stats(const Genotype& g) {
    GenotypeStats s;
    for (const Symbol& sym : g.symbols()) {
        if (sym.op == Op::Seq) ++s.num_seq;
        if (sym.op == Op::Par) ++s.num_par;
        if (sym.dropout) ++s.decorated;
    }
    s.depth = g.depth();
    return s;
}

RunReport run_evolution(const EvoConfig& cfg, const RunHooks& hooks) {
    cfg.validate();
    if (!hooks.evaluate) throw std::invalid_argument("run_evolution needs an evaluator");

    RunReport report;
    report.seed = cfg.master_seed;
    report.config = hooks.config_echo;

    Rng rng(stable_hash(cfg.master_seed, 0x65766f6cULL));
    std::vector<Individual> pop;
    FitnessCache cache;
    int first = 0;
    if (hooks.resume) {
        const EvolutionState& st = *hooks.resume;
        pop = st.population;
        cache = st.cache;
        report.generations = st.rows;
        restore_rng_state(rng, st.rng);
        first = st.generation + 1;
    } else {
        pop.reserve(static_cast<std::size_t>(cfg.pop_size));
        for (int i = 0; i < cfg.pop_size; ++i)
            pop.push_back({random_genotype(rng, cfg.depth_init_min, cfg.depth_init_max, cfg.p_decorate), std::nullopt,
                           std::nullopt, Origin::Init});
    }

    for (int g = first; g < cfg.generations; ++g) {
        if (g > 0) pop = next_generation(pop, cfg, rng);
        const std::size_t trained =
            evaluate_population(pop, g, hooks.evaluate, cache, cfg.master_seed, hooks.workers);
        const double prev = report.generations.empty() ? 0.0 : report.generations.back().best_so_far;
        report.generations.push_back(summarize(pop, g, trained, prev));
        if (hooks.on_generation)
            hooks.on_generation(EvolutionState{g, pop, cache, rng_state(rng), report.generations, report.config});
        if (g == hooks.stop_after_generation) return report;
    }

    const Individual& fittest = pop[fittest_index(pop)];
    FinalResult fin;
    fin.genotype = fittest.genotype.to_string();
    fin.evolved_fitness = fitness_of(fittest);
    fin.stats = genotype_stats(fittest.genotype);
    if (hooks.retrain) {
        const std::uint64_t seed = stable_hash(cfg.master_seed, 0x72657472ULL);
        try {
            fin.retrain = hooks.retrain(fittest.genotype, seed);
        } catch (const std::exception& e) {
            fin.retrain = failed_record(seed, e.what());
        }
        fin.parameter_count = fin.retrain.parameter_count;
    } else if (fittest.record) {
        fin.parameter_count = fittest.record->parameter_count;
    }
    report.final_result = std::move(fin);
    return report;
}

Evaluator make_evaluator(const PlanConfig& plan_cfg, const TrainConfig& train_cfg, const DatasetSplit& data) {
    return [plan_cfg, train_cfg, &data](const Genotype& g, std::uint64_t seed) {
        TrainConfig cfg = train_cfg;
        cfg.seed = seed;
        return train_model(decode(g, plan_cfg), data, cfg);
    };
}

Evaluator make_retrainer(const PlanConfig& plan_cfg, const TrainConfig& train_cfg, const DatasetSplit& data,
                         int epoch_factor) {
    return [plan_cfg, train_cfg, &data, epoch_factor](const Genotype& g, std::uint64_t seed) {
        TrainConfig cfg = train_cfg;
        cfg.seed = seed;
        cfg.epochs = train_cfg.epochs * epoch_factor;
        cfg.data_fraction = 1.0;
        TrainOptions opts;
        opts.evaluate_test = true;
        return train_model(decode(g, plan_cfg), data, cfg, opts);
    };
}

}  // namespace gpdense
