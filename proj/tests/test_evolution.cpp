#include <doctest.h>

#include <atomic>
#include <cmath>
#include <mutex>

#include "gpdense/evolution.hpp"

using namespace gpdense;

namespace {

// Deterministic stand-in for training: fitness is a hash of the genotype text
// with a mild preference for larger trees, so selection has a gradient.
FitnessRecord fake_record(const Genotype& g, std::uint64_t seed) {
    FitnessRecord r;
    r.seed = seed;
    const double noise = static_cast<double>(fnv1a64(g.to_string()) % 1000) / 1000.0;
    r.fitness = std::min(1.0, 0.5 * noise + 0.05 * static_cast<double>(g.size()) / 3.0);
    r.val_accuracy = {r.fitness / 2, r.fitness};
    r.val_loss = {1.0, 0.5};
    r.train_loss = {1.2, 0.6};
    r.train_accuracy = {0.3, 0.6};
    r.parameter_count = static_cast<std::int64_t>(g.size()) * 1000;
    return r;
}

struct CountingEvaluator {
    std::shared_ptr<std::atomic<int>> calls = std::make_shared<std::atomic<int>>(0);
    std::shared_ptr<std::mutex> mu = std::make_shared<std::mutex>();
    std::shared_ptr<std::map<std::string, int>> per_id = std::make_shared<std::map<std::string, int>>();

    Evaluator fn() const {
        return [c = calls, mu = mu, ids = per_id](const Genotype& g, std::uint64_t seed) {
            ++*c;
            {
                std::lock_guard lock(*mu);
                ++(*ids)[g.id()];
            }
            return fake_record(g, seed);
        };
    }
};

std::vector<Individual> fresh(const std::vector<std::string>& texts) {
    std::vector<Individual> pop;
    for (const auto& t : texts) pop.push_back({Genotype::parse(t), std::nullopt, std::nullopt, Origin::Init});
    return pop;
}

std::vector<Individual> with_fitness(const std::vector<double>& f) {
    std::vector<Individual> pop;
    Rng rng(0);
    for (double v : f) pop.push_back({random_genotype(rng, 1, 3), v, std::nullopt, Origin::Init});
    return pop;
}

EvoConfig small_config() {
    EvoConfig cfg;
    cfg.pop_size = 10;
    cfg.generations = 6;
    cfg.depth_init_max = 5;
    cfg.master_seed = 17;
    return cfg;
}

double binom(int n, int k) {
    double r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

}  // namespace

TEST_CASE("evaluate_population scores everyone and trains each id once") {
    CountingEvaluator ev;
    FitnessCache cache;
    auto pop = fresh({"E", "S(2;E,E)", "E", "P(3;E,E)", "S(2;E,E)"});
    const std::size_t trained = evaluate_population(pop, 0, ev.fn(), cache, 5);
    CHECK(trained == 3);
    CHECK(*ev.calls == 3);
    for (const auto& ind : pop) {
        REQUIRE(ind.fitness.has_value());
        REQUIRE(ind.record.has_value());
        CHECK(*ind.fitness >= 0.0);
        CHECK(*ind.fitness <= 1.0);
        CHECK(*ind.fitness == ind.record->fitness);
    }
    // seeds follow the first occurrence's index
    CHECK(pop[0].record->seed == training_seed(5, 0, 0));
    CHECK(pop[2].record->seed == training_seed(5, 0, 0));
    CHECK(pop[3].record->seed == training_seed(5, 0, 3));

    auto next = fresh({"P(3;E,E)", "S(9;E,E)"});
    CHECK(evaluate_population(next, 1, ev.fn(), cache, 5) == 1);
    CHECK(*ev.calls == 4);
    CHECK(next[0].record->seed == training_seed(5, 0, 3));
}

TEST_CASE("failed evaluations score zero and do not stop the run") {
    FitnessCache cache;
    auto pop = fresh({"E", "S(2;E,E)"});
    const Evaluator ev = [](const Genotype& g, std::uint64_t seed) -> FitnessRecord {
        if (g.size() > 1) throw std::runtime_error("boom");
        FitnessRecord r = fake_record(g, seed);
        return r;
    };
    evaluate_population(pop, 0, ev, cache, 1);
    CHECK(*pop[1].fitness == 0.0);
    CHECK(pop[1].record->failed);
    CHECK(pop[1].record->failure == "boom");
    CHECK(*pop[0].fitness > 0.0);

    auto nan_pop = fresh({"P(1;E,E)"});
    const Evaluator nan_ev = [](const Genotype& g, std::uint64_t seed) {
        FitnessRecord r = fake_record(g, seed);
        r.failed = true;
        r.fitness = 0.7;
        return r;
    };
    evaluate_population(nan_pop, 0, nan_ev, cache, 1);
    CHECK(*nan_pop[0].fitness == 0.0);
}

TEST_CASE("parallel evaluation commits the same results") {
    Rng rng(3);
    std::vector<Individual> base;
    for (int i = 0; i < 30; ++i) base.push_back({random_genotype(rng, 1, 6), std::nullopt, std::nullopt, Origin::Init});
    auto a = base, b = base;
    FitnessCache ca, cb;
    CountingEvaluator ev;
    evaluate_population(a, 2, ev.fn(), ca, 9, 1);
    evaluate_population(b, 2, ev.fn(), cb, 9, 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(*a[i].fitness == *b[i].fitness);
        CHECK(a[i].record->seed == b[i].record->seed);
    }
    CHECK(ca.size() == cb.size());
}

TEST_CASE("tournament selection") {
    Rng rng(4);
    const auto pool = with_fitness({0.2, 0.9, 0.5});
    CHECK(tournament_select(pool, 3, rng) == 1);

    const auto pop = with_fitness({0.1, 0.4, 0.3, 0.4, 0.2});
    for (int i = 0; i < 50; ++i) CHECK(tournament_select(pop, 5, rng) == 1);  // tie to the lower index
    CHECK_THROWS_AS(tournament_select(pop, 6, rng), std::invalid_argument);
    CHECK_THROWS_AS(tournament_select(pop, 0, rng), std::invalid_argument);
}

TEST_CASE("tournament win rate of the best matches the analytic value") {
    std::vector<double> f(20);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = 0.01 * static_cast<double>(i);
    const auto pop = with_fitness(f);
    Rng rng(5);
    const int draws = 10000;
    int wins = 0;
    for (int i = 0; i < draws; ++i) wins += tournament_select(pop, 3, rng) == 19 ? 1 : 0;
    const double p = 1.0 - binom(19, 3) / binom(20, 3);
    CHECK(p == doctest::Approx(0.15));
    CHECK(std::abs(wins - draws * p) < 3 * std::sqrt(draws * p * (1 - p)));
}

TEST_CASE("next generation keeps elites and the population size") {
    EvoConfig cfg;
    cfg.pop_size = 20;
    CHECK(cfg.elite_count() == 2);
    Rng rng(6);
    std::vector<Individual> pop;
    for (int i = 0; i < 20; ++i)
        pop.push_back({random_genotype(rng, 1, 5), static_cast<double>((i * 7) % 20) / 20.0, std::nullopt, Origin::Init});

    for (int gen = 0; gen < 100; ++gen) {
        auto next = next_generation(pop, cfg, rng);
        REQUIRE(next.size() == 20);
        // elites: the top two (ties by index), serialized identically, fitness kept
        std::vector<std::size_t> order(pop.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return *pop[a].fitness > *pop[b].fitness; });
        for (std::size_t e = 0; e < 2; ++e) {
            CHECK(next[e].origin == Origin::Elite);
            CHECK(next[e].genotype.to_string() == pop[order[e]].genotype.to_string());
            CHECK(next[e].fitness == pop[order[e]].fitness);
        }
        for (std::size_t i = 2; i < next.size(); ++i) {
            CHECK_FALSE(next[i].fitness.has_value());
            CHECK(next[i].genotype.depth() <= kMaxTreeDepth);
            next[i].fitness = static_cast<double>(fnv1a64(next[i].genotype.id()) % 100) / 100.0;
        }
        pop = std::move(next);
    }
}

TEST_CASE("no crossover and no mutation yields clones of tournament winners") {
    EvoConfig cfg;
    cfg.pop_size = 10;
    cfg.p_crossover = 0.0;
    cfg.p_mutation = 0.0;
    Rng rng(7);
    std::vector<Individual> pop;
    for (int i = 0; i < 10; ++i) pop.push_back({random_genotype(rng, 2, 5), 0.1 * i, std::nullopt, Origin::Init});
    const auto next = next_generation(pop, cfg, rng);
    for (std::size_t i = 1; i < next.size(); ++i) {
        CHECK(next[i].origin == Origin::Clone);
        const bool found = std::any_of(pop.begin(), pop.end(), [&](const Individual& p) { return p.genotype == next[i].genotype; });
        CHECK(found);
        // the worst individual can never win a 3-way tournament
        CHECK_FALSE(next[i].genotype == pop[0].genotype);
    }
}

TEST_CASE("genotype stats") {
    CHECK(genotype_stats(Genotype{}) == GenotypeStats{0, 0, 1, 0});
    CHECK(genotype_stats(Genotype::parse("P(1;P(2;E,E),P(3,d=0.1;S(4;E,E),P(5;E,E)))")) == GenotypeStats{1, 4, 4, 1});
    Rng rng(8);
    for (int i = 0; i < 500; ++i) {
        const Genotype g = random_genotype(rng);
        const std::string t = g.to_string();
        GenotypeStats s;
        s.num_seq = static_cast<int>(std::count(t.begin(), t.end(), 'S'));
        s.num_par = static_cast<int>(std::count(t.begin(), t.end(), 'P'));
        s.decorated = static_cast<int>(std::count(t.begin(), t.end(), 'd'));
        s.depth = g.depth();
        CHECK(genotype_stats(g) == s);
    }
}

TEST_CASE("origin names round trip") {
    for (Origin o : {Origin::Init, Origin::Crossover, Origin::Mutation, Origin::Clone, Origin::Elite})
        CHECK(origin_from_name(origin_name(o)) == o);
    CHECK_THROWS(origin_from_name("alien"));
}

TEST_CASE("config validation") {
    EvoConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.pop_size == 20);
    CHECK(cfg.generations == 20);
    CHECK(cfg.tournament_k == 3);
    CHECK(cfg.p_crossover == 0.5);
    CHECK(cfg.p_mutation == 0.1);
    CHECK(cfg.elitism_rate == 0.1);
    CHECK(cfg.runs == 30);
    EvoConfig bad = cfg;
    bad.pop_size = 1;
    CHECK_THROWS(bad.validate());
    bad = cfg;
    bad.tournament_k = 21;
    CHECK_THROWS(bad.validate());
    bad = cfg;
    bad.p_mutation = 1.5;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("run_evolution: monotone best-so-far, caching and determinism") {
    const EvoConfig cfg = small_config();
    CountingEvaluator ev;
    RunHooks hooks;
    hooks.evaluate = ev.fn();
    hooks.retrain = [](const Genotype& g, std::uint64_t seed) {
        FitnessRecord r = fake_record(g, seed);
        r.test_accuracy = r.fitness;
        return r;
    };
    const RunReport a = run_evolution(cfg, hooks);
    REQUIRE(a.generations.size() == 6);
    for (std::size_t i = 1; i < a.generations.size(); ++i) {
        CHECK(a.generations[i].best_so_far >= a.generations[i - 1].best_so_far);
        CHECK(a.generations[i].individuals.size() == 10);
    }
    for (const auto& [id, n] : *ev.per_id) CHECK(n == 1);
    REQUIRE(a.final_result.has_value());
    CHECK(a.final_result->evolved_fitness == a.generations.back().best);
    CHECK(a.final_result->retrain.test_accuracy.has_value());

    hooks.workers = 3;
    const RunReport b = run_evolution(cfg, hooks);
    CHECK(report_to_json(a).dump() == report_to_json(b).dump());

    EvoConfig other = cfg;
    other.master_seed = 18;
    CHECK(report_to_json(run_evolution(other, hooks)).dump() != report_to_json(a).dump());
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
    const EvoConfig cfg = small_config();
    RunHooks hooks;
    hooks.evaluate = [](const Genotype& g, std::uint64_t s) { return fake_record(g, s); };
    hooks.config_echo = {{"note", "resume"}};
    const RunReport full = run_evolution(cfg, hooks);

    std::optional<EvolutionState> saved;
    RunHooks first = hooks;
    first.stop_after_generation = 2;
    first.on_generation = [&](const EvolutionState& st) { saved = st; };
    const RunReport partial = run_evolution(cfg, first);
    CHECK(partial.generations.size() == 3);
    CHECK_FALSE(partial.final_result.has_value());
    REQUIRE(saved.has_value());
    CHECK(saved->generation == 2);

    RunHooks second = hooks;
    second.resume = state_from_json(nlohmann::json::parse(state_to_json(*saved).dump()));
    const RunReport resumed = run_evolution(cfg, second);
    CHECK(report_to_json(resumed).dump() == report_to_json(full).dump());
}

TEST_CASE("checkpoint and report serialization") {
    const EvoConfig cfg = small_config();
    RunHooks hooks;
    hooks.evaluate = [](const Genotype& g, std::uint64_t s) { return fake_record(g, s); };
    std::optional<EvolutionState> last;
    hooks.on_generation = [&](const EvolutionState& st) { last = st; };
    const RunReport r = run_evolution(cfg, hooks);
    REQUIRE(last.has_value());
    const nlohmann::json j = state_to_json(*last);
    CHECK(j.at("format") == "gpdense-checkpoint");
    const EvolutionState back = state_from_json(j);
    CHECK(state_to_json(back) == j);
    CHECK(back.population.size() == 10);
    CHECK_THROWS(state_from_json(nlohmann::json{{"format", "other"}, {"version", 1}}));

    const nlohmann::json rep = report_to_json(r);
    CHECK(rep.at("format") == "gpdense-run-report");
    CHECK(rep.at("generations").size() == 6);
    CHECK(rep.dump().find("wall_seconds") == std::string::npos);
    const std::string csv = generations_csv(r);
    CHECK(csv.rfind("generation,best,mean,min,best_so_far", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
}
