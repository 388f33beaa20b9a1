#include <sstream>

#include "gpdense/evolution.hpp"

namespace gpdense {

namespace {

nlohmann::json stats_to_json(const GenotypeStats& s) {
    return {{"num_seq", s.num_seq}, {"num_par", s.num_par}, {"depth", s.depth}, {"decorated", s.decorated}};
}

nlohmann::json row_to_json(const GenerationRow& row) {
    nlohmann::json inds = nlohmann::json::array();
    for (const Individual& ind : row.individuals) {
        const GenotypeStats s = genotype_stats(ind.genotype);
        inds.push_back({{"genotype", ind.genotype.to_string()},
                        {"fitness", ind.fitness.value_or(0.0)},
                        {"origin", origin_name(ind.origin)},
                        {"num_seq", s.num_seq},
                        {"num_par", s.num_par}});
    }
    return {{"generation", row.generation},
            {"best", row.best},
            {"mean", row.mean},
            {"min", row.min},
            {"best_so_far", row.best_so_far},
            {"best_genotype", row.best_genotype},
            {"best_num_seq", row.best_num_seq},
            {"best_num_par", row.best_num_par},
            {"trained", row.trained},
            {"individuals", std::move(inds)}};
}

GenerationRow row_from_json(const nlohmann::json& j) {
    GenerationRow row;
    row.generation = j.at("generation");
    row.best = j.at("best");
    row.mean = j.at("mean");
    row.min = j.at("min");
    row.best_so_far = j.at("best_so_far");
    row.best_genotype = j.at("best_genotype");
    row.best_num_seq = j.at("best_num_seq");
    row.best_num_par = j.at("best_num_par");
    row.trained = j.at("trained");
    for (const auto& e : j.at("individuals"))
        row.individuals.push_back({Genotype::parse(e.at("genotype").get<std::string>()), e.at("fitness").get<double>(),
                                   std::nullopt, origin_from_name(e.at("origin"))});
    return row;
}

}  // namespace

nlohmann::json individual_to_json(const Individual& ind) {
    nlohmann::json j{{"genotype", ind.genotype.to_string()}, {"origin", origin_name(ind.origin)}};
    if (ind.fitness) j["fitness"] = *ind.fitness;
    if (ind.record) j["record"] = record_to_json(*ind.record);
    return j;
}

Individual individual_from_json(const nlohmann::json& j) {
    Individual ind{Genotype::parse(j.at("genotype").get<std::string>()), std::nullopt, std::nullopt,
                   origin_from_name(j.at("origin"))};
    if (j.contains("fitness")) ind.fitness = j.at("fitness").get<double>();
    if (j.contains("record")) ind.record = record_from_json(j.at("record"));
    return ind;
}

nlohmann::json report_to_json(const RunReport& report) {
    nlohmann::json j{{"format", "gpdense-run-report"}, {"version", 1}, {"seed", report.seed}, {"config", report.config}};
    j["generations"] = nlohmann::json::array();
    for (const GenerationRow& row : report.generations) j["generations"].push_back(row_to_json(row));
    if (report.final_result) {
        const FinalResult& f = *report.final_result;
        nlohmann::json fin{{"genotype", f.genotype},
                           {"evolved_fitness", f.evolved_fitness},
                           {"parameter_count", f.parameter_count},
                           {"stats", stats_to_json(f.stats)},
                           {"retrain", record_to_json(f.retrain)}};
        fin["test_accuracy"] = f.retrain.test_accuracy ? nlohmann::json(*f.retrain.test_accuracy) : nlohmann::json();
        j["final"] = std::move(fin);
    } else {
        j["final"] = nullptr;
    }
    return j;
}

std::string generations_csv(const RunReport& report) {
    std::ostringstream os;
    os << "generation,best,mean,min,best_so_far,best_num_seq,best_num_par,trained,best_genotype\n";
    for (const GenerationRow& r : report.generations) {
        os << r.generation << ',' << format_real(r.best) << ',' << format_real(r.mean) << ',' << format_real(r.min)
           << ',' << format_real(r.best_so_far) << ',' << r.best_num_seq << ',' << r.best_num_par << ',' << r.trained
           << ",\"" << r.best_genotype << "\"\n";
    }
    return os.str();
}

nlohmann::json state_to_json(const EvolutionState& state) {
    nlohmann::json j{{"format", "gpdense-checkpoint"},
                     {"version", 1},
                     {"generation", state.generation},
                     {"config", state.config},
                     {"rng", state.rng}};
    j["population"] = nlohmann::json::array();
    for (const Individual& ind : state.population) j["population"].push_back(individual_to_json(ind));
    j["cache"] = nlohmann::json::array();
    for (const auto& [id, rec] : state.cache) j["cache"].push_back({{"id", id}, {"record", record_to_json(rec)}});
    j["rows"] = nlohmann::json::array();
    for (const GenerationRow& row : state.rows) j["rows"].push_back(row_to_json(row));
    return j;
}

EvolutionState state_from_json(const nlohmann::json& j) {
    if (j.at("format") != "gpdense-checkpoint" || j.at("version") != 1)
        throw std::runtime_error("not a gpdense checkpoint (or unsupported version)");
    EvolutionState st;
    st.generation = j.at("generation");
    st.config = j.at("config");
    st.rng = j.at("rng");
    for (const auto& e : j.at("population")) st.population.push_back(individual_from_json(e));
    for (const auto& e : j.at("cache")) st.cache.emplace(e.at("id").get<std::string>(), record_from_json(e.at("record")));
    for (const auto& e : j.at("rows")) st.rows.push_back(row_from_json(e));
    return st;
}

}  // namespace gpdense
