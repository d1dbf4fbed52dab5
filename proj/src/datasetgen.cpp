#include "epiforge/datasetgen.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <thread>

#include "epiforge/errors.hpp"
#include "epiforge/io.hpp"

namespace epiforge::data {

Split default_split(int runs) {
    Split split;
    const int n_train = static_cast<int>(std::floor(0.80 * runs));
    const int n_validate = static_cast<int>(std::floor(0.15 * runs));
    for (int i = 0; i < runs; ++i) {
        if (i < n_train)
            split.train.push_back(i);
        else if (i < n_train + n_validate)
            split.validate.push_back(i);
        else
            split.test.push_back(i);
    }
    return split;
}

sim::Scenario stack_scenarios(const sim::Scenario& base, const sim::Scenario& extra) {
    sim::Scenario out = base;
    for (const auto& [week, m] : extra.tau_multipliers) {
        const auto it = out.tau_multipliers.find(week);
        if (it == out.tau_multipliers.end())
            out.tau_multipliers[week] = m;
        else
            it->second *= m;
    }
    if (base.label.empty())
        out.label = extra.label;
    else if (!extra.label.empty())
        out.label = base.label + "+" + extra.label;
    return out;
}

Dataset generate_dataset(const pspace::ParamSpace& space, const net::ContactNetwork& network,
                         int runs, int weeks, const std::optional<sim::Scenario>& scenario,
                         std::uint64_t master_seed, int jobs) {
    if (runs < 1) throw ConfigError("generate_dataset: runs must be >= 1");
    if (weeks < 1) throw ConfigError("generate_dataset: weeks must be >= 1");

    Dataset dataset;
    dataset.curves.resize(runs);
    dataset.provenance.resize(runs);
    dataset.split = default_split(runs);

    // Each run is self-contained: its sampling and simulation streams come
    // from (master_seed, i) only, so results are identical at any job count.
    auto run_one = [&](int i) {
        Rng sampler(substream(master_seed, streams::sample, static_cast<std::uint64_t>(i)));
        sim::DiseaseParams params = pspace::sample_params(space, sampler, network.n_persons());
        if (scenario) params.scenario = params.scenario ? stack_scenarios(*params.scenario, *scenario)
                                                        : *scenario;
        const std::uint64_t curve_seed = substream(master_seed, streams::curve, static_cast<std::uint64_t>(i));
        dataset.curves[i] = sim::run_simulation(network, params, weeks, curve_seed);
        dataset.provenance[i] = {std::move(params), curve_seed};
    };

    if (jobs <= 1) {
        for (int i = 0; i < runs; ++i) {
            try {
                run_one(i);
            } catch (const std::exception& e) {
                throw DataError("dataset generation failed at curve " + std::to_string(i) + ": " +
                                e.what());
            }
        }
    } else {
        std::atomic<int> next{0};
        std::atomic<int> failed{-1};
        std::string first_error;
        std::mutex error_mutex;
        auto worker = [&] {
            for (int i = next.fetch_add(1); i < runs; i = next.fetch_add(1)) {
                if (failed.load() >= 0) return;
                try {
                    run_one(i);
                } catch (const std::exception& e) {
                    std::scoped_lock lock(error_mutex);
                    int expected = -1;
                    if (failed.compare_exchange_strong(expected, i)) first_error = e.what();
                    return;
                }
            }
        };
        std::vector<std::thread> threads;
        for (int t = 0; t < jobs; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
        if (failed.load() >= 0)
            throw DataError("dataset generation failed at curve " + std::to_string(failed.load()) +
                            ": " + first_error);
    }
    return dataset;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["runs"] = dataset.curves.size();
    manifest["weeks"] = dataset.weeks();
    manifest["counties"] = dataset.counties();
    manifest["split"] = {{"train", dataset.split.train},
                         {"validate", dataset.split.validate},
                         {"test", dataset.split.test}};
    manifest["curves"] = nlohmann::json::array();
    for (std::size_t i = 0; i < dataset.curves.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "curve_%05zu.csv", i);
        dataset.curves[i].save_csv(dir / name);
        nlohmann::json entry;
        entry["file"] = name;
        entry["seed"] = dataset.provenance[i].seed;
        nlohmann::json params;
        sim::params_to_json(dataset.provenance[i].params, params);
        entry["params"] = params;
        manifest["curves"].push_back(std::move(entry));
    }
    io::write_json(dir / "manifest.json", manifest);
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest = io::read_json(dir / "manifest.json");
    Dataset dataset;
    try {
        dataset.split.train = manifest.at("split").at("train").get<std::vector<int>>();
        dataset.split.validate = manifest.at("split").at("validate").get<std::vector<int>>();
        dataset.split.test = manifest.at("split").at("test").get<std::vector<int>>();
        for (const auto& entry : manifest.at("curves")) {
            dataset.curves.push_back(
                sim::Epicurve::load_csv(dir / entry.at("file").get<std::string>()));
            Provenance prov;
            prov.seed = entry.at("seed").get<std::uint64_t>();
            prov.params = sim::params_from_json(entry.at("params"));
            dataset.provenance.push_back(std::move(prov));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("dataset manifest " + dir.string() + ": " + e.what());
    }
    if (dataset.curves.empty()) throw DataError("dataset " + dir.string() + " has no curves");
    return dataset;
}

sim::Scenario scenario_from_file(const std::filesystem::path& file) {
    const auto j = io::read_json(file);
    auto parse_one = [](const nlohmann::json& s) {
        sim::Scenario scenario;
        scenario.label = s.value("label", "");
        for (const auto& [week, m] : s.at("tau_multipliers").items())
            scenario.tau_multipliers[std::stoi(week)] = m.get<double>();
        scenario.validate();
        return scenario;
    };
    try {
        if (j.contains("scenarios")) {
            sim::Scenario stacked;
            for (const auto& s : j.at("scenarios")) stacked = stack_scenarios(stacked, parse_one(s));
            return stacked;
        }
        return parse_one(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("scenario file " + file.string() + ": " + e.what());
    }
}

} // namespace epiforge::data
