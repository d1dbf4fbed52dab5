#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "epiforge/paramspace.hpp"
#include "epiforge/simcore.hpp"

namespace epiforge::data {

struct Provenance {
    sim::DiseaseParams params;
    std::uint64_t seed = 0;
};

struct Split {
    std::vector<int> train, validate, test;
};

// 80/15/5 by curve index; remainders land in the test slice.
Split default_split(int runs);

struct Dataset {
    std::vector<sim::Epicurve> curves;
    std::vector<Provenance> provenance;
    Split split;

    int weeks() const { return curves.empty() ? 0 : curves.front().weeks(); }
    int counties() const { return curves.empty() ? 0 : curves.front().counties(); }
};

// Algorithm: for each run, sample a parameter setting from the space and
// simulate one season. Per-curve seeds derive from the master seed so runs
// are independent and reproducible in isolation.
Dataset generate_dataset(const pspace::ParamSpace& space, const net::ContactNetwork& network,
                         int runs, int weeks, const std::optional<sim::Scenario>& scenario,
                         std::uint64_t master_seed, int jobs = 1);

// Per-week multipliers multiply; labels concatenate.
sim::Scenario stack_scenarios(const sim::Scenario& base, const sim::Scenario& extra);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

sim::Scenario scenario_from_file(const std::filesystem::path& file);

} // namespace epiforge::data
