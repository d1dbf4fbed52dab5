#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "epiforge/netgen.hpp"
#include "epiforge/rng.hpp"

namespace epiforge::sim {

enum class Compartment : std::uint8_t { S = 0, E = 1, I = 2, R = 3 };

// Discrete distribution over whole-day durations, e.g. {1:0.3, 2:0.5, 3:0.2}.
struct DurationDistribution {
    std::vector<int> support;
    std::vector<double> probabilities;

    void validate() const;
    int sample(Rng& rng) const;
    double mean() const;
};

// Weekly vaccination: fraction of the population newly covered per seasonal
// week. Efficacy reduces the acquisition probability of vaccinated persons.
struct VaccineSchedule {
    std::map<int, double> weekly_coverage; // sw week (0-based) -> fraction
    double efficacy = 0.0;
    double compliance = 1.0;

    void validate() const;
    double coverage(int week) const;
};

// What-if intervention: per-week multipliers applied to tau.
struct Scenario {
    std::map<int, double> tau_multipliers; // absent weeks default to 1
    std::string label;

    void validate() const;
    double multiplier(int week) const;
};

struct DiseaseParams {
    DurationDistribution incubation;       // p_E
    DurationDistribution infectious_period; // p_I
    double tau = 0.0;                      // per-minute transmission rate
    std::int64_t initial_infectious = 0;   // N_I
    std::optional<VaccineSchedule> vaccine;
    std::optional<Scenario> scenario;

    void validate(std::int64_t population) const;
};

// Weekly incidence, weeks x (K+1); column 0 is the state total, columns
// 1..K the counties.
class Epicurve {
public:
    Epicurve() = default;
    Epicurve(int weeks, int counties);

    int weeks() const { return weeks_; }
    int counties() const { return counties_; }
    int columns() const { return counties_ + 1; }

    double at(int week, int column) const;
    double& at(int week, int column);
    double state(int week) const { return at(week, 0); }

    // Recompute column 0 as the exact row sum of the county columns.
    void refresh_state_column();
    double total_state() const;
    std::vector<double> state_series() const;

    void save_csv(const std::filesystem::path& path) const;
    static Epicurve load_csv(const std::filesystem::path& path);

    bool operator==(const Epicurve&) const = default;

private:
    int weeks_ = 0;
    int counties_ = 0;
    std::vector<double> values_;
};

// 1 - (1 - min(tau*multiplier, 1))^minutes, clamped to [0,1].
double transmission_probability(double tau, double minutes, double multiplier = 1.0);

// Mutable per-person state of one simulation run.
struct AgentState {
    std::vector<Compartment> compartment;
    std::vector<std::int16_t> days_left;
    std::vector<std::uint8_t> vaccinated;

    static AgentState all_susceptible(std::int64_t n);
    std::array<std::int64_t, 4> counts() const;
};

// One synchronous day: transmission trials against the day-start snapshot,
// then E/I counter decrements and transitions, then new exposures enter E.
// Returns new S->E events per county.
std::vector<std::int64_t> step_day(AgentState& state, const net::ContactNetwork& network,
                                   const DiseaseParams& params, int day, Rng& rng);

// Marks floor(coverage*N*compliance) unvaccinated persons; returns how many.
std::int64_t apply_vaccine_week(AgentState& state, const VaccineSchedule& schedule, int week,
                                Rng& rng);

Epicurve run_simulation(const net::ContactNetwork& network, const DiseaseParams& params, int weeks,
                        std::uint64_t seed);

// Attack rate of a finished run: total incidence / population.
double simulated_attack_rate(const Epicurve& curve, std::int64_t population);

void params_to_json(const DiseaseParams& params, nlohmann::json& j);
DiseaseParams params_from_json(const nlohmann::json& j);
DiseaseParams params_from_file(const std::filesystem::path& file);

} // namespace epiforge::sim
