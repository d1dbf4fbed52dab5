#include "epiforge/simcore.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "epiforge/errors.hpp"
#include "epiforge/io.hpp"

namespace epiforge::sim {

void DurationDistribution::validate() const {
    if (support.empty() || support.size() != probabilities.size())
        throw ConfigError("duration distribution: support and probabilities must match and be nonempty");
    double total = 0.0;
    for (std::size_t i = 0; i < support.size(); ++i) {
        if (support[i] < 1) throw ConfigError("duration distribution: days must be >= 1");
        for (std::size_t j = i + 1; j < support.size(); ++j)
            if (support[i] == support[j])
                throw ConfigError("duration distribution: duplicate support value " +
                                  std::to_string(support[i]));
        if (probabilities[i] < 0 || probabilities[i] > 1)
            throw ConfigError("duration distribution: probabilities must be in [0,1]");
        total += probabilities[i];
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw ConfigError("duration distribution: probabilities sum to " + io::format_double(total));
}

int DurationDistribution::sample(Rng& rng) const {
    return support[rng.discrete(probabilities)];
}

double DurationDistribution::mean() const {
    double m = 0.0;
    for (std::size_t i = 0; i < support.size(); ++i) m += support[i] * probabilities[i];
    return m;
}

void VaccineSchedule::validate() const {
    double total = 0.0;
    for (const auto& [week, c] : weekly_coverage) {
        if (week < 0) throw ConfigError("vaccine schedule: negative week " + std::to_string(week));
        if (c < 0 || c > 1) throw ConfigError("vaccine schedule: coverage must be in [0,1]");
        total += c;
    }
    if (total > 1.0 + 1e-9) throw ConfigError("vaccine schedule: total coverage exceeds 1");
    if (efficacy < 0 || efficacy > 1) throw ConfigError("vaccine schedule: efficacy must be in [0,1]");
    if (compliance < 0 || compliance > 1) throw ConfigError("vaccine schedule: compliance must be in [0,1]");
}

double VaccineSchedule::coverage(int week) const {
    const auto it = weekly_coverage.find(week);
    return it == weekly_coverage.end() ? 0.0 : it->second;
}

void Scenario::validate() const {
    for (const auto& [week, m] : tau_multipliers) {
        if (week < 0) throw ConfigError("scenario: negative week " + std::to_string(week));
        if (m < 0) throw ConfigError("scenario: multipliers must be >= 0");
    }
}

double Scenario::multiplier(int week) const {
    const auto it = tau_multipliers.find(week);
    return it == tau_multipliers.end() ? 1.0 : it->second;
}

void DiseaseParams::validate(std::int64_t population) const {
    incubation.validate();
    infectious_period.validate();
    if (tau <= 0) throw ConfigError("disease params: tau must be positive");
    if (initial_infectious < 0)
        throw ConfigError("disease params: initial_infectious must be >= 0");
    if (initial_infectious > population)
        throw DataError("disease params: initial_infectious " + std::to_string(initial_infectious) +
                        " exceeds population " + std::to_string(population));
    if (vaccine) vaccine->validate();
    if (scenario) scenario->validate();
}

Epicurve::Epicurve(int weeks, int counties)
    : weeks_(weeks), counties_(counties),
      values_(static_cast<std::size_t>(weeks) * (counties + 1), 0.0) {
    if (weeks < 1 || counties < 1) throw ConfigError("epicurve needs weeks >= 1 and counties >= 1");
}

double Epicurve::at(int week, int column) const {
    if (week < 0 || week >= weeks_ || column < 0 || column > counties_)
        throw DataError("epicurve index (" + std::to_string(week) + "," + std::to_string(column) +
                        ") out of range");
    return values_[static_cast<std::size_t>(week) * columns() + column];
}

double& Epicurve::at(int week, int column) {
    if (week < 0 || week >= weeks_ || column < 0 || column > counties_)
        throw DataError("epicurve index (" + std::to_string(week) + "," + std::to_string(column) +
                        ") out of range");
    return values_[static_cast<std::size_t>(week) * columns() + column];
}

void Epicurve::refresh_state_column() {
    for (int t = 0; t < weeks_; ++t) {
        double sum = 0.0;
        for (int c = 1; c <= counties_; ++c) sum += at(t, c);
        at(t, 0) = sum;
    }
}

double Epicurve::total_state() const {
    double total = 0.0;
    for (int t = 0; t < weeks_; ++t) total += at(t, 0);
    return total;
}

std::vector<double> Epicurve::state_series() const {
    std::vector<double> series(weeks_);
    for (int t = 0; t < weeks_; ++t) series[t] = at(t, 0);
    return series;
}

void Epicurve::save_csv(const std::filesystem::path& path) const {
    std::ostringstream out;
    out << "week,state";
    for (int c = 1; c <= counties_; ++c) out << ",county_" << c;
    out << "\n";
    for (int t = 0; t < weeks_; ++t) {
        out << (t + 1);
        for (int c = 0; c <= counties_; ++c) out << "," << io::format_double(at(t, c));
        out << "\n";
    }
    io::write_file(path, out.str());
}

Epicurve Epicurve::load_csv(const std::filesystem::path& path) {
    const auto lines = io::split_lines(io::read_file(path));
    if (lines.size() < 2) throw DataError("epicurve csv too short: " + path.string());
    const auto header = io::split(lines[0], ',');
    if (header.size() < 3 || header[0] != "week" || header[1] != "state")
        throw DataError("epicurve csv header must be week,state,county_1..: " + path.string());
    const int counties = static_cast<int>(header.size()) - 2;
    Epicurve curve(static_cast<int>(lines.size()) - 1, counties);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto fields = io::split(lines[i], ',');
        if (fields.size() != header.size())
            throw DataError("epicurve csv row width mismatch at line " + std::to_string(i + 1));
        for (int c = 0; c <= counties; ++c)
            curve.at(static_cast<int>(i) - 1, c) = io::parse_double(fields[c + 1]);
    }
    return curve;
}

double transmission_probability(double tau, double minutes, double multiplier) {
    const double rate = std::min(tau * multiplier, 1.0);
    if (rate <= 0.0) return 0.0;
    if (rate >= 1.0) return 1.0;
    // Complement via expm1/log1p keeps precision at small rates.
    const double p = -std::expm1(minutes * std::log1p(-rate));
    return std::clamp(p, 0.0, 1.0);
}

AgentState AgentState::all_susceptible(std::int64_t n) {
    AgentState state;
    state.compartment.assign(n, Compartment::S);
    state.days_left.assign(n, 0);
    state.vaccinated.assign(n, 0);
    return state;
}

std::array<std::int64_t, 4> AgentState::counts() const {
    std::array<std::int64_t, 4> out{0, 0, 0, 0};
    for (auto c : compartment) ++out[static_cast<std::size_t>(c)];
    return out;
}

std::vector<std::int64_t> step_day(AgentState& state, const net::ContactNetwork& network,
                                   const DiseaseParams& params, int day, Rng& rng) {
    const auto n = network.n_persons();
    if (static_cast<std::int64_t>(state.compartment.size()) != n)
        throw DataError("agent state size does not match network population");

    const int week = day / 7;
    const double multiplier = params.scenario ? params.scenario->multiplier(week) : 1.0;
    const double efficacy = params.vaccine ? params.vaccine->efficacy : 0.0;

    std::vector<std::int64_t> new_by_county(network.n_counties(), 0);
    std::vector<std::int32_t> newly_exposed;
    std::vector<std::uint8_t> marked(n, 0);

    // Transmission trials against the day-start snapshot. Compartments are
    // untouched until the progression phase, so every infectious person sees
    // the same susceptible set regardless of iteration order.
    if (multiplier > 0.0) {
        for (std::int32_t u = 0; u < n; ++u) {
            if (state.compartment[u] != Compartment::I) continue;
            for (const auto& [v, weight] : network.neighbors(u)) {
                if (state.compartment[v] != Compartment::S || marked[v]) continue;
                const double tau_v = state.vaccinated[v] ? params.tau * (1.0 - efficacy) : params.tau;
                if (rng.uniform01() < transmission_probability(tau_v, weight, multiplier)) {
                    marked[v] = 1;
                    newly_exposed.push_back(v);
                }
            }
        }
    }

    // Progression: decrement counters, promote E->I and I->R.
    for (std::int64_t p = 0; p < n; ++p) {
        switch (state.compartment[p]) {
        case Compartment::E:
            if (--state.days_left[p] == 0) {
                state.compartment[p] = Compartment::I;
                state.days_left[p] = static_cast<std::int16_t>(params.infectious_period.sample(rng));
            }
            break;
        case Compartment::I:
            if (--state.days_left[p] == 0) state.compartment[p] = Compartment::R;
            break;
        default:
            break;
        }
    }

    for (auto v : newly_exposed) {
        state.compartment[v] = Compartment::E;
        state.days_left[v] = static_cast<std::int16_t>(params.incubation.sample(rng));
        ++new_by_county[network.county_of(v)];
    }
    return new_by_county;
}

std::int64_t apply_vaccine_week(AgentState& state, const VaccineSchedule& schedule, int week,
                                Rng& rng) {
    const double coverage = schedule.coverage(week);
    if (coverage <= 0.0) return 0;
    const auto n = static_cast<std::int64_t>(state.vaccinated.size());
    // Tolerant floor so exact products like 0.5*0.6*1000 do not lose a unit.
    auto target = static_cast<std::int64_t>(
        std::floor(coverage * static_cast<double>(n) * schedule.compliance + 1e-9));

    std::vector<std::int32_t> pool;
    pool.reserve(n);
    for (std::int32_t p = 0; p < n; ++p)
        if (!state.vaccinated[p]) pool.push_back(p);
    target = std::min<std::int64_t>(target, static_cast<std::int64_t>(pool.size()));

    for (std::int64_t j = 0; j < target; ++j) {
        const auto pick = j + static_cast<std::int64_t>(rng.below(pool.size() - j));
        std::swap(pool[j], pool[pick]);
        state.vaccinated[pool[j]] = 1;
    }
    return target;
}

Epicurve run_simulation(const net::ContactNetwork& network, const DiseaseParams& params, int weeks,
                        std::uint64_t seed) {
    if (weeks < 1) throw ConfigError("run_simulation: weeks must be >= 1");
    params.validate(network.n_persons());

    const auto n = network.n_persons();
    Rng rng(substream(seed, streams::simulate));
    AgentState state = AgentState::all_susceptible(n);

    // Seed initial infectious persons uniformly without replacement.
    std::vector<std::int32_t> ids(n);
    for (std::int64_t p = 0; p < n; ++p) ids[p] = static_cast<std::int32_t>(p);
    for (std::int64_t j = 0; j < params.initial_infectious; ++j) {
        const auto pick = j + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - j)));
        std::swap(ids[j], ids[pick]);
        state.compartment[ids[j]] = Compartment::I;
        state.days_left[ids[j]] = static_cast<std::int16_t>(params.infectious_period.sample(rng));
    }

    Epicurve curve(weeks, network.n_counties());
    for (int day = 0; day < 7 * weeks; ++day) {
        const int week = day / 7;
        if (day % 7 == 0 && params.vaccine) apply_vaccine_week(state, *params.vaccine, week, rng);
        const auto exposures = step_day(state, network, params, day, rng);
        for (int c = 0; c < network.n_counties(); ++c)
            curve.at(week, c + 1) += static_cast<double>(exposures[c]);
    }
    curve.refresh_state_column();
    return curve;
}

double simulated_attack_rate(const Epicurve& curve, std::int64_t population) {
    if (population <= 0) throw ConfigError("attack rate: population must be positive");
    return std::clamp(curve.total_state() / static_cast<double>(population), 0.0, 1.0);
}

namespace {

nlohmann::json duration_to_json(const DurationDistribution& d) {
    return {{"support", d.support}, {"probs", d.probabilities}};
}

DurationDistribution duration_from_json(const nlohmann::json& j) {
    DurationDistribution d;
    d.support = j.at("support").get<std::vector<int>>();
    d.probabilities = j.at("probs").get<std::vector<double>>();
    d.validate();
    return d;
}

std::map<int, double> week_map_from_json(const nlohmann::json& j) {
    std::map<int, double> out;
    for (const auto& [key, value] : j.items()) out[std::stoi(key)] = value.get<double>();
    return out;
}

nlohmann::json week_map_to_json(const std::map<int, double>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [week, value] : m) j[std::to_string(week)] = value;
    return j;
}

} // namespace

void params_to_json(const DiseaseParams& params, nlohmann::json& j) {
    j["p_E"] = duration_to_json(params.incubation);
    j["p_I"] = duration_to_json(params.infectious_period);
    j["tau"] = params.tau;
    j["N_I"] = params.initial_infectious;
    if (params.vaccine) {
        j["vaccine"] = {{"efficacy", params.vaccine->efficacy},
                        {"compliance", params.vaccine->compliance},
                        {"weekly_coverage", week_map_to_json(params.vaccine->weekly_coverage)}};
    }
    if (params.scenario) {
        j["scenario"] = {{"label", params.scenario->label},
                         {"tau_multipliers", week_map_to_json(params.scenario->tau_multipliers)}};
    }
}

DiseaseParams params_from_json(const nlohmann::json& j) {
    DiseaseParams params;
    try {
        params.incubation = duration_from_json(j.at("p_E"));
        params.infectious_period = duration_from_json(j.at("p_I"));
        params.tau = j.at("tau").get<double>();
        params.initial_infectious = j.at("N_I").get<std::int64_t>();
        if (j.contains("vaccine") && !j.at("vaccine").is_null()) {
            VaccineSchedule schedule;
            schedule.efficacy = j.at("vaccine").at("efficacy").get<double>();
            schedule.compliance = j.at("vaccine").value("compliance", 1.0);
            schedule.weekly_coverage = week_map_from_json(j.at("vaccine").at("weekly_coverage"));
            params.vaccine = schedule;
        }
        if (j.contains("scenario") && !j.at("scenario").is_null()) {
            Scenario scenario;
            scenario.label = j.at("scenario").value("label", "");
            scenario.tau_multipliers = week_map_from_json(j.at("scenario").at("tau_multipliers"));
            params.scenario = scenario;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("disease params json: ") + e.what());
    }
    return params;
}

DiseaseParams params_from_file(const std::filesystem::path& file) {
    return params_from_json(io::read_json(file));
}

} // namespace epiforge::sim
