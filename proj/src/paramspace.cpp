#include "epiforge/paramspace.hpp"

#include <algorithm>
#include <cmath>

#include "epiforge/errors.hpp"
#include "epiforge/io.hpp"

namespace epiforge::pspace {

double kolmogorov_survival(double lambda) {
    if (lambda <= 0.0) return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 == 1 ? term : -term);
        if (term < 1e-18) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& reference_cdf) {
    const std::size_t n = samples.size();
    if (n < 5)
        throw DataError("ks_test: need at least 5 samples, got " + std::to_string(n));
    std::sort(samples.begin(), samples.end());

    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double f = reference_cdf(samples[i]);
        const double above = static_cast<double>(i + 1) / n - f;
        const double below = f - static_cast<double>(i) / n;
        d = std::max({d, above, below});
    }

    const double sqrt_n = std::sqrt(static_cast<double>(n));
    const double lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    return {d, kolmogorov_survival(lambda)};
}

void Marginal::validate() const {
    if (kind == Kind::Normal) {
        if (sd <= 0) throw ConfigError("normal marginal: sd must be positive");
    } else {
        if (lo >= hi) throw ConfigError("uniform marginal: need lo < hi");
    }
}

double Marginal::sample(Rng& rng) const {
    return kind == Kind::Normal ? rng.normal(mean, sd) : rng.uniform(lo, hi);
}

double Marginal::cdf(double x) const {
    if (kind == Kind::Normal) {
        return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0)));
    }
    if (x <= lo) return 0.0;
    if (x >= hi) return 1.0;
    return (x - lo) / (hi - lo);
}

Marginal fit_marginal(const std::vector<double>& samples) {
    const std::size_t n = samples.size();
    if (n < 5) throw DataError("fit_marginal: need at least 5 samples, got " + std::to_string(n));

    const auto [min_it, max_it] = std::minmax_element(samples.begin(), samples.end());
    if (*min_it == *max_it)
        throw DataError("fit_marginal: all samples identical (" + io::format_double(*min_it) +
                        "); widen the sample set");

    double mean = 0.0;
    for (double x : samples) mean += x;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double x : samples) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    Marginal normal;
    normal.kind = Marginal::Kind::Normal;
    normal.mean = mean;
    normal.sd = sd;

    // Widen by 1% of range so the observed extremes sit strictly inside.
    const double range = *max_it - *min_it;
    Marginal uniform;
    uniform.kind = Marginal::Kind::Uniform;
    uniform.lo = *min_it - 0.01 * range;
    uniform.hi = *max_it + 0.01 * range;

    Marginal best;
    double best_p = -1.0;
    for (auto& candidate : {normal, uniform}) {
        const auto ks = ks_test(samples, [&](double x) { return candidate.cdf(x); });
        if (ks.p_value > best_p) {
            best = candidate;
            best_p = ks.p_value;
        }
    }
    best.fitted_p_value = best_p;
    return best;
}

sim::DurationDistribution default_incubation() {
    return {{1, 2, 3}, {0.3, 0.5, 0.2}};
}

sim::DurationDistribution default_infectious_period() {
    return {{3, 4, 5, 6}, {0.3, 0.4, 0.2, 0.1}};
}

ParamSpace build_space(const std::vector<calib::CalibrationSample>& samples,
                       const std::vector<double>& tau_samples,
                       const std::vector<sim::VaccineSchedule>& schedules) {
    if (samples.empty()) throw ConfigError("build_space: no calibration samples");
    if (tau_samples.empty()) throw ConfigError("build_space: no tau samples");

    ParamSpace space;
    space.incubation = default_incubation();
    space.infectious_period = default_infectious_period();
    space.tau = fit_marginal(tau_samples);

    std::vector<double> initial_cases;
    initial_cases.reserve(samples.size());
    for (const auto& s : samples) initial_cases.push_back(s.initial_cases);
    space.initial_cases = fit_marginal(initial_cases);

    for (const auto& s : schedules) s.validate();
    space.schedules = schedules;
    return space;
}

sim::DiseaseParams sample_params(const ParamSpace& space, Rng& rng, std::int64_t population_cap) {
    sim::DiseaseParams params;
    params.incubation = space.incubation;
    params.infectious_period = space.infectious_period;

    double tau = space.tau.sample(rng);
    while (tau <= 0.0) tau = space.tau.sample(rng);
    params.tau = tau;

    auto cases = static_cast<std::int64_t>(std::llround(space.initial_cases.sample(rng)));
    cases = std::max<std::int64_t>(cases, 0);
    if (population_cap >= 0) cases = std::min(cases, population_cap);
    params.initial_infectious = cases;

    if (!space.schedules.empty())
        params.vaccine = space.schedules[rng.below(space.schedules.size())];
    return params;
}

namespace {

nlohmann::json marginal_to_json(const Marginal& m) {
    nlohmann::json j;
    if (m.kind == Marginal::Kind::Normal) {
        j["kind"] = "normal";
        j["mean"] = m.mean;
        j["sd"] = m.sd;
    } else {
        j["kind"] = "uniform";
        j["lo"] = m.lo;
        j["hi"] = m.hi;
    }
    if (m.fitted_p_value) j["p_value"] = *m.fitted_p_value;
    return j;
}

Marginal marginal_from_json(const nlohmann::json& j) {
    Marginal m;
    const std::string kind = j.at("kind");
    if (kind == "normal") {
        m.kind = Marginal::Kind::Normal;
        m.mean = j.at("mean").get<double>();
        m.sd = j.at("sd").get<double>();
    } else if (kind == "uniform") {
        m.kind = Marginal::Kind::Uniform;
        m.lo = j.at("lo").get<double>();
        m.hi = j.at("hi").get<double>();
    } else {
        throw ConfigError("unknown marginal kind '" + kind + "'");
    }
    if (j.contains("p_value")) m.fitted_p_value = j.at("p_value").get<double>();
    m.validate();
    return m;
}

nlohmann::json schedule_to_json(const sim::VaccineSchedule& s) {
    nlohmann::json coverage = nlohmann::json::object();
    for (const auto& [week, c] : s.weekly_coverage) coverage[std::to_string(week)] = c;
    return {{"efficacy", s.efficacy}, {"compliance", s.compliance}, {"weekly_coverage", coverage}};
}

sim::VaccineSchedule schedule_from_json(const nlohmann::json& j) {
    sim::VaccineSchedule s;
    s.efficacy = j.at("efficacy").get<double>();
    s.compliance = j.value("compliance", 1.0);
    for (const auto& [week, c] : j.at("weekly_coverage").items())
        s.weekly_coverage[std::stoi(week)] = c.get<double>();
    s.validate();
    return s;
}

} // namespace

void save_space(const ParamSpace& space, const std::filesystem::path& file) {
    nlohmann::json j;
    j["p_E"] = {{"support", space.incubation.support}, {"probs", space.incubation.probabilities}};
    j["p_I"] = {{"support", space.infectious_period.support},
                {"probs", space.infectious_period.probabilities}};
    j["tau"] = marginal_to_json(space.tau);
    j["N_I"] = marginal_to_json(space.initial_cases);
    j["vaccine_schedules"] = nlohmann::json::array();
    for (const auto& s : space.schedules) j["vaccine_schedules"].push_back(schedule_to_json(s));
    io::write_json(file, j);
}

ParamSpace load_space(const std::filesystem::path& file) {
    const auto j = io::read_json(file);
    ParamSpace space;
    try {
        space.incubation.support = j.at("p_E").at("support").get<std::vector<int>>();
        space.incubation.probabilities = j.at("p_E").at("probs").get<std::vector<double>>();
        space.infectious_period.support = j.at("p_I").at("support").get<std::vector<int>>();
        space.infectious_period.probabilities = j.at("p_I").at("probs").get<std::vector<double>>();
        space.tau = marginal_from_json(j.at("tau"));
        space.initial_cases = marginal_from_json(j.at("N_I"));
        for (const auto& s : j.at("vaccine_schedules")) space.schedules.push_back(schedule_from_json(s));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("param space " + file.string() + ": " + e.what());
    }
    space.incubation.validate();
    space.infectious_period.validate();
    return space;
}

std::vector<sim::VaccineSchedule> schedules_from_json_file(const std::filesystem::path& file) {
    const auto j = io::read_json(file);
    std::vector<sim::VaccineSchedule> schedules;
    try {
        for (const auto& s : j.is_array() ? j : j.at("schedules"))
            schedules.push_back(schedule_from_json(s));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("schedules file " + file.string() + ": " + e.what());
    }
    return schedules;
}

} // namespace epiforge::pspace
