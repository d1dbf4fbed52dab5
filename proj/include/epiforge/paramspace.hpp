#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "epiforge/calib.hpp"
#include "epiforge/simcore.hpp"

namespace epiforge::pspace {

struct KsResult {
    double statistic = 0.0;
    double p_value = 0.0;
};

// One-sample two-sided Kolmogorov-Smirnov test against a reference CDF.
// Needs at least 5 samples. The p-value comes from the asymptotic Kolmogorov
// series with the usual effective-n correction; the asymptotics are only
// nominal below n ~ 35.
KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& reference_cdf);

// Q(lambda) = 2 * sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2), 100 terms.
double kolmogorov_survival(double lambda);

struct Marginal {
    enum class Kind { Normal, Uniform };
    Kind kind = Kind::Normal;
    double mean = 0.0, sd = 1.0; // Normal
    double lo = 0.0, hi = 1.0;   // Uniform
    std::optional<double> fitted_p_value;

    void validate() const;
    double sample(Rng& rng) const;
    double cdf(double x) const;
};

// Fits Normal (moment estimates) and Uniform (min/max widened by 1% of the
// range) candidates and keeps the one the KS test likes best.
Marginal fit_marginal(const std::vector<double>& samples);

struct ParamSpace {
    sim::DurationDistribution incubation;        // p_E, fixed
    sim::DurationDistribution infectious_period; // p_I, fixed
    Marginal tau;
    Marginal initial_cases; // N_I; draws are rounded to nonnegative integers
    std::vector<sim::VaccineSchedule> schedules; // empty = no vaccination
};

// Default duration distributions used by the calibration procedure.
sim::DurationDistribution default_incubation();
sim::DurationDistribution default_infectious_period();

ParamSpace build_space(const std::vector<calib::CalibrationSample>& samples,
                       const std::vector<double>& tau_samples,
                       const std::vector<sim::VaccineSchedule>& schedules);

// Independent draw from every marginal. tau is redrawn until positive;
// N_I is rounded and clamped to [0, population_cap] when a cap is given.
sim::DiseaseParams sample_params(const ParamSpace& space, Rng& rng,
                                 std::int64_t population_cap = -1);

void save_space(const ParamSpace& space, const std::filesystem::path& file);
ParamSpace load_space(const std::filesystem::path& file);

std::vector<sim::VaccineSchedule> schedules_from_json_file(const std::filesystem::path& file);

} // namespace epiforge::pspace
