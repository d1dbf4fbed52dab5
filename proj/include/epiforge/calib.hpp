#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "epiforge/simcore.hpp"

namespace epiforge::calib {

// One region-season of weekly surveillance counts, already ordered by
// seasonal week (sw(1) first).
struct SurveillanceSeries {
    std::string region;
    std::string season;
    std::vector<double> weekly_counts;
    std::int64_t population = 0;
    double surveillance_ratio = 1.0;

    void validate() const;
};

struct CalibrationSample {
    std::string region;
    std::string season;
    double attack_rate = 0.0;
    double initial_cases = 0.0; // scaled sw(1) incidence
};

// Epidemiological week -> seasonal week under the fixed 52-week convention
// where ew(40) is sw(1).
int ew_to_sw(int ew);
int sw_to_ew(int sw);

// Counts divided by the surveillance ratio: estimated population incidence.
std::vector<double> scale_surveillance(const SurveillanceSeries& series);

// Season total over population, clamped to [0,1] (warns on stderr if >1).
double attack_rate(const std::vector<double>& weekly_totals, std::int64_t population);

std::vector<CalibrationSample> collect_samples(const std::string& target_region,
                                               const std::vector<SurveillanceSeries>& series);

struct NelderMeadOptions {
    double reflection = 1.0;
    double expansion = 2.0;
    double contraction = 0.5;
    double shrink = 0.5;
    double tolerance = 1e-12; // f-spread termination
    // Simplex diameter must also fall below this; guards against the
    // symmetric straddle where both vertices share one f value.
    double x_tolerance = 1e-7;
    int max_iterations = 500;
    // Initial simplex: each vertex offsets one coordinate by
    // step_relative*|x0_i| (step_absolute when x0_i == 0).
    double step_relative = 0.05;
    double step_absolute = 0.00025;
};

struct NelderMeadResult {
    std::vector<double> x;
    double f = 0.0;
    int iterations = 0;
    bool converged = false;
};

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& objective,
                             std::vector<double> x0, const NelderMeadOptions& options = {});

struct CalibrateOptions {
    int replicates = 5;
    int weeks = 52;
    double tau_lower = 1e-8;
    double tau_upper = 1e-2;
    double tau_start = 1e-5;
    int max_iterations = 80;
    // Residuals above this mark the result low-confidence.
    double residual_threshold = 0.1;
};

struct TauCalibration {
    double tau = 0.0;
    double residual = 0.0;    // achieved |mean AR - target|
    bool low_confidence = false;
};

// Recovers tau whose mean simulated attack rate over a fixed set of seeded
// replicates matches target_ar; searches in log(tau) by Nelder-Mead.
TauCalibration calibrate_tau(double target_ar, const net::ContactNetwork& network,
                             const sim::DiseaseParams& base_params, std::uint64_t seed,
                             const CalibrateOptions& options = {});

// Surveillance directory: meta.json (regions, populations, ratios, seasons)
// plus one <region>_<season>.csv per pair with rows ew,count.
std::vector<SurveillanceSeries> load_surveillance_dir(const std::filesystem::path& dir,
                                                      std::string* target_region_out = nullptr);

} // namespace epiforge::calib
