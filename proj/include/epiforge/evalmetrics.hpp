#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "epiforge/simcore.hpp"

namespace epiforge::metrics {

double rmse(std::span<const double> y, std::span<const double> y_hat);

// Mean absolute percentage error with the denominator smoothed by 1.
double mape(std::span<const double> y, std::span<const double> y_hat);

// Pearson correlation; empty when either side has zero variance.
std::optional<double> pcorr(std::span<const double> y, std::span<const double> y_hat);

// Per-county, per-horizon metric values (horizon index 0 = one week ahead).
struct MetricSet {
    std::vector<std::vector<double>> rmse_values;             // [county][horizon]
    std::vector<std::vector<double>> mape_values;             // [county][horizon]
    std::vector<std::vector<std::optional<double>>> pcorr_values;
};

struct RatioEntry {
    std::optional<double> rmse_ratio;
    std::optional<double> mape_ratio;
    std::optional<double> pcorr_ratio;
};

// Horizon-averaged ratios per county with A in the favored position:
// rmse_ratio = mean_h RMSE_B / mean_h RMSE_A (likewise MAPE), and
// pcorr_ratio = mean_h (PCORR_A + 1) / mean_h (PCORR_B + 1).
std::vector<RatioEntry> ratio_report(const MetricSet& a, const MetricSet& b);

// forecasts: issue week -> horizon x (K+1) predictions; the horizon-h row of
// the forecast issued at week t is scored against truth week t+h.
struct EvalReport {
    int horizons = 0;
    int counties = 0;
    // state column, indexed by horizon
    std::vector<double> state_rmse, state_mape;
    std::vector<std::optional<double>> state_pcorr;
    // per issue week, averaged over horizons (state column)
    std::map<int, double> week_rmse, week_mape;
    MetricSet counties_by_horizon; // county columns only, [county][horizon]
    int skipped_weeks = 0;         // issue weeks with no scorable horizon
};

EvalReport evaluate_run(const sim::Epicurve& truth, const std::map<int, Eigen::MatrixXd>& forecasts);

void save_report(const EvalReport& report, const std::filesystem::path& dir);
MetricSet load_metric_set(const std::filesystem::path& per_county_csv);

} // namespace epiforge::metrics
