#include "epiforge/evalmetrics.hpp"

#include <cmath>
#include <sstream>

#include "epiforge/errors.hpp"
#include "epiforge/io.hpp"

namespace epiforge::metrics {

namespace {
void check_lengths(std::span<const double> y, std::span<const double> y_hat, std::size_t min_len) {
    if (y.size() != y_hat.size())
        throw DataError("metric length mismatch: " + std::to_string(y.size()) + " vs " +
                        std::to_string(y_hat.size()));
    if (y.size() < min_len)
        throw DataError("metric needs at least " + std::to_string(min_len) + " points");
}
} // namespace

double rmse(std::span<const double> y, std::span<const double> y_hat) {
    check_lengths(y, y_hat, 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y[i] - y_hat[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(y.size()));
}

double mape(std::span<const double> y, std::span<const double> y_hat) {
    check_lengths(y, y_hat, 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
        acc += std::abs((y[i] - y_hat[i]) / (y[i] + 1.0));
    return 100.0 * acc / static_cast<double>(y.size());
}

std::optional<double> pcorr(std::span<const double> y, std::span<const double> y_hat) {
    check_lengths(y, y_hat, 2);
    const auto n = static_cast<double>(y.size());
    double mean_y = 0.0, mean_h = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        mean_y += y[i];
        mean_h += y_hat[i];
    }
    mean_y /= n;
    mean_h /= n;
    double cov = 0.0, var_y = 0.0, var_h = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double dy = y[i] - mean_y;
        const double dh = y_hat[i] - mean_h;
        cov += dy * dh;
        var_y += dy * dy;
        var_h += dh * dh;
    }
    if (var_y == 0.0 || var_h == 0.0) return std::nullopt;
    return cov / std::sqrt(var_y * var_h);
}

std::vector<RatioEntry> ratio_report(const MetricSet& a, const MetricSet& b) {
    const std::size_t counties = a.rmse_values.size();
    if (b.rmse_values.size() != counties || a.mape_values.size() != counties ||
        b.mape_values.size() != counties || a.pcorr_values.size() != counties ||
        b.pcorr_values.size() != counties)
        throw DataError("ratio_report: metric sets cover different counties");

    std::vector<RatioEntry> out(counties);
    for (std::size_t c = 0; c < counties; ++c) {
        const std::size_t horizons = a.rmse_values[c].size();
        if (b.rmse_values[c].size() != horizons)
            throw DataError("ratio_report: horizon count mismatch at county " + std::to_string(c));
        auto mean = [&](const std::vector<double>& v) {
            double acc = 0.0;
            for (double x : v) acc += x;
            return acc / static_cast<double>(v.size());
        };
        const double rmse_a = mean(a.rmse_values[c]);
        const double rmse_b = mean(b.rmse_values[c]);
        const double mape_a = mean(a.mape_values[c]);
        const double mape_b = mean(b.mape_values[c]);
        if (rmse_a > 0.0) out[c].rmse_ratio = rmse_b / rmse_a;
        if (mape_a > 0.0) out[c].mape_ratio = mape_b / mape_a;

        // PCORR shifted by +1; undefined correlations poison the county.
        double shifted_a = 0.0, shifted_b = 0.0;
        bool defined = !a.pcorr_values[c].empty();
        for (std::size_t h = 0; h < a.pcorr_values[c].size(); ++h) {
            if (!a.pcorr_values[c][h] || h >= b.pcorr_values[c].size() || !b.pcorr_values[c][h]) {
                defined = false;
                break;
            }
            shifted_a += *a.pcorr_values[c][h] + 1.0;
            shifted_b += *b.pcorr_values[c][h] + 1.0;
        }
        if (defined && shifted_b > 0.0) out[c].pcorr_ratio = shifted_a / shifted_b;
    }
    return out;
}

EvalReport evaluate_run(const sim::Epicurve& truth, const std::map<int, Eigen::MatrixXd>& forecasts) {
    if (forecasts.empty()) throw DataError("evaluate_run: no forecasts given");
    const int counties = truth.counties();
    int horizons = 0;
    for (const auto& [week, matrix] : forecasts) {
        if (matrix.cols() != counties + 1)
            throw DataError("forecast at week " + std::to_string(week) + " has " +
                            std::to_string(matrix.cols()) + " columns, truth has " +
                            std::to_string(counties + 1));
        horizons = std::max(horizons, static_cast<int>(matrix.rows()));
    }

    EvalReport report;
    report.horizons = horizons;
    report.counties = counties;
    report.counties_by_horizon.rmse_values.assign(counties, {});
    report.counties_by_horizon.mape_values.assign(counties, {});
    report.counties_by_horizon.pcorr_values.assign(counties, {});

    // Per horizon and column: series over issue weeks.
    for (int h = 1; h <= horizons; ++h) {
        std::vector<std::vector<double>> y(counties + 1), y_hat(counties + 1);
        for (const auto& [week, matrix] : forecasts) {
            const int target = week + h;
            if (h > matrix.rows() || target >= truth.weeks() || target < 0) continue;
            for (int c = 0; c <= counties; ++c) {
                y[c].push_back(truth.at(target, c));
                y_hat[c].push_back(matrix(h - 1, c));
            }
        }
        if (y[0].empty()) continue;
        report.state_rmse.push_back(rmse(y[0], y_hat[0]));
        report.state_mape.push_back(mape(y[0], y_hat[0]));
        report.state_pcorr.push_back(y[0].size() >= 2 ? pcorr(y[0], y_hat[0]) : std::nullopt);
        for (int c = 1; c <= counties; ++c) {
            report.counties_by_horizon.rmse_values[c - 1].push_back(rmse(y[c], y_hat[c]));
            report.counties_by_horizon.mape_values[c - 1].push_back(mape(y[c], y_hat[c]));
            report.counties_by_horizon.pcorr_values[c - 1].push_back(
                y[c].size() >= 2 ? pcorr(y[c], y_hat[c]) : std::nullopt);
        }
    }

    // Per issue week: state column across available horizons.
    for (const auto& [week, matrix] : forecasts) {
        std::vector<double> y, y_hat;
        for (int h = 1; h <= matrix.rows(); ++h) {
            const int target = week + h;
            if (target >= truth.weeks() || target < 0) continue;
            y.push_back(truth.at(target, 0));
            y_hat.push_back(matrix(h - 1, 0));
        }
        if (y.empty()) {
            ++report.skipped_weeks;
            continue;
        }
        report.week_rmse[week] = rmse(y, y_hat);
        report.week_mape[week] = mape(y, y_hat);
    }
    if (report.state_rmse.empty())
        throw DataError("evaluate_run: no forecast overlaps the truth weeks");
    return report;
}

namespace {
std::string opt_str(const std::optional<double>& v) {
    return v ? io::format_double(*v) : "undefined";
}
} // namespace

void save_report(const EvalReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    std::ostringstream horizon_csv;
    horizon_csv << "horizon,rmse,mape,pcorr\n";
    for (std::size_t h = 0; h < report.state_rmse.size(); ++h)
        horizon_csv << (h + 1) << "," << io::format_double(report.state_rmse[h]) << ","
                    << io::format_double(report.state_mape[h]) << "," << opt_str(report.state_pcorr[h])
                    << "\n";
    io::write_file(dir / "per_horizon.csv", horizon_csv.str());

    std::ostringstream week_csv;
    week_csv << "issue_week,rmse,mape\n";
    for (const auto& [week, value] : report.week_rmse)
        week_csv << week << "," << io::format_double(value) << ","
                 << io::format_double(report.week_mape.at(week)) << "\n";
    io::write_file(dir / "per_week.csv", week_csv.str());

    std::ostringstream county_csv;
    county_csv << "county,horizon,rmse,mape,pcorr\n";
    for (std::size_t c = 0; c < report.counties_by_horizon.rmse_values.size(); ++c)
        for (std::size_t h = 0; h < report.counties_by_horizon.rmse_values[c].size(); ++h)
            county_csv << (c + 1) << "," << (h + 1) << ","
                       << io::format_double(report.counties_by_horizon.rmse_values[c][h]) << ","
                       << io::format_double(report.counties_by_horizon.mape_values[c][h]) << ","
                       << opt_str(report.counties_by_horizon.pcorr_values[c][h]) << "\n";
    io::write_file(dir / "per_county.csv", county_csv.str());

    nlohmann::json summary;
    summary["horizons"] = report.horizons;
    summary["counties"] = report.counties;
    summary["skipped_weeks"] = report.skipped_weeks;
    summary["state_rmse"] = report.state_rmse;
    summary["state_mape"] = report.state_mape;
    io::write_json(dir / "summary.json", summary);
}

MetricSet load_metric_set(const std::filesystem::path& per_county_csv) {
    const auto lines = io::split_lines(io::read_file(per_county_csv));
    if (lines.size() < 2) throw DataError("per-county report too short: " + per_county_csv.string());
    MetricSet set;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto fields = io::split(lines[i], ',');
        if (fields.size() != 5)
            throw DataError("bad per-county row: '" + lines[i] + "' in " + per_county_csv.string());
        const auto county = static_cast<std::size_t>(io::parse_int(fields[0]));
        if (county == 0) throw DataError("county ids are 1-based in " + per_county_csv.string());
        if (set.rmse_values.size() < county) {
            set.rmse_values.resize(county);
            set.mape_values.resize(county);
            set.pcorr_values.resize(county);
        }
        set.rmse_values[county - 1].push_back(io::parse_double(fields[2]));
        set.mape_values[county - 1].push_back(io::parse_double(fields[3]));
        set.pcorr_values[county - 1].push_back(
            fields[4] == "undefined" ? std::nullopt
                                     : std::optional<double>(io::parse_double(fields[4])));
    }
    return set;
}

} // namespace epiforge::metrics
