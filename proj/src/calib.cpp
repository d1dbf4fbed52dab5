#include "epiforge/calib.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "epiforge/errors.hpp"
#include "epiforge/io.hpp"

namespace epiforge::calib {

void SurveillanceSeries::validate() const {
    if (weekly_counts.empty()) throw DataError("surveillance series " + region + "/" + season + " is empty");
    for (double c : weekly_counts)
        if (c < 0) throw DataError("surveillance series " + region + "/" + season + " has negative count");
    if (population <= 0) throw ConfigError("surveillance series " + region + ": population must be positive");
    if (surveillance_ratio <= 0 || surveillance_ratio > 1)
        throw ConfigError("surveillance series " + region + ": ratio must be in (0,1]");
}

int ew_to_sw(int ew) {
    if (ew < 1 || ew > 52)
        throw DataError("epidemiological week " + std::to_string(ew) + " outside [1,52]");
    return ew >= 40 ? ew - 39 : ew + 13;
}

int sw_to_ew(int sw) {
    if (sw < 1 || sw > 52)
        throw DataError("seasonal week " + std::to_string(sw) + " outside [1,52]");
    return sw <= 13 ? sw + 39 : sw - 13;
}

std::vector<double> scale_surveillance(const SurveillanceSeries& series) {
    if (series.surveillance_ratio <= 0)
        throw ConfigError("scale_surveillance: ratio must be positive");
    std::vector<double> scaled(series.weekly_counts.size());
    for (std::size_t i = 0; i < scaled.size(); ++i)
        scaled[i] = series.weekly_counts[i] / series.surveillance_ratio;
    return scaled;
}

double attack_rate(const std::vector<double>& weekly_totals, std::int64_t population) {
    if (population <= 0) throw ConfigError("attack_rate: population must be positive");
    const double total = std::accumulate(weekly_totals.begin(), weekly_totals.end(), 0.0);
    const double ar = total / static_cast<double>(population);
    if (ar > 1.0) {
        std::cerr << "warning: attack rate " << ar << " exceeds 1, clamping\n";
        return 1.0;
    }
    return std::max(ar, 0.0);
}

std::vector<CalibrationSample> collect_samples(const std::string& target_region,
                                               const std::vector<SurveillanceSeries>& series) {
    if (series.empty()) throw ConfigError("collect_samples: no surveillance series given");
    const bool target_present =
        std::any_of(series.begin(), series.end(),
                    [&](const SurveillanceSeries& s) { return s.region == target_region; });
    if (!target_present)
        throw ConfigError("collect_samples: target region '" + target_region +
                          "' absent from surveillance input");
    std::vector<CalibrationSample> samples;
    samples.reserve(series.size());
    for (const auto& s : series) {
        s.validate();
        const auto scaled = scale_surveillance(s);
        CalibrationSample sample;
        sample.region = s.region;
        sample.season = s.season;
        sample.attack_rate = attack_rate(scaled, s.population);
        sample.initial_cases = scaled.front(); // sw(1)
        samples.push_back(std::move(sample));
    }
    return samples;
}

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& objective,
                             std::vector<double> x0, const NelderMeadOptions& options) {
    const std::size_t dim = x0.size();
    if (dim == 0) throw ConfigError("nelder_mead: empty start point");

    std::vector<std::vector<double>> simplex;
    simplex.push_back(x0);
    for (std::size_t i = 0; i < dim; ++i) {
        auto vertex = x0;
        const double relative = options.step_relative * std::abs(vertex[i]);
        vertex[i] += relative != 0.0 ? relative : options.step_absolute;
        simplex.push_back(std::move(vertex));
    }

    std::vector<double> f(simplex.size());
    for (std::size_t i = 0; i < simplex.size(); ++i) {
        f[i] = objective(simplex[i]);
        if (!std::isfinite(f[i]))
            throw NumericError("nelder_mead: objective not finite at initial simplex");
    }

    auto order = [&] {
        std::vector<std::size_t> idx(simplex.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return f[a] < f[b]; });
        std::vector<std::vector<double>> s2;
        std::vector<double> f2;
        for (auto i : idx) {
            s2.push_back(std::move(simplex[i]));
            f2.push_back(f[i]);
        }
        simplex = std::move(s2);
        f = std::move(f2);
    };

    auto centroid_excluding_worst = [&] {
        std::vector<double> c(dim, 0.0);
        for (std::size_t i = 0; i + 1 < simplex.size(); ++i)
            for (std::size_t d = 0; d < dim; ++d) c[d] += simplex[i][d];
        for (auto& v : c) v /= static_cast<double>(dim);
        return c;
    };

    auto blend = [&](const std::vector<double>& c, const std::vector<double>& x, double coeff) {
        std::vector<double> out(dim);
        for (std::size_t d = 0; d < dim; ++d) out[d] = c[d] + coeff * (c[d] - x[d]);
        return out;
    };

    auto diameter = [&] {
        double widest = 0.0;
        for (std::size_t i = 1; i < simplex.size(); ++i)
            for (std::size_t d = 0; d < dim; ++d)
                widest = std::max(widest, std::abs(simplex[i][d] - simplex[0][d]));
        return widest;
    };

    NelderMeadResult result;
    int iter = 0;
    for (; iter < options.max_iterations; ++iter) {
        order();
        if (f.back() - f.front() < options.tolerance && diameter() < options.x_tolerance) {
            result.converged = true;
            break;
        }
        const auto centroid = centroid_excluding_worst();
        const auto& worst = simplex.back();

        const auto reflected = blend(centroid, worst, options.reflection);
        const double f_reflected = objective(reflected);

        if (f_reflected < f.front()) {
            const auto expanded = blend(centroid, worst, options.expansion);
            const double f_expanded = objective(expanded);
            if (f_expanded < f_reflected) {
                simplex.back() = expanded;
                f.back() = f_expanded;
            } else {
                simplex.back() = reflected;
                f.back() = f_reflected;
            }
            continue;
        }
        if (f_reflected < f[f.size() - 2]) {
            simplex.back() = reflected;
            f.back() = f_reflected;
            continue;
        }

        // Contraction: outside against the reflected point, inside otherwise.
        if (f_reflected < f.back()) {
            std::vector<double> contracted(dim);
            for (std::size_t d = 0; d < dim; ++d)
                contracted[d] = centroid[d] + options.contraction * (reflected[d] - centroid[d]);
            const double f_contracted = objective(contracted);
            if (f_contracted <= f_reflected) {
                simplex.back() = contracted;
                f.back() = f_contracted;
                continue;
            }
        } else {
            std::vector<double> contracted(dim);
            for (std::size_t d = 0; d < dim; ++d)
                contracted[d] = centroid[d] + options.contraction * (worst[d] - centroid[d]);
            const double f_contracted = objective(contracted);
            if (f_contracted < f.back()) {
                simplex.back() = contracted;
                f.back() = f_contracted;
                continue;
            }
        }

        // Shrink toward the best vertex.
        for (std::size_t i = 1; i < simplex.size(); ++i) {
            for (std::size_t d = 0; d < dim; ++d)
                simplex[i][d] = simplex[0][d] + options.shrink * (simplex[i][d] - simplex[0][d]);
            f[i] = objective(simplex[i]);
        }
    }
    order();
    result.x = simplex.front();
    result.f = f.front();
    result.iterations = iter;
    return result;
}

TauCalibration calibrate_tau(double target_ar, const net::ContactNetwork& network,
                             const sim::DiseaseParams& base_params, std::uint64_t seed,
                             const CalibrateOptions& options) {
    if (target_ar < 0 || target_ar > 1)
        throw ConfigError("calibrate_tau: target attack rate must be in [0,1]");
    if (options.replicates < 1) throw ConfigError("calibrate_tau: replicates must be >= 1");

    const auto n = network.n_persons();
    const double log_lo = std::log(options.tau_lower);
    const double log_hi = std::log(options.tau_upper);

    // Deterministic objective: the replicate seeds are fixed up front.
    std::vector<std::uint64_t> replicate_seeds(options.replicates);
    for (int r = 0; r < options.replicates; ++r)
        replicate_seeds[r] = substream(seed, streams::calibrate, static_cast<std::uint64_t>(r));

    auto objective = [&](const std::vector<double>& x) {
        const double tau = std::exp(std::clamp(x[0], log_lo, log_hi));
        sim::DiseaseParams params = base_params;
        params.tau = tau;
        double mean_ar = 0.0;
        for (auto rep_seed : replicate_seeds) {
            const auto curve = sim::run_simulation(network, params, options.weeks, rep_seed);
            mean_ar += sim::simulated_attack_rate(curve, n);
        }
        mean_ar /= static_cast<double>(options.replicates);
        return std::abs(mean_ar - target_ar);
    };

    NelderMeadOptions nm;
    nm.max_iterations = options.max_iterations;
    nm.tolerance = 1e-6;
    nm.x_tolerance = 1e-3; // ~0.1% in tau
    nm.step_relative = 0.0;
    nm.step_absolute = 1.0; // one e-fold in tau
    const double x0 = std::clamp(std::log(options.tau_start), log_lo, log_hi);
    const auto nm_result = nelder_mead(objective, {x0}, nm);

    TauCalibration out;
    out.tau = std::exp(std::clamp(nm_result.x[0], log_lo, log_hi));
    out.residual = nm_result.f;
    out.low_confidence = nm_result.f > options.residual_threshold;
    return out;
}

std::vector<SurveillanceSeries> load_surveillance_dir(const std::filesystem::path& dir,
                                                      std::string* target_region_out) {
    const auto meta_path = dir / "meta.json";
    if (!std::filesystem::exists(meta_path))
        throw DataError("surveillance metadata not found: " + meta_path.string());
    const auto meta = io::read_json(meta_path);

    std::string target;
    std::vector<std::string> seasons;
    try {
        target = meta.at("target").get<std::string>();
        seasons = meta.at("seasons").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("surveillance meta.json: " + std::string(e.what()));
    }
    if (target_region_out) *target_region_out = target;

    std::vector<SurveillanceSeries> all;
    for (const auto& [region, info] : meta.at("regions").items()) {
        for (const auto& season : seasons) {
            const auto csv_path = dir / (region + "_" + season + ".csv");
            if (!std::filesystem::exists(csv_path))
                throw DataError("surveillance file missing: " + csv_path.string());
            SurveillanceSeries series;
            series.region = region;
            series.season = season;
            series.population = info.at("population").get<std::int64_t>();
            series.surveillance_ratio = info.at("surveillance_ratio").get<double>();

            // Rows are ew,count; reorder into seasonal-week order.
            series.weekly_counts.assign(52, 0.0);
            std::vector<bool> seen(53, false);
            const auto lines = io::split_lines(io::read_file(csv_path));
            for (std::size_t i = 0; i < lines.size(); ++i) {
                if (lines[i].empty() || (i == 0 && lines[i].rfind("ew", 0) == 0)) continue;
                const auto fields = io::split(lines[i], ',');
                if (fields.size() != 2)
                    throw DataError("bad surveillance row in " + csv_path.string() + ": '" + lines[i] + "'");
                const int ew = static_cast<int>(io::parse_int(fields[0]));
                const int sw = ew_to_sw(ew);
                if (seen[sw]) throw DataError("duplicate week " + std::to_string(ew) + " in " + csv_path.string());
                seen[sw] = true;
                series.weekly_counts[sw - 1] = io::parse_double(fields[1]);
            }
            series.validate();
            all.push_back(std::move(series));
        }
    }
    if (all.empty()) throw DataError("no surveillance series found under " + dir.string());
    return all;
}

} // namespace epiforge::calib
