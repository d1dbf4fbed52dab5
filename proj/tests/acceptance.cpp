// Acceptance suite: one pass/fail line per criterion, exit 0 only if all
// pass. Run a single criterion with `acceptance <number>`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "epiforge/calib.hpp"
#include "epiforge/datasetgen.hpp"
#include "epiforge/evalmetrics.hpp"
#include "epiforge/forecaster.hpp"
#include "epiforge/io.hpp"
#include "epiforge/netgen.hpp"
#include "epiforge/paramspace.hpp"
#include "epiforge/pipeline.hpp"
#include "epiforge/simcore.hpp"
#include "gradient_check.hpp"

using namespace epiforge;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kMaster = 0xACC2026;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

net::NetworkConfig dense_config(std::vector<std::int64_t> sizes) {
    net::NetworkConfig config;
    config.county_sizes = std::move(sizes);
    config.mean_household_size = 4;
    config.mean_external_degree = 15;
    config.cross_county_mix = 0.1;
    config.external_weight = net::WeightDist::uniform(120.0, 480.0);
    return config;
}

sim::DiseaseParams default_params(double tau, std::int64_t seeds) {
    sim::DiseaseParams params;
    params.incubation = pspace::default_incubation();
    params.infectious_period = pspace::default_infectious_period();
    params.tau = tau;
    params.initial_infectious = seeds;
    return params;
}

double mean_attack_rate(const net::ContactNetwork& network, const sim::DiseaseParams& params,
                        int weeks, int replicates, std::uint64_t seed) {
    double total = 0.0;
    for (int r = 0; r < replicates; ++r) {
        const auto curve = sim::run_simulation(network, params, weeks,
                                               substream(seed, static_cast<std::uint64_t>(r)));
        total += sim::simulated_attack_rate(curve, network.n_persons());
    }
    return total / replicates;
}

// Simulation-backed toy dataset for the learning criteria.
data::Dataset toy_dataset(int counties, int runs, int weeks, double tau_mean, double tau_sd,
                          std::uint64_t seed) {
    auto config = dense_config(std::vector<std::int64_t>(counties, 200));
    const auto network = net::generate_network(config, substream(seed, streams::network));
    pspace::ParamSpace space;
    space.incubation = pspace::default_incubation();
    space.infectious_period = pspace::default_infectious_period();
    space.tau.kind = pspace::Marginal::Kind::Normal;
    space.tau.mean = tau_mean;
    space.tau.sd = tau_sd;
    space.initial_cases.kind = pspace::Marginal::Kind::Uniform;
    space.initial_cases.lo = 5.0;
    space.initial_cases.hi = 15.0;
    return data::generate_dataset(space, network, runs, weeks, std::nullopt, seed);
}

// One-week-ahead feature pairs for a span of curves (the same layout train()
// uses: curves concatenated in index order).
struct EvalPair {
    forecast::FeaturePair pair;
    int curve = 0;
    int week = 0;
};

std::vector<EvalPair> pairs_for_curves(const data::Dataset& dataset, const std::vector<int>& idx,
                                       int a, int b, int ell) {
    std::vector<double> series;
    for (const auto& curve : dataset.curves)
        for (int t = 0; t < ell; ++t) series.push_back(curve.state(t));
    std::vector<bool> wanted(dataset.curves.size(), false);
    for (int i : idx) wanted[i] = true;

    std::vector<EvalPair> out;
    const int t_min = std::max(a, ell * b);
    for (int t = t_min; t < static_cast<int>(series.size()); ++t) {
        const int curve = t / ell;
        if (!wanted[curve]) continue;
        EvalPair ep;
        ep.pair = forecast::build_features(series, t, a, b, ell);
        ep.curve = curve;
        ep.week = t % ell;
        ep.pair.target.resize(dataset.counties() + 1);
        for (int c = 0; c <= dataset.counties(); ++c)
            ep.pair.target(c) = dataset.curves[curve].at(ep.week, c);
        out.push_back(std::move(ep));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

bool criterion_simulation_invariants(std::string& detail) {
    Rng rng(substream(kMaster, 1));
    int conservation_bad = 0, sequence_bad = 0, spatial_bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int counties = 1 + static_cast<int>(rng.below(4));
        std::vector<std::int64_t> sizes(counties);
        const auto n = static_cast<std::int64_t>(50 + rng.below(1951)); // N <= 2000
        for (int c = 0; c < counties; ++c) sizes[c] = n / counties;
        sizes[0] += n - std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0});

        net::NetworkConfig config;
        config.county_sizes = sizes;
        config.mean_household_size = 2.0 + rng.uniform01() * 4.0;
        config.mean_external_degree = rng.uniform01() * 10.0;
        config.cross_county_mix = rng.uniform01() * 0.3;
        const auto network = net::generate_network(config, rng());

        auto params = default_params(std::exp(rng.uniform(std::log(1e-6), std::log(3e-3))),
                                     static_cast<std::int64_t>(rng.below(21)));
        params.initial_infectious = std::min(params.initial_infectious, n);
        if (rng.uniform01() < 0.3) {
            sim::VaccineSchedule schedule;
            schedule.efficacy = rng.uniform(0.2, 0.9);
            schedule.compliance = rng.uniform(0.5, 1.0);
            schedule.weekly_coverage[static_cast<int>(rng.below(3))] = rng.uniform(0.1, 0.5);
            params.vaccine = schedule;
        }
        if (rng.uniform01() < 0.3) {
            sim::Scenario scenario;
            scenario.tau_multipliers[static_cast<int>(rng.below(5))] = rng.uniform(0.0, 2.0);
            params.scenario = scenario;
        }
        const int weeks = 1 + static_cast<int>(rng.below(20));
        const std::uint64_t sim_seed = rng();

        // Spatial sums of the finished curve are exact by construction.
        const auto curve = sim::run_simulation(network, params, weeks, sim_seed);
        for (int t = 0; t < weeks; ++t) {
            double sum = 0.0;
            for (int c = 1; c <= counties; ++c) sum += curve.at(t, c);
            if (curve.at(t, 0) != sum) ++spatial_bad;
        }

        // Day-by-day conservation and forward-only transitions.
        Rng day_rng(substream(sim_seed, streams::simulate));
        auto state = sim::AgentState::all_susceptible(n);
        std::vector<std::int32_t> ids(n);
        for (std::int64_t p = 0; p < n; ++p) ids[p] = static_cast<std::int32_t>(p);
        for (std::int64_t j = 0; j < params.initial_infectious; ++j) {
            const auto pick = j + static_cast<std::int64_t>(day_rng.below(n - j));
            std::swap(ids[j], ids[pick]);
            state.compartment[ids[j]] = sim::Compartment::I;
            state.days_left[ids[j]] =
                static_cast<std::int16_t>(params.infectious_period.sample(day_rng));
        }
        auto previous = state.compartment;
        for (int day = 0; day < 7 * weeks; ++day) {
            if (day % 7 == 0 && params.vaccine)
                sim::apply_vaccine_week(state, *params.vaccine, day / 7, day_rng);
            (void)sim::step_day(state, network, params, day, day_rng);
            const auto counts = state.counts();
            if (counts[0] + counts[1] + counts[2] + counts[3] != n) ++conservation_bad;
            for (std::int64_t p = 0; p < n; ++p) {
                const int before = static_cast<int>(previous[p]);
                const int after = static_cast<int>(state.compartment[p]);
                if (after < before || after - before > 1) {
                    ++sequence_bad;
                    break;
                }
            }
            previous = state.compartment;
        }
    }
    std::ostringstream out;
    out << "1000 triples; conservation violations " << conservation_bad << ", sequence violations "
        << sequence_bad << ", spatial violations " << spatial_bad;
    detail = out.str();
    return conservation_bad == 0 && sequence_bad == 0 && spatial_bad == 0;
}

bool criterion_transmission_oracle(std::string& detail) {
    std::vector<net::Person> persons{{0, 0, 0}, {1, 0, 1}, {2, 0, 2}};
    std::vector<net::ContactEdge> edges{{0, 1, 150.0}, {1, 2, 150.0}};
    const net::ContactNetwork network(std::move(persons), std::move(edges), 1);

    const double tau = 0.003;
    const double expected = sim::transmission_probability(tau, 150.0);
    auto params = default_params(tau, 0);

    const int replicates = 10000;
    int exposed = 0;
    for (int r = 0; r < replicates; ++r) {
        auto state = sim::AgentState::all_susceptible(3);
        state.compartment[0] = sim::Compartment::I;
        state.days_left[0] = 3;
        Rng rng(substream(kMaster, 2, static_cast<std::uint64_t>(r)));
        (void)sim::step_day(state, network, params, 0, rng);
        if (state.compartment[1] == sim::Compartment::E) ++exposed;
    }
    const double freq = static_cast<double>(exposed) / replicates;
    std::ostringstream out;
    out << "closed form " << expected << ", monte carlo " << freq << ", |diff| "
        << std::abs(freq - expected);
    detail = out.str();
    return std::abs(freq - expected) < 0.01;
}

bool criterion_calibration_round_trip(std::string& detail) {
    const auto network = net::generate_network(dense_config({1000}), substream(kMaster, 3));
    std::ostringstream out;
    bool ok = true;
    for (const double tau0 : {2e-5, 5e-5, 1e-4}) {
        auto params = default_params(tau0, 100);
        const double target = mean_attack_rate(network, params, 20, 5, substream(kMaster, 31));

        calib::CalibrateOptions options;
        options.replicates = 5;
        options.weeks = 20;
        options.max_iterations = 60;
        const auto result =
            calib::calibrate_tau(target, network, params, substream(kMaster, 32), options);
        const double rel = std::abs(result.tau - tau0) / tau0;
        out << "tau0 " << tau0 << " -> ar " << target << " -> tau* " << result.tau << " (rel "
            << rel << "); ";
        ok = ok && rel <= 0.15;
    }
    detail = out.str();
    return ok;
}

bool criterion_nelder_mead(std::string& detail) {
    const auto r1 = calib::nelder_mead(
        [](const std::vector<double>& x) { return (x[0] - 2) * (x[0] - 2); }, {0.0});
    const auto r2 = calib::nelder_mead(
        [](const std::vector<double>& x) { return x[0] * x[0] + x[1] * x[1]; }, {3.0, 4.0});
    calib::NelderMeadOptions options;
    options.max_iterations = 500;
    const auto r3 = calib::nelder_mead(
        [](const std::vector<double>& x) {
            const double a = 1.0 - x[0];
            const double b = x[1] - x[0] * x[0];
            return a * a + 100.0 * b * b;
        },
        {-1.2, 1.0}, options);

    const bool ok1 = std::abs(r1.x[0] - 2.0) < 1e-6;
    const bool ok2 = std::abs(r2.x[0]) < 1e-6 && std::abs(r2.x[1]) < 1e-6;
    const bool ok3 =
        std::abs(r3.x[0] - 1.0) < 1e-3 && std::abs(r3.x[1] - 1.0) < 1e-3 && r3.iterations <= 500;
    std::ostringstream out;
    out << "parabola x=" << r1.x[0] << "; sphere (" << r2.x[0] << "," << r2.x[1]
        << "); rosenbrock (" << r3.x[0] << "," << r3.x[1] << ") in " << r3.iterations << " iters";
    detail = out.str();
    return ok1 && ok2 && ok3;
}

bool criterion_ks_selection(std::string& detail) {
    int normal_hits = 0, uniform_hits = 0;
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(substream(kMaster, 5, static_cast<std::uint64_t>(seed)));
        std::vector<double> gauss(500), flat(500);
        for (auto& x : gauss) x = rng.normal(5.0, 1.0);
        for (auto& x : flat) x = rng.uniform(2.0, 8.0);
        if (pspace::fit_marginal(gauss).kind == pspace::Marginal::Kind::Normal) ++normal_hits;
        if (pspace::fit_marginal(flat).kind == pspace::Marginal::Kind::Uniform) ++uniform_hits;
    }
    std::ostringstream out;
    out << "normal selected " << normal_hits << "/20, uniform selected " << uniform_hits << "/20";
    detail = out.str();
    return normal_hits >= 18 && uniform_hits >= 18;
}

bool criterion_gradient_suite(std::string& detail) {
    Rng rng(substream(kMaster, 6));
    const forecast::Variant variants[3] = {forecast::Variant::Full, forecast::Variant::LeftOnly,
                                           forecast::Variant::RightDense};
    int checked_models = 0, failed_models = 0;
    long long checked_params = 0;
    std::uint64_t seed = 1000;
    for (int i = 0; i < 50; ++i) {
        forecast::ModelConfig config;
        config.variant = variants[i % 3];
        config.counties = 1 + static_cast<int>(rng.below(3));
        config.hidden = 2 + static_cast<int>(rng.below(7));      // <= 8
        config.within_window = 1 + static_cast<int>(rng.below(6)); // a <= 6
        config.between_window =
            config.variant == forecast::Variant::LeftOnly ? 0 : 1 + static_cast<int>(rng.below(3));
        config.season_length = 13;
        config.left_layers = 1 + static_cast<int>(rng.below(2));
        config.right_layers = 1 + static_cast<int>(rng.below(2));
        config.branch_dim = 2 + static_cast<int>(rng.below(5));
        config.mu = (i / 3) % 2 == 0 ? 0.0 : 0.5;
        config.lambda = (i / 6) % 2 == 0 ? 0.0 : 0.5;
        config.dropout_rate = 0.0;

        const bool regularized = config.mu > 0.0 || config.lambda > 0.0;
        for (int attempt = 0; attempt < 200; ++attempt) {
            const auto model = forecast::init_model(config, seed);
            Rng pair_rng(substream(seed, 17));
            ++seed;
            forecast::FeaturePair pair;
            pair.x1.resize(config.within_window);
            for (int k = 0; k < config.within_window; ++k) pair.x1(k) = pair_rng.uniform(0.0, 1.0);
            pair.x2.resize(config.variant == forecast::Variant::LeftOnly ? 0
                                                                         : config.between_window);
            for (int k = 0; k < pair.x2.size(); ++k) pair.x2(k) = pair_rng.uniform(0.0, 1.0);
            pair.target.resize(config.output_dim());
            for (int k = 0; k < config.output_dim(); ++k) pair.target(k) = pair_rng.uniform(0.0, 1.0);

            // Keep away from the regularizer kinks when they are active.
            const Eigen::VectorXd z = forecast::forward(model, pair.x1, pair.x2);
            double county_sum = 0.0;
            for (int c = 1; c < z.size(); ++c) county_sum += z(c);
            bool kink = std::abs(z(0) - county_sum) < 1e-2;
            for (int c = 0; c < z.size(); ++c) kink = kink || std::abs(z(c)) < 1e-2;
            if (kink) continue;

            const auto report = gradcheck::check_gradients(model, pair);
            ++checked_models;
            checked_params += report.checked;
            if (report.failures > 0) ++failed_models;
            break;
        }
    }
    std::ostringstream out;
    out << checked_models << " models / " << checked_params << " parameters checked, "
        << failed_models << " models with gradient mismatches";
    detail = out.str();
    return checked_models == 50 && failed_models == 0;
}

bool criterion_regularizer_arithmetic(std::string& detail) {
    Eigen::Vector3d gapped(10.0, 5.0, 3.0);
    Eigen::Vector4d negative(-2.0, 1.0, 1.0, 0.0);
    const double phi = forecast::spatial_gap(gapped);
    const double delta = forecast::negativity_penalty(negative);
    const double loss_phi = forecast::loss(gapped, gapped, 1.0, 0.0);
    const double loss_delta = forecast::loss(negative, negative, 0.0, 1.0);
    std::ostringstream out;
    out << "phi=" << phi << " (want 2), delta=" << delta << " (want 0.5)";
    detail = out.str();
    return phi == 2.0 && delta == 0.5 && loss_phi == 2.0 && loss_delta == 0.5;
}

// Spatial-consistency RMSE of one-week-ahead predictions on held-out curves.
double spatial_error(const forecast::ForecastModel& model, const data::Dataset& dataset) {
    const auto pairs = pairs_for_curves(dataset, dataset.split.test, model.config.within_window,
                                        model.config.has_right_branch() ? model.config.between_window
                                                                        : 0,
                                        model.config.season_length);
    double acc = 0.0;
    for (const auto& ep : pairs) {
        const Eigen::VectorXd z = forecast::forward(model, ep.pair.x1, ep.pair.x2);
        double county_sum = 0.0;
        for (int c = 1; c < z.size(); ++c) county_sum += z(c);
        acc += (z(0) - county_sum) * (z(0) - county_sum);
    }
    return std::sqrt(acc / static_cast<double>(pairs.size()));
}

bool criterion_constraint_efficacy(std::string& detail) {
    int wins = 0;
    std::ostringstream out;
    for (int s = 0; s < 5; ++s) {
        const auto seed = substream(kMaster, 8, static_cast<std::uint64_t>(s));
        const auto dataset = toy_dataset(3, 200, 12, 6e-5, 6e-6, seed);

        forecast::ModelConfig config;
        config.within_window = 6;
        config.between_window = 1;
        config.season_length = 12;
        config.left_layers = 1;
        config.right_layers = 1;
        config.hidden = 8;
        config.branch_dim = 12;
        config.counties = 3;
        config.lambda = 0.0;
        config.dropout_rate = 0.0;
        config.variant = forecast::Variant::Full;
        config.max_epochs = 40;
        config.patience = 40;

        double errors[2];
        for (int m = 0; m < 2; ++m) {
            config.mu = m == 0 ? 0.0 : 1.0;
            auto model = forecast::init_model(config, seed);
            forecast::train(model, dataset, seed);
            errors[m] = spatial_error(model, dataset);
        }
        out << "seed " << s << ": mu0 " << errors[0] << " vs mu1 " << errors[1] << "; ";
        if (errors[1] < errors[0]) ++wins;
    }
    out << wins << "/5 seeds favor mu=1";
    detail = out.str();
    return wins >= 4;
}

// Horizon-5 RMSE of state-level forecasts over the test split.
double horizon5_rmse(const forecast::ForecastModel& model, const data::Dataset& dataset) {
    const int ell = dataset.weeks();
    std::vector<double> series;
    for (const auto& curve : dataset.curves)
        for (int t = 0; t < ell; ++t) series.push_back(curve.state(t));

    std::vector<double> y, y_hat;
    for (int idx : dataset.split.test) {
        for (int t = 0; t + 5 < ell; ++t) {
            std::vector<double> history(series.begin(), series.begin() + idx * ell + t + 1);
            const auto forecasted = forecast::forecast_multistep(model, history, 5);
            y.push_back(dataset.curves[idx].state(t + 5));
            y_hat.push_back(forecasted(4, 0));
        }
    }
    return metrics::rmse(y, y_hat);
}

bool criterion_seasonality(std::string& detail) {
    int wins = 0;
    std::ostringstream out;
    for (int s = 0; s < 5; ++s) {
        const auto seed = substream(kMaster, 9, static_cast<std::uint64_t>(s));
        const auto dataset = toy_dataset(2, 150, 12, 6e-5, 6e-6, seed);

        double rmse_by_a[3];
        const int windows[3] = {4, 8, 12};
        for (int k = 0; k < 3; ++k) {
            forecast::ModelConfig config;
            config.within_window = windows[k];
            config.between_window = 0;
            config.season_length = 12;
            config.left_layers = 1;
            config.right_layers = 1;
            config.hidden = 8;
            config.branch_dim = 12;
            config.counties = 2;
            config.mu = 0.0;
            config.lambda = 0.0;
            config.dropout_rate = 0.0;
            config.variant = forecast::Variant::LeftOnly;
            config.max_epochs = 50;
            config.patience = 50;

            auto model = forecast::init_model(config, seed);
            forecast::train(model, dataset, seed);
            rmse_by_a[k] = horizon5_rmse(model, dataset);
        }
        out << "seed " << s << ": a4 " << rmse_by_a[0] << ", a8 " << rmse_by_a[1] << ", a12 "
            << rmse_by_a[2] << "; ";
        if (rmse_by_a[2] < rmse_by_a[0] && rmse_by_a[2] < rmse_by_a[1]) ++wins;
    }
    out << wins << "/5 seeds favor a=12";
    detail = out.str();
    return wins >= 4;
}

bool criterion_vaccine_effect(std::string& detail) {
    const auto network = net::generate_network(dense_config({1000}), substream(kMaster, 10));
    auto base = default_params(5e-5, 10);

    auto vaccinated = base;
    sim::VaccineSchedule schedule;
    schedule.efficacy = 0.5;
    schedule.compliance = 1.0;
    schedule.weekly_coverage[0] = 0.4;
    vaccinated.vaccine = schedule;

    const int replicates = 50;
    std::vector<double> ar_base, ar_vacc;
    for (int r = 0; r < replicates; ++r) {
        const auto seed = substream(kMaster, 101, static_cast<std::uint64_t>(r));
        ar_base.push_back(sim::simulated_attack_rate(
            sim::run_simulation(network, base, 20, seed), network.n_persons()));
        ar_vacc.push_back(sim::simulated_attack_rate(
            sim::run_simulation(network, vaccinated, 20, seed), network.n_persons()));
    }
    auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    };
    auto stderr_of = [&](const std::vector<double>& v) {
        const double m = mean(v);
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        return std::sqrt(ss / (v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
    };
    const double gap = mean(ar_base) - mean(ar_vacc);
    const double se = std::sqrt(stderr_of(ar_base) * stderr_of(ar_base) +
                                stderr_of(ar_vacc) * stderr_of(ar_vacc));
    std::ostringstream out;
    out << "AR base " << mean(ar_base) << ", AR vaccinated " << mean(ar_vacc) << ", gap " << gap
        << ", 2*SE " << 2.0 * se;
    detail = out.str();
    return gap > 2.0 * se;
}

bool criterion_mc_dropout_coverage(std::string& detail) {
    const auto seed = substream(kMaster, 11);
    const auto dataset = toy_dataset(2, 400, 12, 6e-5, 6e-6, seed);

    forecast::ModelConfig config;
    config.within_window = 6;
    config.between_window = 1;
    config.season_length = 12;
    config.left_layers = 1;
    config.right_layers = 1;
    config.hidden = 8;
    config.branch_dim = 12;
    config.counties = 2;
    config.mu = 0.0;
    config.lambda = 0.0;
    config.dropout_rate = 0.25;
    config.variant = forecast::Variant::Full;
    config.max_epochs = 60;
    config.patience = 60;

    auto model = forecast::init_model(config, seed);
    forecast::train(model, dataset, seed);

    const int ell = dataset.weeks();
    std::vector<double> series;
    for (const auto& curve : dataset.curves)
        for (int t = 0; t < ell; ++t) series.push_back(curve.state(t));

    int covered = 0, total = 0;
    for (int idx : dataset.split.test) {
        for (int t = 5; t + 1 < ell; ++t) {
            std::vector<double> history(series.begin(), series.begin() + idx * ell + t + 1);
            const auto mc = forecast::mc_dropout_forecast(
                model, history, 1, 20, substream(seed, static_cast<std::uint64_t>(idx), t));
            const double truth = dataset.curves[idx].state(t + 1);
            ++total;
            if (std::abs(truth - mc.mean(0, 0)) <= 2.0 * mc.sd(0, 0)) ++covered;
        }
    }
    const double coverage = static_cast<double>(covered) / total;
    std::ostringstream out;
    out << covered << "/" << total << " truths within mean +- 2 sd (" << 100.0 * coverage << "%)"
        << " over " << dataset.split.test.size() << " held-out curves";
    detail = out.str();
    return dataset.split.test.size() == 20 && coverage >= 0.85;
}

bool criterion_metric_oracles(std::string& detail) {
    Rng rng(substream(kMaster, 12));
    int bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(40));
        std::vector<double> y(n), y_hat(n);
        for (int i = 0; i < n; ++i) {
            y[i] = rng.uniform(0, 200);
            y_hat[i] = rng.uniform(0, 200);
        }
        // Independent recomputation in reverse order.
        double sq = 0.0, ape = 0.0, sy = 0.0, sh = 0.0;
        for (int i = n - 1; i >= 0; --i) {
            sq += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
            ape += std::abs((y[i] - y_hat[i]) / (y[i] + 1.0));
            sy += y[i];
            sh += y_hat[i];
        }
        const double want_rmse = std::sqrt(sq / n);
        const double want_mape = 100.0 * ape / n;
        const double my = sy / n, mh = sh / n;
        double cov = 0.0, vy = 0.0, vh = 0.0;
        for (int i = n - 1; i >= 0; --i) {
            cov += (y[i] - my) * (y_hat[i] - mh);
            vy += (y[i] - my) * (y[i] - my);
            vh += (y_hat[i] - mh) * (y_hat[i] - mh);
        }
        const double want_pcorr = cov / std::sqrt(vy * vh);
        if (std::abs(metrics::rmse(y, y_hat) - want_rmse) > 1e-12) ++bad;
        if (std::abs(metrics::mape(y, y_hat) - want_mape) > 1e-12) ++bad;
        const auto got_pcorr = metrics::pcorr(y, y_hat);
        if (!got_pcorr || std::abs(*got_pcorr - want_pcorr) > 1e-12) ++bad;
    }

    const bool mape_example =
        metrics::mape(std::vector<double>{9.0}, std::vector<double>{4.0}) == 50.0;

    metrics::MetricSet set;
    set.rmse_values = {{3, 4}, {5, 6}};
    set.mape_values = {{10, 20}, {30, 40}};
    set.pcorr_values = {{0.5, 0.6}, {0.7, 0.8}};
    bool ratio_ok = true;
    for (const auto& entry : metrics::ratio_report(set, set)) {
        ratio_ok = ratio_ok && entry.rmse_ratio && std::abs(*entry.rmse_ratio - 1.0) < 1e-15;
        ratio_ok = ratio_ok && entry.mape_ratio && std::abs(*entry.mape_ratio - 1.0) < 1e-15;
        ratio_ok = ratio_ok && entry.pcorr_ratio && std::abs(*entry.pcorr_ratio - 1.0) < 1e-15;
    }
    std::ostringstream out;
    out << "1000 random vectors, " << bad << " mismatches; mape example "
        << (mape_example ? "exact" : "WRONG") << "; ratio identity "
        << (ratio_ok ? "holds" : "broken");
    detail = out.str();
    return bad == 0 && mape_example && ratio_ok;
}

bool criterion_reproducibility(std::string& detail) {
    const auto base = fs::temp_directory_path() / "epiforge_acceptance_pipeline";
    fs::remove_all(base);
    fs::create_directories(base / "surv");

    nlohmann::json meta;
    meta["target"] = "AA";
    meta["seasons"] = {"s1", "s2", "s3"};
    meta["regions"] = {{"AA", {{"population", 30000}, {"surveillance_ratio", 0.1}}},
                       {"BB", {{"population", 40000}, {"surveillance_ratio", 0.08}}}};
    io::write_json(base / "surv" / "meta.json", meta);
    int variant = 0;
    for (const std::string region : {"AA", "BB"})
        for (const std::string season : {"s1", "s2", "s3"}) {
            std::string csv = "ew,count\n";
            for (int ew = 1; ew <= 52; ++ew) {
                const int sw = ew >= 40 ? ew - 39 : ew + 13;
                const double value =
                    3.0 + (18.0 + 5.0 * variant) *
                              std::exp(-0.5 * std::pow((sw - 22.0) / 6.0, 2.0));
                csv += std::to_string(ew) + "," + io::format_double(std::round(value)) + "\n";
            }
            io::write_file(base / "surv" / (region + "_" + season + ".csv"), csv);
            ++variant;
        }

    nlohmann::json config;
    config["out_dir"] = "out";
    config["master_seed"] = 77002211;
    config["network"] = {{"county_sizes", {160, 140}},
                         {"mean_household_size", 3},
                         {"mean_external_degree", 10},
                         {"cross_county_mix", 0.1},
                         {"external_weight", {{"kind", "uniform"}, {"lo", 120.0}, {"hi", 480.0}}}};
    config["surveillance_dir"] = "surv";
    config["calibration"] = {{"replicates", 2}, {"weeks", 8}, {"max_iterations", 10}};
    config["dataset"] = {{"runs", 12}, {"weeks", 8}};
    config["model"] = {{"a", 3},       {"b", 1},          {"k_l", 1},   {"k_r", 1},
                       {"hidden", 4},  {"branch_dim", 6}, {"mu", 0.1},  {"lambda", 0.1},
                       {"dropout_rate", 0.0}, {"variant", "full"}, {"max_epochs", 5},
                       {"patience", 5}, {"batch_size", 8}};
    config["forecast"] = {{"horizon", 3}, {"issue_weeks", {3, 4}}};
    config["evaluate"] = {{"test_curve", 0}};
    io::write_json(base / "config.json", config);

    const auto first = pipeline::run_pipeline(base / "config.json");
    const auto second = pipeline::run_pipeline(base / "config.json");
    const bool identical = first.artifact_hashes == second.artifact_hashes;
    std::ostringstream out;
    out << first.artifact_hashes.size() << " artifacts, reruns "
        << (identical ? "hash-identical" : "DIVERGED");
    detail = out.str();
    fs::remove_all(base);
    return identical;
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<bool(std::string&)> run;
};

} // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {1, "simulation invariants", 60, criterion_simulation_invariants},
        {2, "transmission oracle", 30, criterion_transmission_oracle},
        {3, "calibration round-trip", 300, criterion_calibration_round_trip},
        {4, "nelder-mead standard objectives", 60, criterion_nelder_mead},
        {5, "ks distribution selection", 10, criterion_ks_selection},
        {6, "gradient suite", 120, criterion_gradient_suite},
        {7, "regularizer arithmetic", 10, criterion_regularizer_arithmetic},
        {8, "spatial constraint efficacy", 900, criterion_constraint_efficacy},
        {9, "seasonality window advantage", 1200, criterion_seasonality},
        {10, "vaccine intervention effect", 120, criterion_vaccine_effect},
        {11, "mc-dropout coverage", 300, criterion_mc_dropout_coverage},
        {12, "metric oracles", 30, criterion_metric_oracles},
        {13, "pipeline reproducibility", 600, criterion_reproducibility},
    };

    int only = 0;
    if (argc > 1) only = std::atoi(argv[1]);

    bool all_ok = true;
    for (const auto& criterion : criteria) {
        if (only != 0 && criterion.id != only) continue;
        std::string detail;
        const auto start = std::chrono::steady_clock::now();
        bool ok = false;
        try {
            ok = criterion.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_budget = elapsed < criterion.budget_seconds;
        ok = ok && in_budget;
        std::printf("[%s] criterion %2d: %s (%.1fs%s) %s\n", ok ? "PASS" : "FAIL", criterion.id,
                    criterion.name, elapsed, in_budget ? "" : " OVER BUDGET", detail.c_str());
        std::fflush(stdout);
        all_ok = all_ok && ok;
    }
    return all_ok ? 0 : 1;
}
