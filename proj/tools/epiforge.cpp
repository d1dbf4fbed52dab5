#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "epiforge/calib.hpp"
#include "epiforge/datasetgen.hpp"
#include "epiforge/errors.hpp"
#include "epiforge/evalmetrics.hpp"
#include "epiforge/forecaster.hpp"
#include "epiforge/io.hpp"
#include "epiforge/netgen.hpp"
#include "epiforge/paramspace.hpp"
#include "epiforge/pipeline.hpp"
#include "epiforge/simcore.hpp"

namespace fs = std::filesystem;
using namespace epiforge;

namespace {

int run(int argc, char** argv) {
    CLI::App app{"epiforge: simulation-trained epidemic forecasting pipeline"};
    app.require_subcommand(1);
    int jobs = 1;
    app.add_option("--jobs", jobs, "worker threads for embarrassingly parallel stages")
        ->capture_default_str();

    // gen-network
    auto* gen_network = app.add_subcommand("gen-network", "generate a synthetic contact network");
    std::string gn_config, gn_out;
    std::uint64_t gn_seed = 0;
    gen_network->add_option("--config", gn_config, "network config JSON")->required();
    gen_network->add_option("--seed", gn_seed, "generator seed")->required();
    gen_network->add_option("--out", gn_out, "output directory")->required();
    gen_network->callback([&] {
        const auto config = net::network_config_from_json(gn_config);
        const auto network = net::generate_network(config, substream(gn_seed, streams::network));
        net::save_network(network, config, gn_seed, gn_out);
        std::cout << "network: " << network.n_persons() << " persons, " << network.n_edges()
                  << " edges, " << network.n_counties() << " counties -> " << gn_out << "\n";
    });

    // simulate
    auto* simulate = app.add_subcommand("simulate", "run one SEIR simulation");
    std::string sim_network, sim_params, sim_out;
    int sim_weeks = 52;
    std::uint64_t sim_seed = 0;
    simulate->add_option("--network", sim_network, "network directory")->required();
    simulate->add_option("--params", sim_params, "disease params JSON")->required();
    simulate->add_option("--weeks", sim_weeks, "season length")->capture_default_str();
    simulate->add_option("--seed", sim_seed, "simulation seed")->required();
    simulate->add_option("--out", sim_out, "output epicurve CSV")->required();
    simulate->callback([&] {
        const auto network = net::load_network(sim_network);
        const auto params = sim::params_from_file(sim_params);
        const auto curve = sim::run_simulation(network, params, sim_weeks, sim_seed);
        curve.save_csv(sim_out);
        std::cout << "simulated " << sim_weeks << " weeks, total incidence "
                  << curve.total_state() << " -> " << sim_out << "\n";
    });

    // calibrate
    auto* calibrate = app.add_subcommand("calibrate", "collect samples and calibrate tau");
    std::string cal_surv, cal_network, cal_out;
    std::uint64_t cal_seed = 0;
    int cal_replicates = 5, cal_weeks = 52;
    calibrate->add_option("--surveillance", cal_surv, "surveillance directory")->required();
    calibrate->add_option("--network", cal_network, "network directory")->required();
    calibrate->add_option("--seed", cal_seed, "calibration seed")->capture_default_str();
    calibrate->add_option("--replicates", cal_replicates, "simulations per objective evaluation")
        ->capture_default_str();
    calibrate->add_option("--weeks", cal_weeks, "simulated weeks")->capture_default_str();
    calibrate->add_option("--out", cal_out, "samples JSON output")->required();
    calibrate->callback([&] {
        const auto network = net::load_network(cal_network);
        std::string target;
        const auto series = calib::load_surveillance_dir(cal_surv, &target);
        const auto samples = calib::collect_samples(target, series);
        calib::CalibrateOptions options;
        options.replicates = cal_replicates;
        options.weeks = cal_weeks;

        nlohmann::json doc;
        doc["target"] = target;
        doc["samples"] = nlohmann::json::array();
        for (std::size_t i = 0; i < samples.size(); ++i) {
            sim::DiseaseParams base;
            base.incubation = pspace::default_incubation();
            base.infectious_period = pspace::default_infectious_period();
            base.tau = options.tau_start;
            base.initial_infectious = std::clamp<std::int64_t>(
                std::llround(samples[i].initial_cases), 0, network.n_persons());
            const auto result = calib::calibrate_tau(samples[i].attack_rate, network, base,
                                                     substream(cal_seed, streams::calibrate, i),
                                                     options);
            doc["samples"].push_back({{"region", samples[i].region},
                                      {"season", samples[i].season},
                                      {"attack_rate", samples[i].attack_rate},
                                      {"initial_cases", samples[i].initial_cases},
                                      {"tau", result.tau},
                                      {"residual", result.residual},
                                      {"low_confidence", result.low_confidence}});
            std::cout << samples[i].region << "/" << samples[i].season << ": ar="
                      << samples[i].attack_rate << " tau=" << result.tau
                      << (result.low_confidence ? " (low confidence)" : "") << "\n";
        }
        io::write_json(cal_out, doc);
    });

    // fit-params
    auto* fit_params = app.add_subcommand("fit-params", "fit marginal distributions");
    std::string fp_samples, fp_schedules, fp_out;
    fit_params->add_option("--samples", fp_samples, "samples JSON from calibrate")->required();
    fit_params->add_option("--schedules", fp_schedules, "vaccine schedules JSON");
    fit_params->add_option("--out", fp_out, "parameter space JSON output")->required();
    fit_params->callback([&] {
        const auto doc = io::read_json(fp_samples);
        std::vector<calib::CalibrationSample> samples;
        std::vector<double> taus;
        for (const auto& s : doc.at("samples")) {
            calib::CalibrationSample sample;
            sample.region = s.at("region");
            sample.season = s.at("season");
            sample.attack_rate = s.at("attack_rate");
            sample.initial_cases = s.at("initial_cases");
            samples.push_back(std::move(sample));
            taus.push_back(s.at("tau").get<double>());
        }
        std::vector<sim::VaccineSchedule> schedules;
        if (!fp_schedules.empty()) schedules = pspace::schedules_from_json_file(fp_schedules);
        const auto space = pspace::build_space(samples, taus, schedules);
        pspace::save_space(space, fp_out);
        std::cout << "parameter space -> " << fp_out << "\n";
    });

    // gen-dataset
    auto* gen_dataset = app.add_subcommand("gen-dataset", "generate the synthetic training set");
    std::string gd_space, gd_network, gd_scenario, gd_out;
    int gd_runs = 1000, gd_weeks = 52;
    std::uint64_t gd_seed = 0;
    gen_dataset->add_option("--space", gd_space, "parameter space JSON")->required();
    gen_dataset->add_option("--network", gd_network, "network directory")->required();
    gen_dataset->add_option("--runs", gd_runs, "number of simulated curves")->capture_default_str();
    gen_dataset->add_option("--weeks", gd_weeks, "season length")->capture_default_str();
    gen_dataset->add_option("--scenario", gd_scenario, "optional scenario JSON");
    gen_dataset->add_option("--seed", gd_seed, "master seed")->required();
    gen_dataset->add_option("--out", gd_out, "dataset directory")->required();
    gen_dataset->callback([&] {
        const auto space = pspace::load_space(gd_space);
        const auto network = net::load_network(gd_network);
        std::optional<sim::Scenario> scenario;
        if (!gd_scenario.empty()) scenario = data::scenario_from_file(gd_scenario);
        const auto dataset =
            data::generate_dataset(space, network, gd_runs, gd_weeks, scenario, gd_seed, jobs);
        data::save_dataset(dataset, gd_out);
        std::cout << "dataset: " << gd_runs << " curves x " << gd_weeks << " weeks -> " << gd_out
                  << "\n";
    });

    // train
    auto* train_cmd = app.add_subcommand("train", "train the two-branch forecaster");
    std::string tr_dataset, tr_config, tr_out;
    std::uint64_t tr_seed = 0;
    train_cmd->add_option("--dataset", tr_dataset, "dataset directory")->required();
    train_cmd->add_option("--config", tr_config, "model config JSON");
    train_cmd->add_option("--seed", tr_seed, "training seed")->required();
    train_cmd->add_option("--out", tr_out, "model output file")->required();
    train_cmd->callback([&] {
        const auto dataset = data::load_dataset(tr_dataset);
        auto model_config = forecast::model_config_from_json(
            tr_config.empty() ? nlohmann::json::object() : io::read_json(tr_config));
        model_config.counties = dataset.counties();
        model_config.season_length = dataset.weeks();
        auto model = forecast::init_model(model_config, tr_seed);
        const auto history = forecast::train(model, dataset, tr_seed);
        forecast::save_model(model, tr_out);
        std::cout << "trained " << history.epochs_run << " epochs (best " << history.best_epoch
                  << ", val loss "
                  << (history.val_loss.empty() ? 0.0 : history.val_loss[history.best_epoch - 1])
                  << ") -> " << tr_out << "\n";
    });

    // forecast
    auto* forecast_cmd = app.add_subcommand("forecast", "multi-step forecast from a history");
    std::string fc_model, fc_history, fc_out;
    int fc_horizon = 5, fc_mc = 0;
    std::uint64_t fc_seed = 0;
    forecast_cmd->add_option("--model", fc_model, "model file")->required();
    forecast_cmd->add_option("--history", fc_history, "state history CSV")->required();
    forecast_cmd->add_option("--horizon", fc_horizon, "weeks ahead")->capture_default_str();
    forecast_cmd->add_option("--mc", fc_mc, "MC dropout samples (0 = point forecast)")
        ->capture_default_str();
    forecast_cmd->add_option("--seed", fc_seed, "seed for MC dropout masks")->capture_default_str();
    forecast_cmd->add_option("--out", fc_out, "forecast CSV output")->required();
    forecast_cmd->callback([&] {
        const auto model = forecast::load_model(fc_model);
        const auto history = pipeline::load_state_history(fc_history);
        if (fc_mc > 0) {
            const auto mc = forecast::mc_dropout_forecast(model, history, fc_horizon, fc_mc, fc_seed);
            pipeline::write_forecast_csv(mc.mean, fc_out);
            const fs::path sd_path = fs::path(fc_out).replace_extension(".sd.csv");
            pipeline::write_forecast_csv(mc.sd, sd_path);
            std::cout << "mc forecast (" << fc_mc << " samples) -> " << fc_out << " + "
                      << sd_path.string() << "\n";
        } else {
            pipeline::write_forecast_csv(forecast::forecast_multistep(model, history, fc_horizon),
                                         fc_out);
            std::cout << "forecast -> " << fc_out << "\n";
        }
    });

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "score forecasts against a truth curve");
    std::string ev_truth, ev_forecasts, ev_out;
    evaluate->add_option("--truth", ev_truth, "truth epicurve CSV")->required();
    evaluate->add_option("--forecasts", ev_forecasts, "directory of fc_<week>.csv files")->required();
    evaluate->add_option("--out", ev_out, "report directory")->required();
    evaluate->callback([&] {
        const auto truth = sim::Epicurve::load_csv(ev_truth);
        std::map<int, Eigen::MatrixXd> forecasts;
        for (const auto& entry : fs::directory_iterator(ev_forecasts)) {
            const auto name = entry.path().filename().string();
            if (name.rfind("fc_", 0) != 0 || name.find("_sd") != std::string::npos) continue;
            forecasts[std::stoi(name.substr(3, name.find('.') - 3))] =
                pipeline::read_forecast_csv(entry.path());
        }
        const auto report = metrics::evaluate_run(truth, forecasts);
        metrics::save_report(report, ev_out);
        std::cout << "report (" << report.horizons << " horizons, " << forecasts.size()
                  << " issue weeks) -> " << ev_out << "\n";
    });

    // compare
    auto* compare = app.add_subcommand("compare", "per-county ratios between two reports");
    std::string cm_a, cm_b, cm_out;
    compare->add_option("--a", cm_a, "report directory of the favored model")->required();
    compare->add_option("--b", cm_b, "report directory of the comparison model")->required();
    compare->add_option("--out", cm_out, "ratio CSV output")->required();
    compare->callback([&] {
        const auto a = metrics::load_metric_set(fs::path(cm_a) / "per_county.csv");
        const auto b = metrics::load_metric_set(fs::path(cm_b) / "per_county.csv");
        const auto ratios = metrics::ratio_report(a, b);
        std::ostringstream out;
        out << "county,rmse_ratio,mape_ratio,pcorr_ratio\n";
        auto cell = [](const std::optional<double>& v) {
            return v ? io::format_double(*v) : std::string("undefined");
        };
        for (std::size_t c = 0; c < ratios.size(); ++c)
            out << (c + 1) << "," << cell(ratios[c].rmse_ratio) << "," << cell(ratios[c].mape_ratio)
                << "," << cell(ratios[c].pcorr_ratio) << "\n";
        io::write_file(cm_out, out.str());
        std::cout << "ratios -> " << cm_out << "\n";
    });

    // pipeline
    auto* pipeline_cmd = app.add_subcommand("pipeline", "run the full pipeline from a config");
    std::string pl_config;
    std::vector<std::string> pl_skip;
    pipeline_cmd->add_option("--config", pl_config, "pipeline config JSON")->required();
    pipeline_cmd->add_option("--skip", pl_skip, "stages to skip (reuse artifacts)")
        ->delimiter(',');
    pipeline_cmd->callback([&] {
        pipeline::StageFlags flags;
        for (const auto& stage : pl_skip) {
            if (stage == "gen-network") flags.skip_network = true;
            else if (stage == "calibrate") flags.skip_calibrate = true;
            else if (stage == "fit-params") flags.skip_fit = true;
            else if (stage == "gen-dataset") flags.skip_dataset = true;
            else if (stage == "train") flags.skip_train = true;
            else if (stage == "forecast") flags.skip_forecast = true;
            else if (stage == "evaluate") flags.skip_evaluate = true;
            else throw ConfigError("unknown stage to skip: '" + stage + "'");
        }
        const auto result = pipeline::run_pipeline(pl_config, flags, jobs);
        std::cout << "pipeline complete: " << result.artifact_hashes.size() << " artifacts under "
                  << result.out_dir.string() << "\n";
    });

    // whatif
    auto* whatif_cmd = app.add_subcommand("whatif", "scenario forecasting on an existing run");
    std::string wi_config, wi_scenario;
    whatif_cmd->add_option("--config", wi_config, "pipeline config JSON")->required();
    whatif_cmd->add_option("--scenario", wi_scenario, "scenario JSON")->required();
    whatif_cmd->callback([&] {
        const auto result = pipeline::whatif(wi_config, wi_scenario, jobs);
        std::cout << "what-if complete: artifacts under " << result.out_dir.string() << "\n";
    });

    CLI11_PARSE(app, argc, argv);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
