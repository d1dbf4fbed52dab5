#include "epiforge/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "epiforge/calib.hpp"
#include "epiforge/errors.hpp"
#include "epiforge/evalmetrics.hpp"
#include "epiforge/io.hpp"

namespace epiforge::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kWhatifTag = 0x7768;

struct PipelineConfig {
    fs::path base_dir;
    fs::path out_dir;
    std::uint64_t master_seed = 0;
    net::NetworkConfig network;
    fs::path surveillance_dir;
    calib::CalibrateOptions calibrate;
    std::vector<sim::VaccineSchedule> schedules;
    int dataset_runs = 100;
    int weeks = 52;
    nlohmann::json model;
    int horizon = 5;
    int mc_samples = 0;
    std::vector<int> issue_weeks; // empty = every scorable week
    int test_curve = 0;
    int whatif_runs = 0; // 0 = same as dataset_runs
    nlohmann::json raw;
};

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

PipelineConfig parse_config(const fs::path& config_file) {
    const auto j = io::read_json(config_file);
    PipelineConfig config;
    config.raw = j;
    config.base_dir = config_file.has_parent_path() ? config_file.parent_path() : fs::path(".");
    try {
        config.out_dir = resolve(config.base_dir, j.at("out_dir").get<std::string>());
        config.master_seed = j.at("master_seed").get<std::uint64_t>();
        if (const char* env = std::getenv("EPIFORGE_SEED")) {
            config.master_seed = std::stoull(env);
            std::cerr << "EPIFORGE_SEED overrides master seed: " << config.master_seed << "\n";
        }

        const auto& n = j.at("network");
        config.network.county_sizes = n.at("county_sizes").get<std::vector<std::int64_t>>();
        config.network.mean_household_size =
            n.value("mean_household_size", config.network.mean_household_size);
        config.network.mean_external_degree =
            n.value("mean_external_degree", config.network.mean_external_degree);
        config.network.cross_county_mix = n.value("cross_county_mix", config.network.cross_county_mix);
        if (n.contains("external_weight")) {
            const auto& w = n.at("external_weight");
            config.network.external_weight =
                w.at("kind") == "constant"
                    ? net::WeightDist::constant(w.at("value").get<double>())
                    : net::WeightDist::uniform(w.at("lo").get<double>(), w.at("hi").get<double>());
        }
        if (n.contains("household_weight")) {
            const auto& w = n.at("household_weight");
            config.network.household_weight =
                w.at("kind") == "constant"
                    ? net::WeightDist::constant(w.at("value").get<double>())
                    : net::WeightDist::uniform(w.at("lo").get<double>(), w.at("hi").get<double>());
        }

        config.surveillance_dir = resolve(config.base_dir, j.at("surveillance_dir").get<std::string>());

        if (j.contains("calibration")) {
            const auto& c = j.at("calibration");
            config.calibrate.replicates = c.value("replicates", config.calibrate.replicates);
            config.calibrate.weeks = c.value("weeks", config.calibrate.weeks);
            config.calibrate.max_iterations = c.value("max_iterations", config.calibrate.max_iterations);
            config.calibrate.tau_start = c.value("tau_start", config.calibrate.tau_start);
        }

        if (j.contains("schedules"))
            for (const auto& s : j.at("schedules")) {
                sim::VaccineSchedule schedule;
                schedule.efficacy = s.at("efficacy").get<double>();
                schedule.compliance = s.value("compliance", 1.0);
                for (const auto& [week, c] : s.at("weekly_coverage").items())
                    schedule.weekly_coverage[std::stoi(week)] = c.get<double>();
                schedule.validate();
                config.schedules.push_back(std::move(schedule));
            }

        const auto& d = j.at("dataset");
        config.dataset_runs = d.at("runs").get<int>();
        config.weeks = d.value("weeks", config.weeks);

        config.model = j.value("model", nlohmann::json::object());

        if (j.contains("forecast")) {
            const auto& f = j.at("forecast");
            config.horizon = f.value("horizon", config.horizon);
            config.mc_samples = f.value("mc_samples", config.mc_samples);
            if (f.contains("issue_weeks"))
                config.issue_weeks = f.at("issue_weeks").get<std::vector<int>>();
        }
        if (j.contains("evaluate")) config.test_curve = j.at("evaluate").value("test_curve", 0);
        if (j.contains("whatif")) config.whatif_runs = j.at("whatif").value("runs", 0);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("pipeline config " + config_file.string() + ": " + e.what());
    }
    config.network.validate();
    return config;
}

struct StageError : DataError {
    StageError(const std::string& stage, const std::string& cause)
        : DataError("stage '" + stage + "' failed: " + cause) {}
};

forecast::ModelConfig make_model_config(const PipelineConfig& config, int counties) {
    auto model_config = forecast::model_config_from_json(config.model);
    model_config.counties = counties;
    model_config.season_length = config.weeks;
    model_config.validate();
    return model_config;
}

// Forecasts for the chosen test curve: history is every curve before it in
// concatenated order plus the observed prefix of the test curve itself.
void forecast_stage(const PipelineConfig& config, const forecast::ForecastModel& model,
                    const data::Dataset& dataset, int truth_index, const fs::path& out_dir,
                    std::uint64_t mc_seed) {
    const int ell = dataset.weeks();
    std::vector<double> base_history;
    base_history.reserve(static_cast<std::size_t>(truth_index) * ell);
    for (int i = 0; i < truth_index; ++i)
        for (int t = 0; t < ell; ++t) base_history.push_back(dataset.curves[i].state(t));

    std::vector<int> issue_weeks = config.issue_weeks;
    if (issue_weeks.empty())
        for (int t = 0; t + 1 < ell; ++t) issue_weeks.push_back(t);

    const auto& truth = dataset.curves[truth_index];
    fs::create_directories(out_dir);
    for (int t : issue_weeks) {
        if (t < 0 || t >= ell)
            throw ConfigError("forecast: issue week " + std::to_string(t) + " outside season");
        std::vector<double> history = base_history;
        for (int w = 0; w <= t; ++w) history.push_back(truth.state(w));

        char name[48];
        std::snprintf(name, sizeof(name), "fc_%03d.csv", t);
        if (config.mc_samples > 0) {
            const auto mc = forecast::mc_dropout_forecast(
                model, history, config.horizon, config.mc_samples,
                substream(mc_seed, streams::dropout, static_cast<std::uint64_t>(t)));
            write_forecast_csv(mc.mean, out_dir / name);
            char sd_name[48];
            std::snprintf(sd_name, sizeof(sd_name), "fc_%03d_sd.csv", t);
            write_forecast_csv(mc.sd, out_dir / sd_name);
        } else {
            write_forecast_csv(forecast::forecast_multistep(model, history, config.horizon),
                               out_dir / name);
        }
    }
}

std::map<int, Eigen::MatrixXd> read_forecast_dir(const fs::path& dir) {
    std::map<int, Eigen::MatrixXd> forecasts;
    if (!fs::exists(dir)) throw DataError("forecast directory missing: " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("fc_", 0) != 0 || name.find("_sd") != std::string::npos) continue;
        const int week = std::stoi(name.substr(3, name.find('.') - 3));
        forecasts[week] = read_forecast_csv(entry.path());
    }
    if (forecasts.empty()) throw DataError("no forecast files under " + dir.string());
    return forecasts;
}

void write_manifest(const PipelineConfig& config, const fs::path& out_dir,
                    std::map<std::string, std::string> hashes) {
    nlohmann::json manifest;
    manifest["master_seed"] = config.master_seed;
    manifest["config_hash"] = io::to_hex(io::fnv1a(config.raw.dump()));
    manifest["artifacts"] = hashes;
    io::write_json(out_dir / "manifest.json", manifest);
}

} // namespace

std::map<std::string, std::string> hash_artifacts(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().filename() != "manifest.json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::map<std::string, std::string> hashes;
    for (const auto& file : files)
        hashes[fs::relative(file, dir).generic_string()] = io::hash_file_hex(file);
    return hashes;
}

void write_forecast_csv(const Eigen::MatrixXd& forecast, const fs::path& file) {
    std::ostringstream out;
    out << "horizon,state";
    for (int c = 1; c < forecast.cols(); ++c) out << ",county_" << c;
    out << "\n";
    for (int h = 0; h < forecast.rows(); ++h) {
        out << (h + 1);
        for (int c = 0; c < forecast.cols(); ++c) out << "," << io::format_double(forecast(h, c));
        out << "\n";
    }
    io::write_file(file, out.str());
}

Eigen::MatrixXd read_forecast_csv(const fs::path& file) {
    const auto lines = io::split_lines(io::read_file(file));
    if (lines.size() < 2) throw DataError("forecast csv too short: " + file.string());
    const auto header = io::split(lines[0], ',');
    const auto cols = static_cast<int>(header.size()) - 1;
    Eigen::MatrixXd m(static_cast<int>(lines.size()) - 1, cols);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto fields = io::split(lines[i], ',');
        if (static_cast<int>(fields.size()) != cols + 1)
            throw DataError("forecast csv row width mismatch in " + file.string());
        for (int c = 0; c < cols; ++c)
            m(static_cast<int>(i) - 1, c) = io::parse_double(fields[c + 1]);
    }
    return m;
}

std::vector<double> load_state_history(const fs::path& file) {
    const auto lines = io::split_lines(io::read_file(file));
    if (lines.empty()) throw DataError("empty history file: " + file.string());
    std::vector<double> series;
    if (lines.front().rfind("week,state", 0) == 0) {
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (lines[i].empty()) continue;
            series.push_back(io::parse_double(io::split(lines[i], ',').at(1)));
        }
    } else {
        for (const auto& line : lines) {
            if (line.empty()) continue;
            series.push_back(io::parse_double(line));
        }
    }
    return series;
}

RunResult run_pipeline(const fs::path& config_file, const StageFlags& flags, int jobs) {
    const auto config = parse_config(config_file);
    const auto& out = config.out_dir;
    fs::create_directories(out);
    io::write_json(out / "config.resolved.json", config.raw);

    // Stage 1: network.
    net::ContactNetwork network;
    try {
        if (flags.skip_network) {
            network = net::load_network(out / "network");
        } else {
            network = net::generate_network(config.network, substream(config.master_seed, streams::network));
            net::save_network(network, config.network, config.master_seed, out / "network");
        }
    } catch (const std::exception& e) {
        throw StageError("gen-network", e.what());
    }

    // Stage 2: calibration samples and tau recovery.
    nlohmann::json samples_doc;
    try {
        if (flags.skip_calibrate) {
            samples_doc = io::read_json(out / "calibration" / "samples.json");
        } else {
            std::string target;
            const auto series = calib::load_surveillance_dir(config.surveillance_dir, &target);
            const auto samples = calib::collect_samples(target, series);

            samples_doc["target"] = target;
            samples_doc["samples"] = nlohmann::json::array();
            for (std::size_t i = 0; i < samples.size(); ++i) {
                sim::DiseaseParams base;
                base.incubation = pspace::default_incubation();
                base.infectious_period = pspace::default_infectious_period();
                base.tau = config.calibrate.tau_start;
                base.initial_infectious =
                    std::clamp<std::int64_t>(std::llround(samples[i].initial_cases), 0,
                                             network.n_persons());
                const auto result = calib::calibrate_tau(
                    samples[i].attack_rate, network, base,
                    substream(config.master_seed, streams::calibrate, i), config.calibrate);
                samples_doc["samples"].push_back({{"region", samples[i].region},
                                                  {"season", samples[i].season},
                                                  {"attack_rate", samples[i].attack_rate},
                                                  {"initial_cases", samples[i].initial_cases},
                                                  {"tau", result.tau},
                                                  {"residual", result.residual},
                                                  {"low_confidence", result.low_confidence}});
            }
            io::write_json(out / "calibration" / "samples.json", samples_doc);
        }
    } catch (const std::exception& e) {
        throw StageError("calibrate", e.what());
    }

    // Stage 3: parameter space.
    pspace::ParamSpace space;
    try {
        if (flags.skip_fit) {
            space = pspace::load_space(out / "params" / "space.json");
        } else {
            std::vector<calib::CalibrationSample> samples;
            std::vector<double> taus;
            for (const auto& s : samples_doc.at("samples")) {
                calib::CalibrationSample sample;
                sample.region = s.at("region");
                sample.season = s.at("season");
                sample.attack_rate = s.at("attack_rate");
                sample.initial_cases = s.at("initial_cases");
                samples.push_back(std::move(sample));
                taus.push_back(s.at("tau").get<double>());
            }
            space = pspace::build_space(samples, taus, config.schedules);
            pspace::save_space(space, out / "params" / "space.json");
        }
    } catch (const std::exception& e) {
        throw StageError("fit-params", e.what());
    }

    // Stage 4: synthetic dataset.
    data::Dataset dataset;
    try {
        if (flags.skip_dataset) {
            dataset = data::load_dataset(out / "dataset");
        } else {
            dataset = data::generate_dataset(space, network, config.dataset_runs, config.weeks,
                                             std::nullopt, config.master_seed, jobs);
            data::save_dataset(dataset, out / "dataset");
        }
    } catch (const std::exception& e) {
        throw StageError("gen-dataset", e.what());
    }

    // Stage 5: training.
    forecast::ForecastModel model;
    try {
        if (flags.skip_train) {
            model = forecast::load_model(out / "model.json");
        } else {
            const auto model_config = make_model_config(config, dataset.counties());
            model = forecast::init_model(model_config, substream(config.master_seed, streams::train));
            const auto history = forecast::train(model, dataset, config.master_seed);
            forecast::save_model(model, out / "model.json");
            io::write_json(out / "training_history.json",
                           {{"train_loss", history.train_loss},
                            {"val_loss", history.val_loss},
                            {"best_epoch", history.best_epoch},
                            {"epochs_run", history.epochs_run}});
        }
    } catch (const std::exception& e) {
        throw StageError("train", e.what());
    }

    // Stage 6: forecasts for the held-out test curve.
    int truth_index = 0;
    try {
        if (dataset.split.test.empty()) throw DataError("dataset has no test split");
        if (config.test_curve < 0 || config.test_curve >= static_cast<int>(dataset.split.test.size()))
            throw ConfigError("evaluate.test_curve out of range");
        truth_index = dataset.split.test[config.test_curve];
        if (!flags.skip_forecast)
            forecast_stage(config, model, dataset, truth_index, out / "forecasts",
                           config.master_seed);
    } catch (const std::exception& e) {
        throw StageError("forecast", e.what());
    }

    // Stage 7: evaluation report.
    try {
        if (!flags.skip_evaluate) {
            const auto forecasts = read_forecast_dir(out / "forecasts");
            const auto report = metrics::evaluate_run(dataset.curves[truth_index], forecasts);
            metrics::save_report(report, out / "report");
            dataset.curves[truth_index].save_csv(out / "report" / "truth.csv");
        }
    } catch (const std::exception& e) {
        throw StageError("evaluate", e.what());
    }

    RunResult result;
    result.out_dir = out;
    result.artifact_hashes = hash_artifacts(out);
    write_manifest(config, out, result.artifact_hashes);
    return result;
}

RunResult whatif(const fs::path& config_file, const fs::path& scenario_file, int jobs) {
    const auto config = parse_config(config_file);
    const auto& out = config.out_dir;
    const auto scenario = data::scenario_from_file(scenario_file);

    net::ContactNetwork network;
    pspace::ParamSpace space;
    data::Dataset baseline;
    try {
        network = net::load_network(out / "network");
        space = pspace::load_space(out / "params" / "space.json");
        baseline = data::load_dataset(out / "dataset");
    } catch (const std::exception& e) {
        throw StageError("whatif",
                         std::string("baseline artifacts missing (run the pipeline first): ") +
                             e.what());
    }

    std::string label = scenario.label.empty() ? "scenario" : scenario.label;
    for (auto& ch : label)
        if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
    const fs::path whatif_dir = out / ("whatif_" + label);
    fs::create_directories(whatif_dir);

    try {
        const int runs = config.whatif_runs > 0 ? config.whatif_runs : config.dataset_runs;
        const auto scenario_data =
            data::generate_dataset(space, network, runs, config.weeks, scenario,
                                   substream(config.master_seed, kWhatifTag), jobs);

        // Expanded training set: baseline train curves, then the scenario
        // curves, then the baseline validate/test blocks.
        data::Dataset combined;
        auto append = [&](int idx, const data::Dataset& src, std::vector<int>& slot) {
            slot.push_back(static_cast<int>(combined.curves.size()));
            combined.curves.push_back(src.curves[idx]);
            combined.provenance.push_back(src.provenance[idx]);
        };
        for (int i : baseline.split.train) append(i, baseline, combined.split.train);
        for (std::size_t i = 0; i < scenario_data.curves.size(); ++i)
            append(static_cast<int>(i), scenario_data, combined.split.train);
        for (int i : baseline.split.validate) append(i, baseline, combined.split.validate);
        for (int i : baseline.split.test) append(i, baseline, combined.split.test);
        data::save_dataset(combined, whatif_dir / "dataset");

        const auto model_config = make_model_config(config, combined.counties());
        auto model =
            forecast::init_model(model_config, substream(config.master_seed, kWhatifTag, streams::train));
        const auto history = forecast::train(model, combined, substream(config.master_seed, kWhatifTag));
        forecast::save_model(model, whatif_dir / "model.json");
        io::write_json(whatif_dir / "training_history.json",
                       {{"train_loss", history.train_loss},
                        {"val_loss", history.val_loss},
                        {"best_epoch", history.best_epoch},
                        {"epochs_run", history.epochs_run}});

        if (combined.split.test.empty()) throw DataError("combined dataset has no test split");
        const int truth_index =
            combined.split.test[std::min<int>(config.test_curve,
                                              static_cast<int>(combined.split.test.size()) - 1)];
        forecast_stage(config, model, combined, truth_index, whatif_dir / "forecasts",
                       substream(config.master_seed, kWhatifTag));

        const auto forecasts = read_forecast_dir(whatif_dir / "forecasts");
        const auto report = metrics::evaluate_run(combined.curves[truth_index], forecasts);
        metrics::save_report(report, whatif_dir / "report");
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("whatif", e.what());
    }

    RunResult result;
    result.out_dir = whatif_dir;
    result.artifact_hashes = hash_artifacts(whatif_dir);
    write_manifest(config, whatif_dir, result.artifact_hashes);
    return result;
}

} // namespace epiforge::pipeline
