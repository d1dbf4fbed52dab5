#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epiforge/forecaster.hpp"

namespace epiforge::pipeline {

struct StageFlags {
    bool skip_network = false;
    bool skip_calibrate = false;
    bool skip_fit = false;
    bool skip_dataset = false;
    bool skip_train = false;
    bool skip_forecast = false;
    bool skip_evaluate = false;
};

struct RunResult {
    std::filesystem::path out_dir;
    // Relative artifact path -> FNV-1a hash of the file contents.
    std::map<std::string, std::string> artifact_hashes;
};

// Runs gen-network -> calibrate -> fit-params -> gen-dataset -> train ->
// forecast -> evaluate from one config file. Skipped stages load their
// existing artifacts instead. All randomness flows from the config's master
// seed (EPIFORGE_SEED overrides it).
RunResult run_pipeline(const std::filesystem::path& config_file, const StageFlags& flags = {},
                       int jobs = 1);

// Scenario forecasting on top of an existing run: generate scenario curves,
// extend the training set, retrain, and emit scenario-labeled forecasts next
// to the baseline ones.
RunResult whatif(const std::filesystem::path& config_file,
                 const std::filesystem::path& scenario_file, int jobs = 1);

// State-level history series: either an epicurve CSV (state column) or one
// value per line.
std::vector<double> load_state_history(const std::filesystem::path& file);

void write_forecast_csv(const Eigen::MatrixXd& forecast, const std::filesystem::path& file);
Eigen::MatrixXd read_forecast_csv(const std::filesystem::path& file);

// Hash of every regular file under dir (sorted relative paths), excluding
// manifest.json itself.
std::map<std::string, std::string> hash_artifacts(const std::filesystem::path& dir);

} // namespace epiforge::pipeline
