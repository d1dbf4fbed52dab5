#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epiforge/datasetgen.hpp"
#include "epiforge/rng.hpp"

namespace epiforge::forecast {

enum class Variant { Full, LeftOnly, RightDense };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
    int within_window = 52;  // a: weeks immediately preceding the target
    int between_window = 5;  // b: same seasonal week from past b seasons
    int season_length = 52;  // weeks per season in the history layout
    int left_layers = 2;     // stacked recurrent layers, left branch
    int right_layers = 1;    // stacked recurrent layers, right branch
    int hidden = 128;        // recurrent state width per layer
    int branch_dim = 256;    // dense output width of each branch
    int counties = 1;        // K; model output has K+1 columns
    double mu = 0.1;         // spatial consistency coefficient
    double lambda = 0.1;     // non-negativity coefficient
    double dropout_rate = 0.2;
    Variant variant = Variant::Full;
    double learning_rate = 1e-3;
    int max_epochs = 300;
    int patience = 50;
    int batch_size = 32;

    int output_dim() const { return counties + 1; }
    bool has_right_branch() const { return variant != Variant::LeftOnly; }
    void validate() const;
};

// Weight views of one recurrent cell; gate order is input, forget, output,
// candidate.
struct CellWeights {
    Eigen::Map<const Eigen::MatrixXd> w_in[4];
    Eigen::Map<const Eigen::MatrixXd> w_rec[4];
    Eigen::Map<const Eigen::VectorXd> bias[4];
};

// One cell update: sigmoid gates, tanh candidate, c = f.c_prev + i.cand,
// h = o.c (the merge of output gate and cell state is a plain product; there
// is no extra tanh on the state).
void cell_forward(const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
                  const Eigen::VectorXd& c_prev, const CellWeights& weights, Eigen::VectorXd& h_out,
                  Eigen::VectorXd& c_out);

// Flat parameter storage with named tensor views. Offsets are a pure
// function of the config, which keeps Adam, serialization and gradient
// checking straightforward.
struct TensorSpec {
    std::string name;
    int rows = 0;
    int cols = 0; // 1 for bias vectors, but also for single-input weight matrices
    bool is_bias = false;
    std::ptrdiff_t offset = 0;
};

class ParamPack {
public:
    ParamPack() = default;
    explicit ParamPack(std::vector<TensorSpec> specs);

    Eigen::VectorXd& flat() { return data_; }
    const Eigen::VectorXd& flat() const { return data_; }
    std::ptrdiff_t size() const { return data_.size(); }

    const std::vector<TensorSpec>& specs() const { return specs_; }
    int index_of(const std::string& name) const;

    Eigen::Map<Eigen::MatrixXd> matrix(int idx);
    Eigen::Map<const Eigen::MatrixXd> matrix(int idx) const;
    Eigen::Map<Eigen::VectorXd> vector(int idx);
    Eigen::Map<const Eigen::VectorXd> vector(int idx) const;

private:
    std::vector<TensorSpec> specs_;
    Eigen::VectorXd data_;
};

std::vector<TensorSpec> tensor_layout(const ModelConfig& config);

struct ForecastModel {
    ModelConfig config;
    // Per-column scale recorded at training time; column 0 also scales the
    // (state level) input features.
    Eigen::VectorXd norm_scale;
    ParamPack params;
};

ForecastModel init_model(const ModelConfig& config, std::uint64_t seed);

struct FeaturePair {
    Eigen::VectorXd x1;     // length a
    Eigen::VectorXd x2;     // length b (empty when b == 0)
    Eigen::VectorXd target; // length K+1
};

// x1 = the a values before t; x2 = the value at the same seasonal week in
// each of the past b seasons, oldest first. Throws a history error naming
// the shortfall.
FeaturePair build_features(const std::vector<double>& state_series, int t, int a, int b,
                           int season_length);

// Dropout masks for the two branch dense outputs (entries 0 or 1; the kept
// entries are rescaled by 1/(1-rate) inside the forward pass).
struct DropoutMasks {
    Eigen::VectorXd left;
    Eigen::VectorXd right;
};

DropoutMasks draw_dropout_masks(const ModelConfig& config, Rng& rng);

// Raw-scale forward pass: normalizes, runs both branches, merges, and
// denormalizes. rng is consumed only when dropout_active.
Eigen::VectorXd forward(const ForecastModel& model, const Eigen::VectorXd& x1,
                        const Eigen::VectorXd& x2, bool dropout_active = false, Rng* rng = nullptr);

// Squared L2 error plus mu*phi + lambda*delta, where phi is the absolute gap
// between the state output and the county sum and delta the mean negative
// part magnitude.
double loss(const Eigen::VectorXd& z, const Eigen::VectorXd& z_hat, double mu, double lambda);
double spatial_gap(const Eigen::VectorXd& z_hat);      // phi
double negativity_penalty(const Eigen::VectorXd& z_hat); // delta

// Loss and full analytic gradient for one normalized sample. masks == nullptr
// disables dropout.
double sample_loss_and_gradient(const ForecastModel& model, const FeaturePair& normalized_pair,
                                Eigen::VectorXd& gradient, const DropoutMasks* masks = nullptr);

struct TrainResult {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int best_epoch = 0;  // 1-based; 0 when validation never ran
    int epochs_run = 0;
};

// Builds one-week-ahead feature pairs from the dataset (curves concatenated
// in index order form the synthetic multi-season history), normalizes by the
// training targets' per-column maxima, and minimizes the constrained loss
// with Adam (beta1 0.9, beta2 0.999, eps 1e-8). Early stops when validation
// loss fails to improve for `patience` consecutive epochs and returns the
// best-validation snapshot (earliest epoch wins ties).
TrainResult train(ForecastModel& model, const data::Dataset& dataset, std::uint64_t seed);

// Iterative multi-step forecast: each step predicts one week ahead, appends
// the state level prediction to the history and advances the seasonal week.
Eigen::MatrixXd forecast_multistep(const ForecastModel& model,
                                   const std::vector<double>& state_history, int horizon);

struct McForecast {
    Eigen::MatrixXd mean;
    Eigen::MatrixXd sd; // population standard deviation
};

McForecast mc_dropout_forecast(const ForecastModel& model, const std::vector<double>& state_history,
                               int horizon, int n_samples, std::uint64_t seed);

void save_model(const ForecastModel& model, const std::filesystem::path& file);
ForecastModel load_model(const std::filesystem::path& file);

ModelConfig model_config_from_json(const nlohmann::json& j);

std::uint64_t weight_checksum(const ForecastModel& model);

} // namespace epiforge::forecast
