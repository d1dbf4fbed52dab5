#include "epiforge/forecaster.hpp"

#include <algorithm>
#include <cmath>

#include "epiforge/errors.hpp"
#include "epiforge/io.hpp"

namespace epiforge::forecast {

std::string variant_name(Variant v) {
    switch (v) {
    case Variant::Full: return "full";
    case Variant::LeftOnly: return "lonly";
    case Variant::RightDense: return "rdense";
    }
    throw NumericError("unknown variant");
}

Variant variant_from_name(const std::string& name) {
    if (name == "full") return Variant::Full;
    if (name == "lonly") return Variant::LeftOnly;
    if (name == "rdense") return Variant::RightDense;
    throw ConfigError("unknown model variant '" + name + "' (full|lonly|rdense)");
}

void ModelConfig::validate() const {
    if (within_window < 1) throw ConfigError("model config: within_window (a) must be >= 1");
    if (has_right_branch() && between_window < 1)
        throw ConfigError("model config: between_window (b) must be >= 1 unless variant is lonly");
    if (between_window < 0) throw ConfigError("model config: between_window (b) must be >= 0");
    if (season_length < 1) throw ConfigError("model config: season_length must be >= 1");
    if (left_layers < 1) throw ConfigError("model config: left_layers must be >= 1");
    if (variant == Variant::Full && right_layers < 1)
        throw ConfigError("model config: right_layers must be >= 1 for the full variant");
    if (hidden < 1 || branch_dim < 1) throw ConfigError("model config: widths must be >= 1");
    if (counties < 1) throw ConfigError("model config: counties (K) must be >= 1");
    if (mu < 0 || lambda < 0) throw ConfigError("model config: mu and lambda must be >= 0");
    if (dropout_rate < 0 || dropout_rate >= 1)
        throw ConfigError("model config: dropout_rate must be in [0,1)");
    if (learning_rate <= 0) throw ConfigError("model config: learning_rate must be positive");
    if (max_epochs < 1 || patience < 1 || batch_size < 1)
        throw ConfigError("model config: epochs, patience and batch_size must be >= 1");
}

// ---------------------------------------------------------------------------
// Parameter layout
// ---------------------------------------------------------------------------

namespace {
constexpr char kGateLetter[4] = {'i', 'f', 'o', 'c'};

// b == 0 is treated as "no right branch" everywhere.
int effective_between(const ModelConfig& config) {
    return config.has_right_branch() ? config.between_window : 0;
}
} // namespace

std::vector<TensorSpec> tensor_layout(const ModelConfig& config) {
    config.validate();
    std::vector<TensorSpec> specs;
    auto add = [&](const std::string& name, int rows, int cols, bool is_bias = false) {
        specs.push_back({name, rows, cols, is_bias, 0});
    };
    auto add_lstm_stack = [&](const std::string& branch, int layers) {
        for (int l = 0; l < layers; ++l) {
            const int in_dim = l == 0 ? 1 : config.hidden;
            for (int g = 0; g < 4; ++g) {
                const std::string suffix = branch + "." + std::to_string(l) + ".";
                add(suffix + "W" + kGateLetter[g], config.hidden, in_dim);
                add(suffix + "U" + kGateLetter[g], config.hidden, config.hidden);
                add(suffix + "b" + kGateLetter[g], config.hidden, 1, true);
            }
        }
    };

    add_lstm_stack("left", config.left_layers);
    add("left.dense.W", config.branch_dim, config.hidden);
    add("left.dense.b", config.branch_dim, 1, true);

    if (config.variant == Variant::Full) {
        add_lstm_stack("right", config.right_layers);
        add("right.dense.W", config.branch_dim, config.hidden);
        add("right.dense.b", config.branch_dim, 1, true);
    } else if (config.variant == Variant::RightDense) {
        add("right.dense.W", config.branch_dim, config.between_window);
        add("right.dense.b", config.branch_dim, 1, true);
    }

    add("merge.W", config.output_dim(), config.branch_dim);
    add("merge.b", config.output_dim(), 1, true);

    std::ptrdiff_t offset = 0;
    for (auto& spec : specs) {
        spec.offset = offset;
        offset += static_cast<std::ptrdiff_t>(spec.rows) * spec.cols;
    }
    return specs;
}

ParamPack::ParamPack(std::vector<TensorSpec> specs) : specs_(std::move(specs)) {
    std::ptrdiff_t total = 0;
    for (const auto& spec : specs_) total += static_cast<std::ptrdiff_t>(spec.rows) * spec.cols;
    data_ = Eigen::VectorXd::Zero(total);
}

int ParamPack::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < specs_.size(); ++i)
        if (specs_[i].name == name) return static_cast<int>(i);
    throw NumericError("no tensor named '" + name + "'");
}

Eigen::Map<Eigen::MatrixXd> ParamPack::matrix(int idx) {
    const auto& s = specs_.at(idx);
    return {data_.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const Eigen::MatrixXd> ParamPack::matrix(int idx) const {
    const auto& s = specs_.at(idx);
    return {data_.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<Eigen::VectorXd> ParamPack::vector(int idx) {
    const auto& s = specs_.at(idx);
    return {data_.data() + s.offset, s.rows};
}

Eigen::Map<const Eigen::VectorXd> ParamPack::vector(int idx) const {
    const auto& s = specs_.at(idx);
    return {data_.data() + s.offset, s.rows};
}

ForecastModel init_model(const ModelConfig& config, std::uint64_t seed) {
    ForecastModel model;
    model.config = config;
    model.norm_scale = Eigen::VectorXd::Ones(config.output_dim());
    model.params = ParamPack(tensor_layout(config));

    Rng rng(substream(seed, streams::train, 0x696E6974));
    for (std::size_t i = 0; i < model.params.specs().size(); ++i) {
        const auto& spec = model.params.specs()[i];
        if (spec.is_bias) {
            // Biases are deterministic: forget gates start open at 1.
            const bool forget_gate = spec.name.size() >= 2 &&
                                     spec.name.compare(spec.name.size() - 2, 2, "bf") == 0;
            model.params.vector(static_cast<int>(i)).setConstant(forget_gate ? 1.0 : 0.0);
        } else {
            const double scale = 1.0 / std::sqrt(static_cast<double>(spec.cols));
            auto mat = model.params.matrix(static_cast<int>(i));
            for (int c = 0; c < spec.cols; ++c)
                for (int r = 0; r < spec.rows; ++r) mat(r, c) = rng.uniform(-scale, scale);
        }
    }
    return model;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

void cell_forward(const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
                  const Eigen::VectorXd& c_prev, const CellWeights& weights, Eigen::VectorXd& h_out,
                  Eigen::VectorXd& c_out) {
    auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const Eigen::VectorXd zi = weights.w_in[0] * x + weights.w_rec[0] * h_prev + weights.bias[0];
    const Eigen::VectorXd zf = weights.w_in[1] * x + weights.w_rec[1] * h_prev + weights.bias[1];
    const Eigen::VectorXd zo = weights.w_in[2] * x + weights.w_rec[2] * h_prev + weights.bias[2];
    const Eigen::VectorXd zc = weights.w_in[3] * x + weights.w_rec[3] * h_prev + weights.bias[3];
    const Eigen::VectorXd gi = zi.unaryExpr(sigmoid);
    const Eigen::VectorXd gf = zf.unaryExpr(sigmoid);
    const Eigen::VectorXd go = zo.unaryExpr(sigmoid);
    const Eigen::VectorXd cand = zc.array().tanh();
    c_out = gf.cwiseProduct(c_prev) + gi.cwiseProduct(cand);
    h_out = go.cwiseProduct(c_out);
}

namespace {

struct LayerIdx {
    int w[4], u[4], b[4];
};

struct ModelIndices {
    std::vector<LayerIdx> left, right;
    int left_dense_w = -1, left_dense_b = -1;
    int right_dense_w = -1, right_dense_b = -1;
    int merge_w = -1, merge_b = -1;
};

ModelIndices build_indices(const ForecastModel& model) {
    const auto& pack = model.params;
    ModelIndices idx;
    auto stack = [&](const std::string& branch, int layers) {
        std::vector<LayerIdx> out(layers);
        for (int l = 0; l < layers; ++l)
            for (int g = 0; g < 4; ++g) {
                const std::string suffix = branch + "." + std::to_string(l) + ".";
                out[l].w[g] = pack.index_of(suffix + "W" + kGateLetter[g]);
                out[l].u[g] = pack.index_of(suffix + "U" + kGateLetter[g]);
                out[l].b[g] = pack.index_of(suffix + "b" + kGateLetter[g]);
            }
        return out;
    };
    idx.left = stack("left", model.config.left_layers);
    idx.left_dense_w = pack.index_of("left.dense.W");
    idx.left_dense_b = pack.index_of("left.dense.b");
    if (model.config.variant == Variant::Full)
        idx.right = stack("right", model.config.right_layers);
    if (model.config.has_right_branch()) {
        idx.right_dense_w = pack.index_of("right.dense.W");
        idx.right_dense_b = pack.index_of("right.dense.b");
    }
    idx.merge_w = pack.index_of("merge.W");
    idx.merge_b = pack.index_of("merge.b");
    return idx;
}

struct LayerCache {
    Eigen::MatrixXd input;    // D x T
    Eigen::MatrixXd gate[4];  // H x T (i, f, o, candidate)
    Eigen::MatrixXd c, h;     // H x T
};

struct BranchCache {
    std::vector<LayerCache> layers;
    Eigen::VectorXd dense_in;  // top-layer h at the last step
    Eigen::VectorXd out;       // branch output after optional dropout
};

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

void lstm_stack_forward(const ParamPack& pack, const std::vector<LayerIdx>& layers, int hidden,
                        const Eigen::VectorXd& sequence, BranchCache& cache) {
    const auto T = static_cast<int>(sequence.size());
    cache.layers.resize(layers.size());
    Eigen::MatrixXd input = sequence.transpose(); // 1 x T

    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto& lc = cache.layers[l];
        lc.input = input;
        for (auto& g : lc.gate) g.resize(hidden, T);
        lc.c.resize(hidden, T);
        lc.h.resize(hidden, T);

        Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(hidden);
        Eigen::VectorXd c_prev = Eigen::VectorXd::Zero(hidden);
        for (int t = 0; t < T; ++t) {
            for (int g = 0; g < 4; ++g) {
                Eigen::VectorXd z = pack.matrix(layers[l].w[g]) * lc.input.col(t) +
                                    pack.matrix(layers[l].u[g]) * h_prev +
                                    pack.vector(layers[l].b[g]);
                if (g == 3)
                    lc.gate[g].col(t) = z.array().tanh();
                else
                    lc.gate[g].col(t) = z.unaryExpr([](double v) { return sigmoid(v); });
            }
            lc.c.col(t) = lc.gate[1].col(t).cwiseProduct(c_prev) +
                          lc.gate[0].col(t).cwiseProduct(lc.gate[3].col(t));
            lc.h.col(t) = lc.gate[2].col(t).cwiseProduct(lc.c.col(t));
            h_prev = lc.h.col(t);
            c_prev = lc.c.col(t);
        }
        input = lc.h;
    }
    cache.dense_in = cache.layers.back().h.col(T - 1);
}

// Returns the gradient w.r.t. the branch's dense input (dense_in) while
// accumulating parameter gradients; then backpropagates through time.
void lstm_stack_backward(const ParamPack& pack, const std::vector<LayerIdx>& layers, int hidden,
                         const BranchCache& cache, const Eigen::VectorXd& d_dense_in,
                         Eigen::VectorXd& grad_flat, const std::vector<TensorSpec>& specs) {
    auto gmat = [&](int idx) {
        const auto& s = specs[idx];
        return Eigen::Map<Eigen::MatrixXd>(grad_flat.data() + s.offset, s.rows, s.cols);
    };
    auto gvec = [&](int idx) {
        const auto& s = specs[idx];
        return Eigen::Map<Eigen::VectorXd>(grad_flat.data() + s.offset, s.rows);
    };

    const auto T = static_cast<int>(cache.layers.front().input.cols());
    // External gradient flowing into each layer's h outputs; for the top
    // layer only the last step receives the dense gradient.
    Eigen::MatrixXd dh_ext = Eigen::MatrixXd::Zero(hidden, T);
    dh_ext.col(T - 1) = d_dense_in;

    for (int l = static_cast<int>(layers.size()) - 1; l >= 0; --l) {
        const auto& lc = cache.layers[l];
        const auto in_dim = static_cast<int>(lc.input.rows());
        Eigen::MatrixXd d_input = Eigen::MatrixXd::Zero(in_dim, T);

        Eigen::VectorXd dh_carry = Eigen::VectorXd::Zero(hidden);
        Eigen::VectorXd dc_carry = Eigen::VectorXd::Zero(hidden);
        for (int t = T - 1; t >= 0; --t) {
            const Eigen::VectorXd dh = dh_ext.col(t) + dh_carry;
            const auto gi = lc.gate[0].col(t);
            const auto gf = lc.gate[1].col(t);
            const auto go = lc.gate[2].col(t);
            const auto cand = lc.gate[3].col(t);

            const Eigen::VectorXd d_o = dh.cwiseProduct(lc.c.col(t));
            const Eigen::VectorXd dc = dc_carry + dh.cwiseProduct(go);
            const Eigen::VectorXd c_prev =
                t > 0 ? Eigen::VectorXd(lc.c.col(t - 1)) : Eigen::VectorXd::Zero(hidden);
            const Eigen::VectorXd d_i = dc.cwiseProduct(cand);
            const Eigen::VectorXd d_f = dc.cwiseProduct(c_prev);
            const Eigen::VectorXd d_cand = dc.cwiseProduct(gi);
            dc_carry = dc.cwiseProduct(gf);

            Eigen::VectorXd dz[4];
            dz[0] = d_i.cwiseProduct(gi).cwiseProduct((1.0 - gi.array()).matrix());
            dz[1] = d_f.cwiseProduct(gf).cwiseProduct((1.0 - gf.array()).matrix());
            dz[2] = d_o.cwiseProduct(go).cwiseProduct((1.0 - go.array()).matrix());
            dz[3] = d_cand.cwiseProduct((1.0 - cand.array().square()).matrix());

            const Eigen::VectorXd h_prev =
                t > 0 ? Eigen::VectorXd(lc.h.col(t - 1)) : Eigen::VectorXd::Zero(hidden);
            dh_carry.setZero();
            for (int g = 0; g < 4; ++g) {
                gmat(layers[l].w[g]).noalias() += dz[g] * lc.input.col(t).transpose();
                gmat(layers[l].u[g]).noalias() += dz[g] * h_prev.transpose();
                gvec(layers[l].b[g]).noalias() += dz[g];
                d_input.col(t).noalias() += pack.matrix(layers[l].w[g]).transpose() * dz[g];
                dh_carry.noalias() += pack.matrix(layers[l].u[g]).transpose() * dz[g];
            }
        }
        dh_ext = d_input; // feeds the layer below
    }
}

struct ForwardCache {
    BranchCache left, right;
    Eigen::VectorXd left_out, right_out; // after dropout
    Eigen::VectorXd z_hat;
};

// Normalized-space forward pass; masks may be null.
Eigen::VectorXd net_forward(const ForecastModel& model, const ModelIndices& idx,
                            const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                            const DropoutMasks* masks, ForwardCache* cache_out) {
    const auto& config = model.config;
    const auto& pack = model.params;
    if (x1.size() != config.within_window)
        throw DataError("forward: x1 has length " + std::to_string(x1.size()) + ", expected " +
                        std::to_string(config.within_window));
    if (config.has_right_branch() && x2.size() != config.between_window)
        throw DataError("forward: x2 has length " + std::to_string(x2.size()) + ", expected " +
                        std::to_string(config.between_window));

    ForwardCache local;
    ForwardCache& cache = cache_out ? *cache_out : local;

    lstm_stack_forward(pack, idx.left, config.hidden, x1, cache.left);
    Eigen::VectorXd left_raw =
        pack.matrix(idx.left_dense_w) * cache.left.dense_in + pack.vector(idx.left_dense_b);

    Eigen::VectorXd right_raw = Eigen::VectorXd::Zero(config.branch_dim);
    if (config.variant == Variant::Full) {
        lstm_stack_forward(pack, idx.right, config.hidden, x2, cache.right);
        right_raw = pack.matrix(idx.right_dense_w) * cache.right.dense_in +
                    pack.vector(idx.right_dense_b);
    } else if (config.variant == Variant::RightDense) {
        cache.right.dense_in = x2;
        right_raw = pack.matrix(idx.right_dense_w) * x2 + pack.vector(idx.right_dense_b);
    }

    const double keep = 1.0 - config.dropout_rate;
    if (masks) {
        left_raw = left_raw.cwiseProduct(masks->left) / keep;
        if (config.has_right_branch()) right_raw = right_raw.cwiseProduct(masks->right) / keep;
    }
    cache.left_out = left_raw;
    cache.right_out = right_raw;

    cache.z_hat = pack.matrix(idx.merge_w) * (left_raw + right_raw) + pack.vector(idx.merge_b);
    return cache.z_hat;
}

} // namespace

FeaturePair build_features(const std::vector<double>& state_series, int t, int a, int b,
                           int season_length) {
    if (a < 1) throw ConfigError("build_features: a must be >= 1");
    if (b < 0) throw ConfigError("build_features: b must be >= 0");
    if (season_length < 1) throw ConfigError("build_features: season_length must be >= 1");
    if (t > static_cast<int>(state_series.size()))
        throw DataError("build_features: target week " + std::to_string(t) +
                        " beyond series end " + std::to_string(state_series.size()));
    if (t - a < 0)
        throw DataError("history error: target week " + std::to_string(t) + " needs " +
                        std::to_string(a) + " within-season weeks, short by " + std::to_string(a - t));
    if (b > 0 && t - season_length * b < 0)
        throw DataError("history error: target week " + std::to_string(t) + " needs " +
                        std::to_string(b) + " past seasons, short by " +
                        std::to_string(season_length * b - t) + " weeks");

    FeaturePair pair;
    pair.x1.resize(a);
    for (int i = 0; i < a; ++i) pair.x1(i) = state_series[t - a + i];
    pair.x2.resize(b);
    for (int s = 0; s < b; ++s) pair.x2(s) = state_series[t - season_length * (b - s)];
    return pair;
}

DropoutMasks draw_dropout_masks(const ModelConfig& config, Rng& rng) {
    DropoutMasks masks;
    masks.left.resize(config.branch_dim);
    for (int i = 0; i < config.branch_dim; ++i)
        masks.left(i) = rng.uniform01() < config.dropout_rate ? 0.0 : 1.0;
    if (config.has_right_branch()) {
        masks.right.resize(config.branch_dim);
        for (int i = 0; i < config.branch_dim; ++i)
            masks.right(i) = rng.uniform01() < config.dropout_rate ? 0.0 : 1.0;
    }
    return masks;
}

Eigen::VectorXd forward(const ForecastModel& model, const Eigen::VectorXd& x1,
                        const Eigen::VectorXd& x2, bool dropout_active, Rng* rng) {
    const auto idx = build_indices(model);
    const double scale0 = model.norm_scale(0);
    const Eigen::VectorXd nx1 = x1 / scale0;
    const Eigen::VectorXd nx2 = x2 / scale0;

    std::optional<DropoutMasks> masks;
    if (dropout_active && model.config.dropout_rate > 0.0) {
        if (!rng) throw ConfigError("forward: dropout requested without an rng");
        masks = draw_dropout_masks(model.config, *rng);
    }
    Eigen::VectorXd z = net_forward(model, idx, nx1, nx2, masks ? &*masks : nullptr, nullptr);
    return z.cwiseProduct(model.norm_scale);
}

double spatial_gap(const Eigen::VectorXd& z_hat) {
    double county_sum = 0.0;
    for (int c = 1; c < z_hat.size(); ++c) county_sum += z_hat(c);
    return std::abs(z_hat(0) - county_sum);
}

double negativity_penalty(const Eigen::VectorXd& z_hat) {
    double acc = 0.0;
    for (int i = 0; i < z_hat.size(); ++i) acc += std::max(-z_hat(i), 0.0);
    return std::abs(acc / static_cast<double>(z_hat.size()));
}

double loss(const Eigen::VectorXd& z, const Eigen::VectorXd& z_hat, double mu, double lambda) {
    if (z.size() != z_hat.size())
        throw DataError("loss: size mismatch " + std::to_string(z.size()) + " vs " +
                        std::to_string(z_hat.size()));
    const double err = (z - z_hat).squaredNorm();
    return err + mu * spatial_gap(z_hat) + lambda * negativity_penalty(z_hat);
}

double sample_loss_and_gradient(const ForecastModel& model, const FeaturePair& pair,
                                Eigen::VectorXd& gradient, const DropoutMasks* masks) {
    const auto idx = build_indices(model);
    const auto& config = model.config;
    const auto& pack = model.params;
    const auto& specs = pack.specs();
    if (gradient.size() != pack.size()) gradient = Eigen::VectorXd::Zero(pack.size());

    ForwardCache cache;
    const Eigen::VectorXd z_hat = net_forward(model, idx, pair.x1, pair.x2, masks, &cache);
    const double value = loss(pair.target, z_hat, config.mu, config.lambda);

    // d loss / d z_hat
    Eigen::VectorXd dz = 2.0 * (z_hat - pair.target);
    double county_sum = 0.0;
    for (int c = 1; c < z_hat.size(); ++c) county_sum += z_hat(c);
    const double gap = z_hat(0) - county_sum;
    const double sign = gap > 0 ? 1.0 : (gap < 0 ? -1.0 : 0.0);
    dz(0) += config.mu * sign;
    for (int c = 1; c < z_hat.size(); ++c) dz(c) -= config.mu * sign;
    for (int i = 0; i < z_hat.size(); ++i)
        if (z_hat(i) < 0) dz(i) -= config.lambda / static_cast<double>(z_hat.size());

    auto gmat = [&](int i) {
        const auto& s = specs[i];
        return Eigen::Map<Eigen::MatrixXd>(gradient.data() + s.offset, s.rows, s.cols);
    };
    auto gvec = [&](int i) {
        const auto& s = specs[i];
        return Eigen::Map<Eigen::VectorXd>(gradient.data() + s.offset, s.rows);
    };

    gmat(idx.merge_w).noalias() += dz * (cache.left_out + cache.right_out).transpose();
    gvec(idx.merge_b).noalias() += dz;
    const Eigen::VectorXd d_out = pack.matrix(idx.merge_w).transpose() * dz;

    const double keep = 1.0 - config.dropout_rate;

    // Left branch.
    {
        Eigen::VectorXd d_raw = masks ? Eigen::VectorXd(d_out.cwiseProduct(masks->left) / keep)
                                      : d_out;
        gmat(idx.left_dense_w).noalias() += d_raw * cache.left.dense_in.transpose();
        gvec(idx.left_dense_b).noalias() += d_raw;
        const Eigen::VectorXd d_dense_in = pack.matrix(idx.left_dense_w).transpose() * d_raw;
        lstm_stack_backward(pack, idx.left, config.hidden, cache.left, d_dense_in, gradient, specs);
    }

    // Right branch.
    if (config.has_right_branch()) {
        Eigen::VectorXd d_raw = masks ? Eigen::VectorXd(d_out.cwiseProduct(masks->right) / keep)
                                      : d_out;
        gmat(idx.right_dense_w).noalias() += d_raw * cache.right.dense_in.transpose();
        gvec(idx.right_dense_b).noalias() += d_raw;
        if (config.variant == Variant::Full) {
            const Eigen::VectorXd d_dense_in = pack.matrix(idx.right_dense_w).transpose() * d_raw;
            lstm_stack_backward(pack, idx.right, config.hidden, cache.right, d_dense_in, gradient,
                                specs);
        }
    }
    return value;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct PairSet {
    std::vector<FeaturePair> train, validate;
};

// One-week-ahead pairs over the concatenated curves; each pair belongs to
// the split that owns its target curve.
PairSet build_pairs(const ForecastModel& model, const data::Dataset& dataset) {
    const auto& config = model.config;
    const int ell = dataset.weeks();
    const int counties = dataset.counties();
    if (ell != config.season_length)
        throw ConfigError("train: dataset weeks " + std::to_string(ell) +
                          " != config season_length " + std::to_string(config.season_length));
    if (counties != config.counties)
        throw ConfigError("train: dataset counties " + std::to_string(counties) +
                          " != config counties " + std::to_string(config.counties));

    const int runs = static_cast<int>(dataset.curves.size());
    std::vector<double> series;
    series.reserve(static_cast<std::size_t>(runs) * ell);
    for (const auto& curve : dataset.curves)
        for (int t = 0; t < ell; ++t) series.push_back(curve.state(t));

    std::vector<int> split_of(runs, -1);
    for (int i : dataset.split.train) split_of.at(i) = 0;
    for (int i : dataset.split.validate) split_of.at(i) = 1;
    for (int i : dataset.split.test) split_of.at(i) = 2;

    const int b = effective_between(config);
    const int t_min = std::max(config.within_window, config.season_length * b);
    const auto total = static_cast<int>(series.size());
    if (t_min >= total)
        throw DataError("history error: dataset provides " + std::to_string(total) +
                        " weeks, first usable target is week " + std::to_string(t_min));

    PairSet pairs;
    for (int t = t_min; t < total; ++t) {
        const int curve_idx = t / ell;
        const int week = t % ell;
        const int split = split_of[curve_idx];
        if (split == 2 || split == -1) continue;
        FeaturePair pair =
            build_features(series, t, config.within_window, b, config.season_length);
        pair.target.resize(counties + 1);
        for (int c = 0; c <= counties; ++c) pair.target(c) = dataset.curves[curve_idx].at(week, c);
        (split == 0 ? pairs.train : pairs.validate).push_back(std::move(pair));
    }
    if (pairs.train.empty())
        throw DataError("history error: no training pairs; curves too short for (a=" +
                        std::to_string(config.within_window) + ", b=" + std::to_string(b) + ")");
    return pairs;
}

void normalize_pairs(const Eigen::VectorXd& scale, std::vector<FeaturePair>& pairs) {
    for (auto& pair : pairs) {
        pair.x1 /= scale(0);
        pair.x2 /= scale(0);
        pair.target = pair.target.cwiseQuotient(scale);
    }
}

} // namespace

TrainResult train(ForecastModel& model, const data::Dataset& dataset, std::uint64_t seed) {
    model.config.validate();
    const auto& config = model.config;
    PairSet pairs = build_pairs(model, dataset);

    // Per-column maxima of the training targets; column 0 also scales inputs.
    Eigen::VectorXd scale = Eigen::VectorXd::Zero(config.output_dim());
    for (const auto& pair : pairs.train) scale = scale.cwiseMax(pair.target.cwiseAbs());
    for (int c = 0; c < scale.size(); ++c)
        if (scale(c) <= 0.0) scale(c) = 1.0;
    model.norm_scale = scale;
    normalize_pairs(scale, pairs.train);
    normalize_pairs(scale, pairs.validate);

    const auto n_params = model.params.size();
    Eigen::VectorXd adam_m = Eigen::VectorXd::Zero(n_params);
    Eigen::VectorXd adam_v = Eigen::VectorXd::Zero(n_params);
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long adam_t = 0;

    Rng rng(substream(seed, streams::train));
    const bool use_dropout = config.dropout_rate > 0.0;
    const auto idx = build_indices(model);

    auto validation_loss = [&] {
        double total = 0.0;
        for (const auto& pair : pairs.validate) {
            const Eigen::VectorXd z = net_forward(model, idx, pair.x1, pair.x2, nullptr, nullptr);
            total += loss(pair.target, z, config.mu, config.lambda);
        }
        return total / static_cast<double>(pairs.validate.size());
    };

    TrainResult history;
    Eigen::VectorXd best_params = model.params.flat();
    Eigen::VectorXd gradient(n_params);
    double best_val = std::numeric_limits<double>::infinity();
    int stall = 0;

    std::vector<std::size_t> order(pairs.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        // Deterministic shuffle.
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            const auto j = i + rng.below(order.size() - i);
            std::swap(order[i], order[j]);
        }

        double epoch_loss = 0.0;
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t batch_end =
                std::min(cursor + static_cast<std::size_t>(config.batch_size), order.size());
            gradient.setZero();
            double batch_loss = 0.0;
            for (std::size_t k = cursor; k < batch_end; ++k) {
                const auto& pair = pairs.train[order[k]];
                if (use_dropout) {
                    const DropoutMasks masks = draw_dropout_masks(config, rng);
                    batch_loss += sample_loss_and_gradient(model, pair, gradient, &masks);
                } else {
                    batch_loss += sample_loss_and_gradient(model, pair, gradient, nullptr);
                }
            }
            const auto count = static_cast<double>(batch_end - cursor);
            gradient /= count;
            epoch_loss += batch_loss;

            ++adam_t;
            const double corr1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t));
            const double corr2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t));
            adam_m = beta1 * adam_m + (1.0 - beta1) * gradient;
            adam_v = beta2 * adam_v + (1.0 - beta2) * gradient.cwiseProduct(gradient);
            model.params.flat() -=
                (config.learning_rate / corr1) * adam_m.cwiseQuotient(
                    ((adam_v / corr2).cwiseSqrt().array() + eps).matrix());
            cursor = batch_end;
        }
        history.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));

        // Validation loss drives early stopping; the training loss stands in
        // when the dataset carries no validation split.
        const double val = pairs.validate.empty() ? history.train_loss.back() : validation_loss();
        history.val_loss.push_back(val);
        history.epochs_run = epoch;
        if (val < best_val - 1e-9) {
            best_val = val;
            best_params = model.params.flat();
            history.best_epoch = epoch;
            stall = 0;
        } else if (++stall >= config.patience) {
            break;
        }
    }
    model.params.flat() = best_params;
    return history;
}

// ---------------------------------------------------------------------------
// Forecasting
// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd multistep_impl(const ForecastModel& model, std::vector<double> series, int horizon,
                               bool dropout_active, Rng* rng) {
    if (horizon < 1) throw ConfigError("forecast: horizon must be >= 1");
    const auto& config = model.config;
    const int b = effective_between(config);
    Eigen::MatrixXd out(horizon, config.output_dim());
    for (int step = 0; step < horizon; ++step) {
        const auto t = static_cast<int>(series.size());
        const FeaturePair pair =
            build_features(series, t, config.within_window, b, config.season_length);
        const Eigen::VectorXd z = forward(model, pair.x1, pair.x2, dropout_active, rng);
        out.row(step) = z.transpose();
        series.push_back(z(0));
    }
    return out;
}

} // namespace

Eigen::MatrixXd forecast_multistep(const ForecastModel& model,
                                   const std::vector<double>& state_history, int horizon) {
    return multistep_impl(model, state_history, horizon, false, nullptr);
}

McForecast mc_dropout_forecast(const ForecastModel& model, const std::vector<double>& state_history,
                               int horizon, int n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw ConfigError("mc_dropout_forecast: n_samples must be >= 1");
    McForecast result;
    const bool stochastic = model.config.dropout_rate > 0.0 && n_samples > 1;
    if (!stochastic) {
        // Either the masks are degenerate or there is a single draw; the
        // spread is exactly zero.
        if (model.config.dropout_rate > 0.0) {
            Rng rng(substream(seed, streams::dropout, 0));
            result.mean = multistep_impl(model, state_history, horizon, true, &rng);
        } else {
            result.mean = multistep_impl(model, state_history, horizon, false, nullptr);
        }
        result.sd = Eigen::MatrixXd::Zero(horizon, model.config.output_dim());
        return result;
    }

    std::vector<Eigen::MatrixXd> draws;
    draws.reserve(n_samples);
    for (int s = 0; s < n_samples; ++s) {
        Rng rng(substream(seed, streams::dropout, static_cast<std::uint64_t>(s)));
        draws.push_back(multistep_impl(model, state_history, horizon, true, &rng));
    }
    result.mean = Eigen::MatrixXd::Zero(horizon, model.config.output_dim());
    for (const auto& d : draws) result.mean += d;
    result.mean /= static_cast<double>(n_samples);
    result.sd = Eigen::MatrixXd::Zero(horizon, model.config.output_dim());
    for (const auto& d : draws) result.sd += (d - result.mean).cwiseProduct(d - result.mean);
    result.sd = (result.sd / static_cast<double>(n_samples)).cwiseSqrt();
    return result;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"a", c.within_window},
            {"b", c.between_window},
            {"season_length", c.season_length},
            {"k_l", c.left_layers},
            {"k_r", c.right_layers},
            {"hidden", c.hidden},
            {"branch_dim", c.branch_dim},
            {"counties", c.counties},
            {"mu", c.mu},
            {"lambda", c.lambda},
            {"dropout_rate", c.dropout_rate},
            {"variant", variant_name(c.variant)},
            {"learning_rate", c.learning_rate},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"batch_size", c.batch_size}};
}

} // namespace

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.within_window = j.value("a", c.within_window);
        c.between_window = j.value("b", c.between_window);
        c.season_length = j.value("season_length", c.season_length);
        c.left_layers = j.value("k_l", c.left_layers);
        c.right_layers = j.value("k_r", c.right_layers);
        c.hidden = j.value("hidden", c.hidden);
        c.branch_dim = j.value("branch_dim", c.branch_dim);
        c.counties = j.value("counties", c.counties);
        c.mu = j.value("mu", c.mu);
        c.lambda = j.value("lambda", c.lambda);
        c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
        if (j.contains("variant")) c.variant = variant_from_name(j.at("variant"));
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.patience = j.value("patience", c.patience);
        c.batch_size = j.value("batch_size", c.batch_size);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config json: ") + e.what());
    }
    return c;
}

void save_model(const ForecastModel& model, const std::filesystem::path& file) {
    nlohmann::json j;
    j["format"] = "epiforge-model v1";
    j["config"] = config_to_json(model.config);
    j["norm_scale"] = std::vector<double>(model.norm_scale.data(),
                                          model.norm_scale.data() + model.norm_scale.size());
    j["tensors"] = nlohmann::json::array();
    for (std::size_t i = 0; i < model.params.specs().size(); ++i) {
        const auto& spec = model.params.specs()[i];
        const auto* begin = model.params.flat().data() + spec.offset;
        j["tensors"].push_back({{"name", spec.name},
                                {"rows", spec.rows},
                                {"cols", spec.cols},
                                {"data", std::vector<double>(begin, begin + spec.rows * spec.cols)}});
    }
    io::write_json(file, j);
}

ForecastModel load_model(const std::filesystem::path& file) {
    const auto j = io::read_json(file);
    ForecastModel model;
    try {
        if (j.value("format", "") != "epiforge-model v1")
            throw DataError("unrecognized model format in " + file.string());
        model.config = model_config_from_json(j.at("config"));
        model.params = ParamPack(tensor_layout(model.config));
        const auto scale = j.at("norm_scale").get<std::vector<double>>();
        if (static_cast<int>(scale.size()) != model.config.output_dim())
            throw DataError("model norm_scale has wrong length");
        model.norm_scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), scale.size());
        const auto& tensors = j.at("tensors");
        if (tensors.size() != model.params.specs().size())
            throw DataError("model tensor count mismatch");
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            const auto& spec = model.params.specs()[i];
            const auto& entry = tensors[i];
            if (entry.at("name") != spec.name || entry.at("rows") != spec.rows ||
                entry.at("cols") != spec.cols)
                throw DataError("model tensor '" + spec.name + "' has unexpected shape");
            const auto data = entry.at("data").get<std::vector<double>>();
            if (static_cast<std::ptrdiff_t>(data.size()) !=
                static_cast<std::ptrdiff_t>(spec.rows) * spec.cols)
                throw DataError("model tensor '" + spec.name + "' has wrong element count");
            std::copy(data.begin(), data.end(), model.params.flat().data() + spec.offset);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("model file " + file.string() + ": " + e.what());
    }
    return model;
}

std::uint64_t weight_checksum(const ForecastModel& model) {
    std::uint64_t hash = io::fnv1a(model.params.flat().data(),
                                   static_cast<std::size_t>(model.params.size()) * sizeof(double));
    return io::fnv1a(model.norm_scale.data(),
                     static_cast<std::size_t>(model.norm_scale.size()) * sizeof(double), hash);
}

} // namespace epiforge::forecast
