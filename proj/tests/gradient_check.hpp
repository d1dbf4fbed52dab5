#pragma once

// Test-only finite-difference oracle for the forecaster gradients. Kept
// independent of the analytic backward pass: it only calls the forward-side
// loss through sample_loss_and_gradient's return value with a scratch
// gradient it ignores.

#include <cmath>
#include <string>

#include "epiforge/forecaster.hpp"

namespace gradcheck {

struct Report {
    int checked = 0;
    int failures = 0;
    double worst_rel = 0.0;
    std::string worst_tensor;
};

inline double loss_at(const epiforge::forecast::ForecastModel& model,
                      const epiforge::forecast::FeaturePair& pair) {
    Eigen::VectorXd scratch;
    return epiforge::forecast::sample_loss_and_gradient(model, pair, scratch, nullptr);
}

// Central differences over every parameter; rel_tol with an absolute floor.
inline Report check_gradients(epiforge::forecast::ForecastModel model,
                              const epiforge::forecast::FeaturePair& pair, double rel_tol = 1e-4,
                              double abs_floor = 1e-6, double step = 1e-5) {
    using namespace epiforge::forecast;
    Report report;
    Eigen::VectorXd analytic;
    sample_loss_and_gradient(model, pair, analytic, nullptr);

    for (const auto& spec : model.params.specs()) {
        const auto count = static_cast<std::ptrdiff_t>(spec.rows) * spec.cols;
        for (std::ptrdiff_t k = 0; k < count; ++k) {
            const auto j = spec.offset + k;
            const double original = model.params.flat()(j);
            const double h = step * std::max(1.0, std::abs(original));
            model.params.flat()(j) = original + h;
            const double f_plus = loss_at(model, pair);
            model.params.flat()(j) = original - h;
            const double f_minus = loss_at(model, pair);
            model.params.flat()(j) = original;

            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double diff = std::abs(analytic(j) - numeric);
            const double scale = std::max(std::abs(numeric), std::abs(analytic(j)));
            ++report.checked;
            if (diff > abs_floor && diff > rel_tol * scale) {
                ++report.failures;
                const double rel = scale > 0 ? diff / scale : diff;
                if (rel > report.worst_rel) {
                    report.worst_rel = rel;
                    report.worst_tensor = spec.name;
                }
            }
        }
    }
    return report;
}

} // namespace gradcheck
