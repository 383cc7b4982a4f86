#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace mpibench {

/// Adam with optional AMSGrad max-of-second-moments, matching the common
/// deep-learning framework update (bias correction, eps added to the root).
class Adam {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        bool amsgrad = false;
    };

    Adam(std::size_t size, Options opts) : opts_(opts), m_(size, 0.0), v_(size, 0.0) {
        if (opts_.amsgrad) vmax_.assign(size, 0.0);
    }

    void step(std::span<double> params, std::span<const double> grad) {
        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, double(t_));
        const double bc2_sqrt = std::sqrt(1.0 - std::pow(opts_.beta2, double(t_)));
        const double step_size = opts_.lr / bc1;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grad[i];
            m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
            v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g * g;
            double second = v_[i];
            if (opts_.amsgrad) {
                vmax_[i] = std::max(vmax_[i], v_[i]);
                second = vmax_[i];
            }
            const double denom = std::sqrt(second) / bc2_sqrt + opts_.eps;
            params[i] -= step_size * m_[i] / denom;
        }
    }

    std::size_t steps() const noexcept { return t_; }
    const Options& options() const noexcept { return opts_; }

private:
    Options opts_;
    std::vector<double> m_, v_, vmax_;
    std::size_t t_ = 0;
};

}  // namespace mpibench
