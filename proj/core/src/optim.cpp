#include "mixtune/optim.hpp"

#include <cmath>

#include "mixtune/errors.hpp"

namespace mixtune {

AdamW::AdamW(std::vector<TensorPtr> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const TensorPtr& p : params_) {
        m_.emplace_back(p->data.size(), 0.0);
        v_.emplace_back(p->data.size(), 0.0);
    }
}

void AdamW::step(double lr_t) {
    for (const TensorPtr& p : params_) {
        const std::vector<double>& g = p->grad_ref();
        for (const double gv : g) {
            if (!std::isfinite(gv)) {
                throw NumericError("adamw: non-finite gradient for tensor " + p->shape_str());
            }
        }
    }
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = *params_[pi];
        std::vector<double>& m = m_[pi];
        std::vector<double>& v = v_[pi];
        const std::vector<double>& g = p.grad;
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p.data[i] -= lr_t * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * p.data[i]);
        }
    }
}

LrSchedule LrSchedule::from_ratio(double peak_lr, double warmup_ratio, long total_steps) {
    LrSchedule s;
    s.peak_lr = peak_lr;
    s.total_steps = total_steps;
    s.warmup_steps = std::lround(warmup_ratio * static_cast<double>(total_steps));
    return s;
}

double LrSchedule::at(long t) const {
    if (total_steps <= 0) {
        return 0.0;
    }
    if (t < warmup_steps) {
        return peak_lr * static_cast<double>(t + 1) / static_cast<double>(warmup_steps);
    }
    if (t >= total_steps) {
        return 0.0;
    }
    if (total_steps == warmup_steps) {
        return peak_lr;
    }
    return peak_lr * static_cast<double>(total_steps - t) /
           static_cast<double>(total_steps - warmup_steps);
}

}  // namespace mixtune
