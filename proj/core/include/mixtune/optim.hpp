#pragma once

#include <cstdint>
#include <vector>

#include "mixtune/tensor.hpp"

namespace mixtune {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay and bias correction:
///   m <- b1*m + (1-b1)*g
///   v <- b2*v + (1-b2)*g^2
///   p <- p - lr * ( m_hat / (sqrt(v_hat) + eps) + wd * p )
class AdamW {
public:
    AdamW(std::vector<TensorPtr> params, AdamWConfig cfg);

    /// One update over all bound parameters, reading their .grad buffers.
    /// Throws NumericError on any non-finite gradient; the step is not applied.
    void step(double lr_t);

    long step_count() const { return step_count_; }
    const AdamWConfig& config() const { return cfg_; }
    const std::vector<TensorPtr>& params() const { return params_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

private:
    std::vector<TensorPtr> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    long step_count_ = 0;
    AdamWConfig cfg_;
};

/// Linear warmup to peak_lr over warmup_steps, then linear decay reaching 0 at
/// total_steps. Step indices are 0-based:
///   t < warmup:  peak * (t+1) / warmup
///   t >= warmup: peak * (total - t) / (total - warmup)
struct LrSchedule {
    double peak_lr = 0.0;
    long warmup_steps = 0;
    long total_steps = 1;

    static LrSchedule from_ratio(double peak_lr, double warmup_ratio, long total_steps);
    double at(long t) const;
};

}  // namespace mixtune
