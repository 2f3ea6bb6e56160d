#include "mixtune/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mixtune/errors.hpp"

namespace mixtune {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
    if (a != b) {
        throw InputError("metric: length mismatch, " + std::to_string(a) + " vs " +
                         std::to_string(b));
    }
    if (a == 0) {
        throw InputError("metric: empty inputs");
    }
}

long as_class(double v) {
    const double r = std::nearbyint(v);
    if (std::abs(v - r) > 1e-9) {
        throw InputError("metric: classification metric on non-integer value");
    }
    return static_cast<long>(r);
}

void check_binary(long v) {
    if (v != 0 && v != 1) {
        throw InputError("metric: binary metric expects labels in {0,1}, got " +
                         std::to_string(v));
    }
}

double accuracy_impl(const std::vector<double>& pred, const std::vector<double>& target) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (as_class(pred[i]) == as_class(target[i])) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

struct Confusion {
    double tp = 0, tn = 0, fp = 0, fn = 0;
};

Confusion confusion_binary(const std::vector<double>& pred, const std::vector<double>& target) {
    Confusion c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const long p = as_class(pred[i]);
        const long t = as_class(target[i]);
        check_binary(p);
        check_binary(t);
        if (p == 1 && t == 1) {
            c.tp += 1;
        } else if (p == 0 && t == 0) {
            c.tn += 1;
        } else if (p == 1 && t == 0) {
            c.fp += 1;
        } else {
            c.fn += 1;
        }
    }
    return c;
}

double f1_impl(const std::vector<double>& pred, const std::vector<double>& target) {
    const Confusion c = confusion_binary(pred, target);
    const double denom = 2.0 * c.tp + c.fp + c.fn;
    return denom == 0.0 ? 0.0 : 2.0 * c.tp / denom;
}

double mcc_impl(const std::vector<double>& pred, const std::vector<double>& target) {
    const Confusion c = confusion_binary(pred, target);
    const double denom =
        (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn);
    if (denom == 0.0) {
        return 0.0;
    }
    return (c.tp * c.tn - c.fp * c.fn) / std::sqrt(denom);
}

double pearson_impl(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    const double mx = mean_of(x);
    const double my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        return 0.0;
    }
    return sxy / std::sqrt(sxx * syy);
}

/// Average ranks: ties receive the mean of the rank positions they occupy.
std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) {
            ++j;
        }
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    return ranks;
}

double spearman_impl(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson_impl(average_ranks(x), average_ranks(y));
}

}  // namespace

MetricKind metric_from_string(const std::string& name) {
    if (name == "accuracy") return MetricKind::accuracy;
    if (name == "f1") return MetricKind::f1;
    if (name == "mcc") return MetricKind::mcc;
    if (name == "spearman") return MetricKind::spearman;
    if (name == "pearson") return MetricKind::pearson;
    throw ConfigError("unknown metric '" + name + "'");
}

std::string metric_name(MetricKind kind) {
    switch (kind) {
        case MetricKind::accuracy: return "accuracy";
        case MetricKind::f1: return "f1";
        case MetricKind::mcc: return "mcc";
        case MetricKind::spearman: return "spearman";
        case MetricKind::pearson: return "pearson";
    }
    return "?";
}

double metric(const std::vector<double>& pred, const std::vector<double>& target,
              MetricKind kind) {
    check_lengths(pred.size(), target.size());
    switch (kind) {
        case MetricKind::accuracy: return accuracy_impl(pred, target);
        case MetricKind::f1: return f1_impl(pred, target);
        case MetricKind::mcc: return mcc_impl(pred, target);
        case MetricKind::spearman: return spearman_impl(pred, target);
        case MetricKind::pearson: return pearson_impl(pred, target);
    }
    throw InputError("metric: unknown kind");
}

double metric(const std::vector<int>& pred, const std::vector<int>& target, MetricKind kind) {
    std::vector<double> p(pred.begin(), pred.end());
    std::vector<double> t(target.begin(), target.end());
    return metric(p, t, kind);
}

double mean_of(const std::vector<double>& values) {
    if (values.empty()) {
        throw InputError("mean of empty vector");
    }
    return std::accumulate(values.begin(), values.end(), 0.0) /
           static_cast<double>(values.size());
}

double population_stddev(const std::vector<double>& values) {
    const double m = mean_of(values);
    double acc = 0.0;
    for (const double v : values) {
        acc += (v - m) * (v - m);
    }
    return std::sqrt(acc / static_cast<double>(values.size()));
}

}  // namespace mixtune
