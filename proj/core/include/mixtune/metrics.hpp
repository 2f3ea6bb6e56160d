#pragma once

#include <string>
#include <vector>

namespace mixtune {

enum class MetricKind { accuracy, f1, mcc, spearman, pearson };

MetricKind metric_from_string(const std::string& name);
std::string metric_name(MetricKind kind);

/// Standard metric definitions over parallel prediction/target vectors.
///
/// accuracy/f1/mcc expect integer-valued class entries (f1 and mcc are binary,
/// positive class 1). Correlation metrics take reals; Spearman uses average
/// ranks for ties. Any zero-denominator case evaluates to 0.
double metric(const std::vector<double>& pred, const std::vector<double>& target,
              MetricKind kind);
double metric(const std::vector<int>& pred, const std::vector<int>& target, MetricKind kind);

/// Population mean and standard deviation.
double mean_of(const std::vector<double>& values);
double population_stddev(const std::vector<double>& values);

}  // namespace mixtune
