#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mixtune/model.hpp"
#include "mixtune/tensor.hpp"

namespace mixtune {

/// Feature-vector dataset. Classification tasks carry integer labels in
/// [0, classes); regression tasks carry real targets.
struct Dataset {
    TensorPtr features;  // [n x dim]
    std::vector<int> labels;
    std::vector<double> targets;
    TaskKind task = TaskKind::classification;
    std::int64_t classes = 2;
    std::string name;

    std::int64_t size() const { return features == nullptr ? 0 : features->rows(); }
    std::int64_t dim() const { return features == nullptr ? 0 : features->cols(); }
};

/// Deterministic index partition of a dataset (train / held-out validation).
struct SplitPair {
    std::vector<std::int64_t> train_indices;
    std::vector<std::int64_t> val_indices;
};

/// Validation row count of an n-row split: max(1, round((1-ratio)*n)),
/// capped so train stays non-empty.
std::int64_t split_val_count(std::int64_t n, double ratio);

/// Seeded shuffle split. Validation gets split_val_count(n, ratio) indices,
/// the rest train.
SplitPair split_dataset(const Dataset& ds, double ratio, std::uint64_t seed);

/// First n indices of a seeded permutation.
Dataset subsample(const Dataset& ds, std::int64_t n, std::uint64_t seed);

/// Row-gather by index.
Dataset take(const Dataset& ds, std::span<const std::int64_t> indices);

struct SyntheticTaskSpec {
    std::int64_t input_dim = 20;
    std::int64_t source_n = 20000;
    std::int64_t target_n = 300;
    std::int64_t test_n = 2000;
    std::int64_t teacher_hidden = 32;
    double shift_angle = 0.3;  // radians
    double label_noise = 0.1;  // in [0, 0.5)
    std::uint64_t seed = 0;
};

struct TransferTriplet {
    Dataset source;
    Dataset target;
    Dataset test;
};

/// Synthetic transfer benchmark: a random single-hidden-layer teacher labels
/// standard-Gaussian inputs (source). Target and test inputs are rotated by
/// shift_angle in a fixed random 2-plane, so the concept seen downstream is a
/// rotated version of the source concept; target labels are additionally
/// flipped with probability label_noise. All three splits are disjoint draws
/// and the whole construction is a pure function of the spec.
TransferTriplet make_synthetic_transfer(const SyntheticTaskSpec& spec);

/// CSV with header f0..f{D-1},label. Classification is inferred when every
/// label parses as a nonnegative integer. Missing values are rejected.
Dataset load_csv_dataset(const std::filesystem::path& path, const std::string& name = "");
void save_csv_dataset(const Dataset& ds, const std::filesystem::path& path);

}  // namespace mixtune
