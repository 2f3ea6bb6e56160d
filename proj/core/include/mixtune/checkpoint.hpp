#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mixtune/tensor.hpp"

namespace mixtune {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<double> data;
};

/// Order-preserving set of uniquely named tensors.
class NamedTensors {
public:
    void add(std::string name, std::vector<std::int64_t> shape, std::vector<double> data);
    void add(std::string name, const Tensor& t);

    bool contains(const std::string& name) const;
    const NamedTensor& at(const std::string& name) const;

    std::size_t size() const { return items_.size(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }
    const std::vector<NamedTensor>& items() const { return items_; }

private:
    std::vector<NamedTensor> items_;
};

/// Binary checkpoint: a little-endian header (magic, version, endianness tag,
/// manifest of name/shape/offset) followed by a flat float64 payload.
/// save/load round-trips are bit-exact.
void save_checkpoint(const NamedTensors& tensors, const std::filesystem::path& path);
NamedTensors load_checkpoint(const std::filesystem::path& path);

/// Element-wise mean of several same-manifest tensor sets.
NamedTensors average_named_tensors(const std::vector<NamedTensors>& sets);

}  // namespace mixtune
