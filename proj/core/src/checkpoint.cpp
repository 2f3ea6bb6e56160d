#include "mixtune/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mixtune/errors.hpp"

namespace mixtune {

namespace {

constexpr char kMagic[4] = {'M', 'X', 'C', 'P'};
constexpr std::uint32_t kEndianTag = 0x01020304u;

class Writer {
public:
    explicit Writer(std::ofstream& out) : out_(out) {}

    void bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void u32(std::uint32_t v) { le(v); }
    void u64(std::uint64_t v) { le(v); }
    void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v)); }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        le(bits);
    }

private:
    template <typename T>
    void le(T v) {
        unsigned char buf[sizeof(T)];
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            buf[i] = static_cast<unsigned char>(v >> (8 * i));
        }
        bytes(buf, sizeof(T));
    }
    std::ofstream& out_;
};

class Reader {
public:
    Reader(std::ifstream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

    std::uint64_t position() const { return pos_; }

    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw FormatError("checkpoint " + path_.string() + ": truncated at byte " +
                              std::to_string(pos_ + static_cast<std::uint64_t>(in_.gcount())));
        }
        pos_ += n;
    }
    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    std::int64_t i64() { return static_cast<std::int64_t>(le<std::uint64_t>()); }
    double f64() {
        const std::uint64_t bits = le<std::uint64_t>();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    bool at_eof() {
        return in_.peek() == std::ifstream::traits_type::eof();
    }

private:
    template <typename T>
    T le() {
        unsigned char buf[sizeof(T)];
        bytes(buf, sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<T>(buf[i]) << (8 * i);
        }
        return v;
    }
    std::ifstream& in_;
    std::filesystem::path path_;
    std::uint64_t pos_ = 0;
};

}  // namespace

void NamedTensors::add(std::string name, std::vector<std::int64_t> shape,
                       std::vector<double> data) {
    if (contains(name)) {
        throw InputError("duplicate tensor name '" + name + "'");
    }
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw DimensionError("tensor '" + name + "': " + std::to_string(data.size()) +
                             " values for shape " + shape_to_string(shape));
    }
    items_.push_back(NamedTensor{std::move(name), std::move(shape), std::move(data)});
}

void NamedTensors::add(std::string name, const Tensor& t) {
    add(std::move(name), t.shape, t.data);
}

bool NamedTensors::contains(const std::string& name) const {
    for (const NamedTensor& t : items_) {
        if (t.name == name) {
            return true;
        }
    }
    return false;
}

const NamedTensor& NamedTensors::at(const std::string& name) const {
    for (const NamedTensor& t : items_) {
        if (t.name == name) {
            return t;
        }
    }
    throw InputError("tensor '" + name + "' not found");
}

void save_checkpoint(const NamedTensors& tensors, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    Writer w(out);
    w.bytes(kMagic, sizeof(kMagic));
    w.u32(kCheckpointVersion);
    w.u32(kEndianTag);
    w.u64(tensors.size());
    std::uint64_t offset = 0;
    for (const NamedTensor& t : tensors) {
        w.u32(static_cast<std::uint32_t>(t.name.size()));
        w.bytes(t.name.data(), t.name.size());
        w.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (const std::int64_t d : t.shape) {
            w.i64(d);
        }
        w.u64(offset);
        offset += t.data.size();
    }
    w.u64(offset);  // total payload length in elements
    for (const NamedTensor& t : tensors) {
        for (const double v : t.data) {
            w.f64(v);
        }
    }
    out.flush();
    if (!out) {
        throw FormatError("write failure on " + path.string());
    }
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    Reader r(in, path);
    char magic[4];
    r.bytes(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("checkpoint " + path.string() + ": bad magic at byte 0");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint " + path.string() + ": unsupported version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint32_t endian = r.u32();
    if (endian != kEndianTag) {
        throw FormatError("checkpoint " + path.string() + ": endianness tag mismatch at byte 8");
    }
    const std::uint64_t count = r.u64();

    struct Entry {
        std::string name;
        std::vector<std::int64_t> shape;
        std::uint64_t offset;
    };
    std::vector<Entry> entries;
    entries.reserve(count);
    std::uint64_t expected_offset = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
        Entry e;
        const std::uint32_t name_len = r.u32();
        e.name.resize(name_len);
        r.bytes(e.name.data(), name_len);
        const std::uint32_t ndim = r.u32();
        e.shape.resize(ndim);
        for (std::uint32_t d = 0; d < ndim; ++d) {
            e.shape[d] = r.i64();
        }
        e.offset = r.u64();
        if (e.offset != expected_offset) {
            throw FormatError("checkpoint " + path.string() + ": offset for '" + e.name +
                              "' is " + std::to_string(e.offset) + ", expected " +
                              std::to_string(expected_offset) + " (header byte " +
                              std::to_string(r.position()) + ")");
        }
        expected_offset += static_cast<std::uint64_t>(shape_numel(e.shape));
        entries.push_back(std::move(e));
    }
    const std::uint64_t payload_len = r.u64();
    if (payload_len != expected_offset) {
        throw FormatError("checkpoint " + path.string() + ": payload length " +
                          std::to_string(payload_len) + " does not match manifest total " +
                          std::to_string(expected_offset));
    }

    NamedTensors out;
    for (const Entry& e : entries) {
        const std::int64_t n = shape_numel(e.shape);
        std::vector<double> values(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            values[static_cast<std::size_t>(i)] = r.f64();
        }
        out.add(e.name, e.shape, std::move(values));
    }
    if (!r.at_eof()) {
        throw FormatError("checkpoint " + path.string() + ": trailing bytes after byte " +
                          std::to_string(r.position()));
    }
    return out;
}

NamedTensors average_named_tensors(const std::vector<NamedTensors>& sets) {
    if (sets.empty()) {
        throw InputError("average_named_tensors: no inputs");
    }
    NamedTensors out;
    const NamedTensors& first = sets.front();
    for (const NamedTensor& t : first) {
        std::vector<double> acc = t.data;
        for (std::size_t s = 1; s < sets.size(); ++s) {
            const NamedTensor& other = sets[s].at(t.name);
            if (other.shape != t.shape) {
                throw InputError("average_named_tensors: shape mismatch for '" + t.name + "': " +
                                 shape_to_string(t.shape) + " vs " + shape_to_string(other.shape));
            }
            for (std::size_t i = 0; i < acc.size(); ++i) {
                acc[i] += other.data[i];
            }
        }
        const double inv = 1.0 / static_cast<double>(sets.size());
        for (double& v : acc) {
            v *= inv;
        }
        out.add(t.name, t.shape, std::move(acc));
    }
    return out;
}

}  // namespace mixtune
