#include "mixtune/data.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <fstream>
#include <sstream>

#include "mixtune/errors.hpp"
#include "mixtune/rng.hpp"

namespace mixtune {

namespace {

/// Random single-hidden-layer sign teacher: y = 1[v . tanh(U x + c) > 0].
struct Teacher {
    std::vector<double> u;  // [dim x hidden]
    std::vector<double> c;  // [hidden]
    std::vector<double> v;  // [hidden]
    std::int64_t dim = 0;
    std::int64_t hidden = 0;

    int label(std::span<const double> x) const {
        double out = 0.0;
        for (std::int64_t h = 0; h < hidden; ++h) {
            double pre = c[static_cast<std::size_t>(h)];
            for (std::int64_t d = 0; d < dim; ++d) {
                pre += x[static_cast<std::size_t>(d)] *
                       u[static_cast<std::size_t>(d * hidden + h)];
            }
            out += v[static_cast<std::size_t>(h)] * std::tanh(pre);
        }
        return out > 0.0 ? 1 : 0;
    }
};

Teacher make_teacher(std::int64_t dim, std::int64_t hidden, std::uint64_t seed) {
    Teacher t;
    t.dim = dim;
    t.hidden = hidden;
    Rng rng(seed);
    t.u.resize(static_cast<std::size_t>(dim * hidden));
    for (double& w : t.u) {
        w = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    }
    t.c.resize(static_cast<std::size_t>(hidden));
    for (double& w : t.c) {
        w = rng.normal(0.0, 0.1);
    }
    t.v.resize(static_cast<std::size_t>(hidden));
    for (double& w : t.v) {
        w = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(hidden)));
    }
    return t;
}

/// Rotation by `angle` in the plane spanned by two random orthonormal
/// directions; the identity when angle == 0.
struct PlaneRotation {
    std::vector<double> u, v;
    double angle = 0.0;

    void apply(std::span<double> x) const {
        if (angle == 0.0) {
            return;
        }
        double a = 0.0, b = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            a += u[i] * x[i];
            b += v[i] * x[i];
        }
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double da = a * ca - b * sa - a;
        const double db = a * sa + b * ca - b;
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] += da * u[i] + db * v[i];
        }
    }
};

PlaneRotation make_plane_rotation(std::int64_t dim, double angle, std::uint64_t seed) {
    PlaneRotation rot;
    rot.angle = angle;
    Rng rng(seed);
    rot.u.resize(static_cast<std::size_t>(dim));
    rot.v.resize(static_cast<std::size_t>(dim));
    for (double& w : rot.u) {
        w = rng.normal();
    }
    double nu = 0.0;
    for (const double w : rot.u) {
        nu += w * w;
    }
    nu = std::sqrt(nu);
    for (double& w : rot.u) {
        w /= nu;
    }
    for (double& w : rot.v) {
        w = rng.normal();
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < rot.v.size(); ++i) {
        dot += rot.v[i] * rot.u[i];
    }
    double nv = 0.0;
    for (std::size_t i = 0; i < rot.v.size(); ++i) {
        rot.v[i] -= dot * rot.u[i];
        nv += rot.v[i] * rot.v[i];
    }
    nv = std::sqrt(nv);
    for (double& w : rot.v) {
        w /= nv;
    }
    return rot;
}

Dataset draw_labeled(std::int64_t n, std::int64_t dim, const Teacher& teacher,
                     const PlaneRotation* shift, double flip_prob, std::uint64_t seed,
                     std::string name) {
    Dataset ds;
    ds.task = TaskKind::classification;
    ds.classes = 2;
    ds.name = std::move(name);
    ds.features = Tensor::create({n, dim});
    ds.labels.resize(static_cast<std::size_t>(n));
    Rng rng(seed);
    std::vector<double> x(static_cast<std::size_t>(dim));
    for (std::int64_t i = 0; i < n; ++i) {
        for (double& c : x) {
            c = rng.normal();
        }
        int y = teacher.label(x);
        if (shift != nullptr) {
            shift->apply(x);
        }
        if (flip_prob > 0.0 && rng.uniform() < flip_prob) {
            y = 1 - y;
        }
        ds.labels[static_cast<std::size_t>(i)] = y;
        std::copy(x.begin(), x.end(),
                  ds.features->data.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    return ds;
}

bool parse_double(std::string_view s, double& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

std::string trim(std::string s) {
    const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) {
        s.erase(s.begin());
    }
    while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) {
        s.pop_back();
    }
    return s;
}

}  // namespace

std::int64_t split_val_count(std::int64_t n, double ratio) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw ConfigError("split: ratio must be in (0,1)");
    }
    // Round half up, floor of one row, and keep train non-empty.
    std::int64_t val_n = static_cast<std::int64_t>(
        std::floor((1.0 - ratio) * static_cast<double>(n) + 0.5));
    return std::max<std::int64_t>(1, std::min(val_n, n - 1));
}

SplitPair split_dataset(const Dataset& ds, double ratio, std::uint64_t seed) {
    const std::int64_t n = ds.size();
    if (n < 2) {
        throw ConfigError("split_dataset: need at least 2 rows, have " + std::to_string(n));
    }
    std::vector<std::int64_t> perm = random_permutation(n, seed);
    const std::int64_t val_n = split_val_count(n, ratio);
    SplitPair out;
    out.val_indices.assign(perm.begin(), perm.begin() + val_n);
    out.train_indices.assign(perm.begin() + val_n, perm.end());
    return out;
}

Dataset take(const Dataset& ds, std::span<const std::int64_t> indices) {
    Dataset out;
    out.task = ds.task;
    out.classes = ds.classes;
    out.name = ds.name;
    const std::int64_t dim = ds.dim();
    out.features = Tensor::create({static_cast<std::int64_t>(indices.size()), dim});
    if (ds.task == TaskKind::classification) {
        out.labels.reserve(indices.size());
    } else {
        out.targets.reserve(indices.size());
    }
    for (std::size_t row = 0; row < indices.size(); ++row) {
        const std::int64_t i = indices[row];
        if (i < 0 || i >= ds.size()) {
            throw InputError("take: index " + std::to_string(i) + " out of range");
        }
        std::copy(ds.features->data.begin() + static_cast<std::ptrdiff_t>(i * dim),
                  ds.features->data.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim),
                  out.features->data.begin() + static_cast<std::ptrdiff_t>(row * dim));
        if (ds.task == TaskKind::classification) {
            out.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
        } else {
            out.targets.push_back(ds.targets[static_cast<std::size_t>(i)]);
        }
    }
    return out;
}

Dataset subsample(const Dataset& ds, std::int64_t n, std::uint64_t seed) {
    if (n > ds.size()) {
        throw InputError("subsample: requested " + std::to_string(n) + " of " +
                         std::to_string(ds.size()) + " rows");
    }
    std::vector<std::int64_t> perm = random_permutation(ds.size(), seed);
    perm.resize(static_cast<std::size_t>(n));
    return take(ds, perm);
}

TransferTriplet make_synthetic_transfer(const SyntheticTaskSpec& spec) {
    if (spec.label_noise < 0.0 || spec.label_noise >= 0.5) {
        throw ConfigError("synthetic: label_noise must be in [0, 0.5)");
    }
    if (spec.input_dim < 2 || spec.source_n < 1 || spec.target_n < 1 || spec.test_n < 1 ||
        spec.teacher_hidden < 1) {
        throw ConfigError("synthetic: dimensions and sizes must be positive (input_dim >= 2)");
    }

    // Reject teachers with badly imbalanced labels on a probe sample.
    Teacher teacher;
    {
        const std::int64_t probe_n = 4096;
        Rng probe_rng(derive_seed(spec.seed, "teacher-probe"));
        std::vector<double> x(static_cast<std::size_t>(spec.input_dim));
        for (std::uint64_t attempt = 0;; ++attempt) {
            teacher = make_teacher(spec.input_dim, spec.teacher_hidden,
                                   derive_seed(spec.seed, "teacher", attempt));
            std::int64_t pos = 0;
            for (std::int64_t i = 0; i < probe_n; ++i) {
                for (double& c : x) {
                    c = probe_rng.normal();
                }
                pos += teacher.label(x);
            }
            const double balance = static_cast<double>(pos) / static_cast<double>(probe_n);
            if (balance >= 0.35 && balance <= 0.65) {
                break;
            }
            if (attempt > 200) {
                throw ConfigError("synthetic: could not draw a balanced teacher");
            }
        }
    }

    const PlaneRotation shift =
        make_plane_rotation(spec.input_dim, spec.shift_angle, derive_seed(spec.seed, "plane"));

    TransferTriplet out;
    out.source = draw_labeled(spec.source_n, spec.input_dim, teacher, nullptr, 0.0,
                              derive_seed(spec.seed, "source"), "source");
    out.target = draw_labeled(spec.target_n, spec.input_dim, teacher, &shift, spec.label_noise,
                              derive_seed(spec.seed, "target"), "target");
    out.test = draw_labeled(spec.test_n, spec.input_dim, teacher, &shift, 0.0,
                            derive_seed(spec.seed, "test"), "test");
    return out;
}

Dataset load_csv_dataset(const std::filesystem::path& path, const std::string& name) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open dataset " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError(path.string() + ": empty file");
    }
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            header.push_back(trim(cell));
        }
    }
    if (header.size() < 2 || header.back() != "label") {
        throw FormatError(path.string() + ": header must be f0..f{D-1},label");
    }
    const std::size_t dim = header.size() - 1;
    for (std::size_t i = 0; i < dim; ++i) {
        if (header[i] != "f" + std::to_string(i)) {
            throw FormatError(path.string() + ": unexpected column '" + header[i] + "'");
        }
    }

    std::vector<double> values;
    std::vector<double> raw_labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            cell = trim(cell);
            if (cell.empty()) {
                throw FormatError(path.string() + ":" + std::to_string(line_no) +
                                  ": missing value");
            }
            double v;
            if (!parse_double(cell, v)) {
                throw FormatError(path.string() + ":" + std::to_string(line_no) +
                                  ": bad number '" + cell + "'");
            }
            if (!std::isfinite(v)) {
                throw FormatError(path.string() + ":" + std::to_string(line_no) +
                                  ": non-finite value");
            }
            if (col < dim) {
                values.push_back(v);
            } else {
                raw_labels.push_back(v);
            }
            ++col;
        }
        if (col != dim + 1) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(dim + 1) + " columns, got " + std::to_string(col));
        }
    }
    if (raw_labels.empty()) {
        throw FormatError(path.string() + ": no data rows");
    }

    Dataset ds;
    ds.name = name.empty() ? path.stem().string() : name;
    const std::int64_t n = static_cast<std::int64_t>(raw_labels.size());
    ds.features = Tensor::from_data({n, static_cast<std::int64_t>(dim)}, std::move(values));

    bool integral = true;
    for (const double v : raw_labels) {
        if (v < 0.0 || std::abs(v - std::nearbyint(v)) > 1e-9) {
            integral = false;
            break;
        }
    }
    if (integral) {
        ds.task = TaskKind::classification;
        int max_label = 0;
        ds.labels.reserve(raw_labels.size());
        for (const double v : raw_labels) {
            const int y = static_cast<int>(std::nearbyint(v));
            max_label = std::max(max_label, y);
            ds.labels.push_back(y);
        }
        ds.classes = max_label + 1;
        if (ds.classes < 2) {
            ds.classes = 2;
        }
    } else {
        ds.task = TaskKind::regression;
        ds.targets = std::move(raw_labels);
        ds.classes = 0;
    }
    return ds;
}

void save_csv_dataset(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw ConfigError("cannot open " + path.string() + " for writing");
    }
    const std::int64_t n = ds.size(), dim = ds.dim();
    for (std::int64_t d = 0; d < dim; ++d) {
        out << "f" << d << ",";
    }
    out << "label\n";
    char buf[64];
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t d = 0; d < dim; ++d) {
            std::snprintf(buf, sizeof(buf), "%.17g",
                          ds.features->data[static_cast<std::size_t>(i * dim + d)]);
            out << buf << ",";
        }
        if (ds.task == TaskKind::classification) {
            out << ds.labels[static_cast<std::size_t>(i)];
        } else {
            std::snprintf(buf, sizeof(buf), "%.17g", ds.targets[static_cast<std::size_t>(i)]);
            out << buf;
        }
        out << "\n";
    }
}

}  // namespace mixtune
