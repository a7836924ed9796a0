#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tagi/gaussian.hpp"

namespace tagi {

/// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::vector<double> row(std::size_t r) const {
        return std::vector<double>(data.begin() + r * cols, data.begin() + (r + 1) * cols);
    }
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Covariates plus either regression targets (y) or class labels.
struct Dataset {
    Matrix x;
    Matrix y;
    std::vector<int> labels;
    std::vector<std::string> feature_names;

    std::size_t n() const { return x.rows; }
    bool has_labels() const { return !labels.empty(); }

    Dataset subset(const std::vector<std::size_t>& idx) const {
        Dataset out;
        out.feature_names = feature_names;
        out.x = Matrix(idx.size(), x.cols);
        if (y.cols > 0) out.y = Matrix(idx.size(), y.cols);
        if (has_labels()) out.labels.resize(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t c = 0; c < x.cols; ++c) out.x.at(r, c) = x.at(idx[r], c);
            for (std::size_t c = 0; c < y.cols; ++c) out.y.at(r, c) = y.at(idx[r], c);
            if (has_labels()) out.labels[r] = labels[idx[r]];
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-column affine normalization: standardize (zero mean, unit variance),
/// range (min/max to [-1,1]), or none. Constant columns get scale 1.
struct NormStats {
    enum class Mode { standardize, range, none };
    Mode mode = Mode::none;
    std::vector<double> center;
    std::vector<double> scale;

    static NormStats fit(const Matrix& m, Mode mode) {
        NormStats s;
        s.mode = mode;
        s.center.assign(m.cols, 0.0);
        s.scale.assign(m.cols, 1.0);
        if (mode == Mode::none || m.rows == 0) return s;
        for (std::size_t c = 0; c < m.cols; ++c) {
            if (mode == Mode::standardize) {
                double mean = 0.0;
                for (std::size_t r = 0; r < m.rows; ++r) mean += m.at(r, c);
                mean /= static_cast<double>(m.rows);
                double ss = 0.0;
                for (std::size_t r = 0; r < m.rows; ++r) {
                    const double d = m.at(r, c) - mean;
                    ss += d * d;
                }
                const double sd = std::sqrt(ss / static_cast<double>(m.rows));
                s.center[c] = mean;
                s.scale[c] = sd > 0.0 ? sd : 1.0;
            } else {
                double lo = m.at(0, c), hi = m.at(0, c);
                for (std::size_t r = 1; r < m.rows; ++r) {
                    lo = std::min(lo, m.at(r, c));
                    hi = std::max(hi, m.at(r, c));
                }
                s.center[c] = 0.5 * (hi + lo);
                s.scale[c] = hi > lo ? 0.5 * (hi - lo) : 1.0;
            }
        }
        return s;
    }

    void apply(Matrix& m) const {
        for (std::size_t r = 0; r < m.rows; ++r)
            for (std::size_t c = 0; c < m.cols; ++c)
                m.at(r, c) = (m.at(r, c) - center[c]) / scale[c];
    }

    void invert(Matrix& m) const {
        for (std::size_t r = 0; r < m.rows; ++r)
            for (std::size_t c = 0; c < m.cols; ++c)
                m.at(r, c) = m.at(r, c) * scale[c] + center[c];
    }

    double normalize_value(double v, std::size_t c) const { return (v - center[c]) / scale[c]; }
    double denormalize_value(double v, std::size_t c) const { return v * scale[c] + center[c]; }
    /// Variances transform by the squared scale.
    double denormalize_var(double v, std::size_t c) const { return v * scale[c] * scale[c]; }
};

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') {
            quoted = !quoted;
        } else if (ch == ',' && !quoted) {
            cells.push_back(cell);
            cell.clear();
        } else {
            cell += ch;
        }
    }
    cells.push_back(cell);
    for (auto& c : cells) {
        const auto b = c.find_first_not_of(" \t\r");
        const auto e = c.find_last_not_of(" \t\r");
        c = (b == std::string::npos) ? std::string() : c.substr(b, e - b + 1);
    }
    return cells;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    std::size_t pos = 0;
    try {
        out = std::stod(s, &pos);
    } catch (const std::exception&) {
        return false;
    }
    return pos == s.size();
}

}  // namespace detail

/// Load a rectangular numeric CSV ('.' decimals, optional header row).
/// Columns listed in `target_columns` become y in the given order; columns
/// in `ignore_columns` are dropped; everything else becomes a feature in
/// file order. Malformed input is reported with 1-based row/column.
inline Dataset load_csv(const std::string& path,
                        const std::vector<std::size_t>& target_columns,
                        const std::vector<std::size_t>& ignore_columns = {}) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV file: " + path);

    std::vector<std::vector<double>> rows;
    std::vector<std::string> header;
    std::string line;
    std::size_t lineno = 0;
    std::size_t ncols = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto cells = detail::split_csv_line(line);
        std::vector<double> vals(cells.size());
        bool numeric = true;
        std::size_t bad_col = 0;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (!detail::parse_double(cells[c], vals[c])) {
                numeric = false;
                bad_col = c;
                break;
            }
        }
        if (!numeric) {
            if (rows.empty() && header.empty()) {
                header = cells;  // first non-numeric line is the header
                ncols = cells.size();
                continue;
            }
            throw DataError("non-numeric cell at row " + std::to_string(lineno) + ", column " +
                            std::to_string(bad_col + 1) + " in " + path);
        }
        if (ncols == 0) ncols = cells.size();
        if (cells.size() != ncols)
            throw DataError("ragged row " + std::to_string(lineno) + " in " + path + ": got " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(ncols));
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw DataError("no data rows in " + path);
    for (std::size_t t : target_columns)
        if (t >= ncols)
            throw DataError("target column " + std::to_string(t) + " out of range in " + path);

    auto is_in = [](const std::vector<std::size_t>& v, std::size_t c) {
        return std::find(v.begin(), v.end(), c) != v.end();
    };
    std::vector<std::size_t> feature_cols;
    for (std::size_t c = 0; c < ncols; ++c)
        if (!is_in(target_columns, c) && !is_in(ignore_columns, c)) feature_cols.push_back(c);
    if (feature_cols.empty()) throw DataError("no feature columns left in " + path);

    Dataset d;
    d.x = Matrix(rows.size(), feature_cols.size());
    d.y = Matrix(rows.size(), target_columns.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < feature_cols.size(); ++c)
            d.x.at(r, c) = rows[r][feature_cols[c]];
        for (std::size_t c = 0; c < target_columns.size(); ++c)
            d.y.at(r, c) = rows[r][target_columns[c]];
    }
    if (!header.empty())
        for (std::size_t c : feature_cols) d.feature_names.push_back(header[c]);
    return d;
}

// ---------------------------------------------------------------------------
// MNIST IDX
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw DataError("truncated IDX header in " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

/// Load IDX image/label pairs (big-endian magic 2051/2049). Pixels are
/// scaled to [0,1]; labels must be 0-9.
inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw DataError("cannot open IDX image file: " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw DataError("cannot open IDX label file: " + labels_path);

    const std::uint32_t img_magic = detail::read_be_u32(img, images_path);
    if (img_magic != 2051)
        throw DataError("bad IDX image magic " + std::to_string(img_magic) + " in " + images_path);
    const std::uint32_t n_images = detail::read_be_u32(img, images_path);
    const std::uint32_t n_rows = detail::read_be_u32(img, images_path);
    const std::uint32_t n_cols = detail::read_be_u32(img, images_path);

    const std::uint32_t lab_magic = detail::read_be_u32(lab, labels_path);
    if (lab_magic != 2049)
        throw DataError("bad IDX label magic " + std::to_string(lab_magic) + " in " + labels_path);
    const std::uint32_t n_labels = detail::read_be_u32(lab, labels_path);
    if (n_images != n_labels)
        throw DataError("image/label count mismatch: " + std::to_string(n_images) + " vs " +
                        std::to_string(n_labels));

    const std::size_t pixels = std::size_t(n_rows) * n_cols;
    Dataset d;
    d.x = Matrix(n_images, pixels);
    d.labels.resize(n_images);
    std::vector<unsigned char> buf(pixels);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
        if (!img) throw DataError("truncated IDX image data at item " + std::to_string(i));
        for (std::size_t p = 0; p < pixels; ++p)
            d.x.at(i, p) = static_cast<double>(buf[p]) / 255.0;
        const int c = lab.get();
        if (c == std::char_traits<char>::eof())
            throw DataError("truncated IDX label data at item " + std::to_string(i));
        if (c < 0 || c > 9)
            throw DataError("label byte " + std::to_string(c) + " outside 0-9 at item " +
                            std::to_string(i));
        d.labels[i] = c;
    }
    return d;
}

// ---------------------------------------------------------------------------
// Synthetic data and folds
// ---------------------------------------------------------------------------

/// 1D cubic benchmark: x uniform on x_range, y = x^3 + noise.
inline Dataset make_toy_cubic(std::size_t n, double noise_std,
                              std::pair<double, double> x_range, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("make_toy_cubic: n must be >= 1");
    Rng rng(seed);
    Dataset d;
    d.x = Matrix(n, 1);
    d.y = Matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.uniform(x_range.first, x_range.second);
        const double eps = noise_std > 0.0 ? rng.gaussian(0.0, noise_std) : 0.0;
        d.x.at(i, 0) = x;
        d.y.at(i, 0) = x * x * x + eps;
    }
    return d;
}

struct FoldSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Repeated random train/test splits: each fold shuffles all n indices and
/// takes round(train_fraction*n) for training, the rest for testing. Within
/// a fold the two sets are disjoint and exhaustive.
inline std::vector<FoldSplit> kfold(std::size_t n, std::size_t folds, std::uint64_t seed,
                                    double train_fraction = 0.9) {
    if (folds < 2) throw std::invalid_argument("kfold: folds must be >= 2");
    if (folds > n) throw std::invalid_argument("kfold: more folds than observations");
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
        throw std::invalid_argument("kfold: train_fraction must be in (0,1)");
    const auto n_train =
        static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    if (n_train == 0 || n_train == n)
        throw std::invalid_argument("kfold: split leaves an empty set");
    std::vector<FoldSplit> out(folds);
    for (std::size_t f = 0; f < folds; ++f) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        Rng rng(derive_seed(seed, f));
        rng.shuffle(idx);
        out[f].train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        out[f].test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    }
    return out;
}

/// Partition [0,n) into `folds` contiguous blocks of a shuffled index list;
/// block f is fold f's validation set. Used for cross-validation.
inline std::vector<FoldSplit> cv_partition(std::size_t n, std::size_t folds,
                                           std::uint64_t seed) {
    if (folds < 2) throw std::invalid_argument("cv_partition: folds must be >= 2");
    if (folds > n) throw std::invalid_argument("cv_partition: more folds than observations");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(idx);
    std::vector<FoldSplit> out(folds);
    for (std::size_t f = 0; f < folds; ++f) {
        const std::size_t lo = f * n / folds;
        const std::size_t hi = (f + 1) * n / folds;
        for (std::size_t i = 0; i < n; ++i) {
            if (i >= lo && i < hi)
                out[f].test.push_back(idx[i]);
            else
                out[f].train.push_back(idx[i]);
        }
    }
    return out;
}

}  // namespace tagi
