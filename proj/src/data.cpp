#include "plcnn/data.hpp"

#include "plcnn/errors.hpp"
#include "plcnn/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace plcnn {

std::string to_string(SplitTag t) {
    switch (t) {
    case SplitTag::Train:
        return "train";
    case SplitTag::Val:
        return "val";
    case SplitTag::Test:
        return "test";
    }
    return "unknown";
}

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                           static_cast<char>(v)};
    out.write(bytes, 4);
}

} // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t class_count) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);
    if (img.size() < 4 || be32(img, 0) != 0x00000803u) {
        throw BadMagicError(images_path + ": not an IDX unsigned-byte image file");
    }
    if (lab.size() < 4 || be32(lab, 0) != 0x00000801u) {
        throw BadMagicError(labels_path + ": not an IDX unsigned-byte label file");
    }
    if (img.size() < 16) {
        throw TruncatedError(images_path + ": header truncated");
    }
    if (lab.size() < 8) {
        throw TruncatedError(labels_path + ": header truncated");
    }
    const std::size_t n = be32(img, 4);
    const std::size_t rows = be32(img, 8);
    const std::size_t cols = be32(img, 12);
    const std::size_t n_labels = be32(lab, 4);
    if (img.size() < 16 + n * rows * cols) {
        throw TruncatedError(images_path + ": pixel payload truncated");
    }
    if (lab.size() < 8 + n_labels) {
        throw TruncatedError(labels_path + ": label payload truncated");
    }
    if (n != n_labels) {
        throw CountMismatchError("image count " + std::to_string(n) + " differs from label count " +
                                 std::to_string(n_labels));
    }
    Dataset ds;
    ds.class_count = class_count;
    ds.shape = {1, rows, cols};
    ds.samples.reserve(n);
    const std::size_t px = rows * cols;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v(px);
        for (std::size_t j = 0; j < px; ++j) {
            v[j] = static_cast<double>(img[16 + i * px + j]) / 255.0;
        }
        const std::size_t label = lab[8 + i];
        if (label >= class_count) {
            throw DataError(labels_path + ": label " + std::to_string(label) + " outside the class range");
        }
        ds.samples.push_back({Tensor({1, rows, cols}, std::move(v)), label});
    }
    return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) {
        throw DataError("cannot write IDX files");
    }
    put_be32(img, 0x00000803u);
    put_be32(img, static_cast<std::uint32_t>(ds.size()));
    put_be32(img, static_cast<std::uint32_t>(ds.shape.height));
    put_be32(img, static_cast<std::uint32_t>(ds.shape.width));
    put_be32(lab, 0x00000801u);
    put_be32(lab, static_cast<std::uint32_t>(ds.size()));
    for (const auto& s : ds.samples) {
        for (double v : s.input.storage()) {
            const double b = std::clamp(std::round(v * 255.0), 0.0, 255.0);
            img.put(static_cast<char>(static_cast<unsigned char>(b)));
        }
        lab.put(static_cast<char>(static_cast<unsigned char>(s.label)));
    }
}

Dataset load_cifar(const std::vector<std::string>& paths, std::size_t class_count) {
    constexpr std::size_t record = 1 + 3072;
    Dataset ds;
    ds.class_count = class_count;
    ds.shape = {3, 32, 32};
    for (const auto& path : paths) {
        const auto bytes = read_file(path);
        if (bytes.size() % record != 0) {
            throw TruncatedError(path + ": size is not a multiple of the CIFAR record length");
        }
        for (std::size_t off = 0; off < bytes.size(); off += record) {
            const std::size_t label = bytes[off];
            if (label >= class_count) {
                throw DataError(path + ": label outside the class range");
            }
            std::vector<double> v(3072);
            for (std::size_t j = 0; j < 3072; ++j) {
                v[j] = static_cast<double>(bytes[off + 1 + j]) / 255.0;
            }
            ds.samples.push_back({Tensor({3, 32, 32}, std::move(v)), label});
        }
    }
    return ds;
}

std::pair<Dataset, NormStats> normalize(const Dataset& ds, const std::optional<NormStats>& stats, bool per_channel) {
    if (ds.empty()) {
        throw DataError("cannot normalize an empty dataset");
    }
    const std::size_t dim = ds.shape.size();
    const std::size_t plane = ds.shape.height * ds.shape.width;
    NormStats st;
    if (stats) {
        st = *stats;
        if (st.mean.size() != (st.per_channel ? ds.shape.channels : dim)) {
            throw ShapeError("normalization statistics do not match the dataset shape");
        }
    } else {
        st.per_channel = per_channel;
        const std::size_t groups = per_channel ? ds.shape.channels : dim;
        const auto group_of = [&](std::size_t j) { return per_channel ? j / plane : j; };
        std::vector<double> sum(groups, 0.0), count(groups, 0.0);
        for (const auto& s : ds.samples) {
            for (std::size_t j = 0; j < dim; ++j) {
                sum[group_of(j)] += s.input[j];
                count[group_of(j)] += 1.0;
            }
        }
        st.mean.resize(groups);
        for (std::size_t g = 0; g < groups; ++g) {
            st.mean[g] = sum[g] / count[g];
        }
        std::vector<double> sq(groups, 0.0);
        for (const auto& s : ds.samples) {
            for (std::size_t j = 0; j < dim; ++j) {
                const double d = s.input[j] - st.mean[group_of(j)];
                sq[group_of(j)] += d * d;
            }
        }
        st.scale.resize(groups);
        for (std::size_t g = 0; g < groups; ++g) {
            const double sd = std::sqrt(sq[g] / count[g]);
            st.scale[g] = sd > 0.0 ? sd : 1.0;
        }
    }
    Dataset out = ds;
    for (auto& s : out.samples) {
        for (std::size_t j = 0; j < dim; ++j) {
            const std::size_t g = st.per_channel ? j / plane : j;
            s.input[j] = (s.input[j] - st.mean[g]) / st.scale[g];
        }
    }
    return {std::move(out), std::move(st)};
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, std::size_t first_count, std::uint64_t seed) {
    if (first_count > ds.size()) {
        throw DataError("split larger than the dataset");
    }
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);
    Dataset a, b;
    a.class_count = b.class_count = ds.class_count;
    a.shape = b.shape = ds.shape;
    a.split = SplitTag::Train;
    b.split = SplitTag::Val;
    for (std::size_t k = 0; k < order.size(); ++k) {
        (k < first_count ? a : b).samples.push_back(ds.samples[order[k]]);
    }
    return {std::move(a), std::move(b)};
}

Dataset take(const Dataset& ds, std::size_t count) {
    Dataset out;
    out.class_count = ds.class_count;
    out.shape = ds.shape;
    out.split = ds.split;
    const std::size_t n = std::min(count, ds.size());
    out.samples.assign(ds.samples.begin(), ds.samples.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
}

Dataset synth_blobs(const BlobOptions& opt) {
    if (opt.classes == 0 || opt.samples_per_class == 0 || opt.image_side == 0 || opt.channels == 0) {
        throw ConfigError("synthetic dataset sizes must be positive");
    }
    Rng rng(opt.seed);
    const Shape3 shape{opt.channels, opt.image_side, opt.image_side};
    const std::size_t dim = shape.size();
    std::vector<std::vector<double>> templates(opt.classes, std::vector<double>(dim));
    for (auto& t : templates) {
        for (auto& v : t) {
            v = rng.normal();
        }
    }
    Dataset ds;
    ds.class_count = opt.classes;
    ds.shape = shape;
    ds.samples.reserve(opt.classes * opt.samples_per_class);
    for (std::size_t k = 0; k < opt.samples_per_class; ++k) {
        for (std::size_t c = 0; c < opt.classes; ++c) {
            std::vector<double> v = templates[c];
            for (auto& e : v) {
                e += opt.noise * rng.normal();
            }
            ds.samples.push_back({Tensor({shape.channels, shape.height, shape.width}, std::move(v)), c});
        }
    }
    return ds;
}

Dataset synth_blobs(std::size_t classes, std::size_t samples_per_class, std::size_t image_side, std::uint64_t seed) {
    BlobOptions opt;
    opt.classes = classes;
    opt.samples_per_class = samples_per_class;
    opt.image_side = image_side;
    opt.seed = seed;
    return synth_blobs(opt);
}

} // namespace plcnn
