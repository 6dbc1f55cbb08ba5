#pragma once

#include "plcnn/network.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace plcnn {

enum class SplitTag { Train, Val, Test };

std::string to_string(SplitTag t);

struct Dataset {
    std::vector<LabeledSample> samples;
    std::size_t class_count = 0;
    SplitTag split = SplitTag::Train;
    Shape3 shape;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

// MNIST-style IDX pair: 0x00000803 unsigned-byte images [n, rows, cols] and
// 0x00000801 labels [n]. Pixels are scaled to [0, 1]. Throws BadMagicError,
// TruncatedError or CountMismatchError; nothing is returned on failure.
Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t class_count = 10);
// Inverse of load_idx: pixels are mapped back with round(v * 255), clamped to [0, 255].
void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

// CIFAR binary batches: records of one label byte followed by 3072 pixel
// bytes (1024 per channel, R then G then B, row-major 32x32).
Dataset load_cifar(const std::vector<std::string>& paths, std::size_t class_count = 10);

struct NormStats {
    bool per_channel = false;
    std::vector<double> mean;
    // Divisors; 1 where the training variance is zero.
    std::vector<double> scale;
};

// Zero mean, unit variance per pixel (or per channel) using `stats` when
// given, otherwise statistics of `ds` itself. Throws on an empty dataset.
std::pair<Dataset, NormStats> normalize(const Dataset& ds, const std::optional<NormStats>& stats = std::nullopt,
                                        bool per_channel = false);

// Seeded shuffle, then the first `first_count` samples go to the first part.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, std::size_t first_count, std::uint64_t seed);

// Keeps the first `count` samples.
Dataset take(const Dataset& ds, std::size_t count);

struct BlobOptions {
    std::size_t classes = 4;
    std::size_t samples_per_class = 25;
    std::size_t image_side = 8;
    std::size_t channels = 1;
    double noise = 0.3;
    std::uint64_t seed = 0;
};

// One Gaussian random template per class plus i.i.d. Gaussian noise of the
// given standard deviation. Samples are interleaved by class.
Dataset synth_blobs(const BlobOptions& opt);
Dataset synth_blobs(std::size_t classes, std::size_t samples_per_class, std::size_t image_side, std::uint64_t seed);

} // namespace plcnn
