#pragma once

#include "plcnn/cccp.hpp"
#include "plcnn/data.hpp"
#include "plcnn/sgd.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace plcnn {

struct DataConfig {
    // "synth", "idx" or "cifar".
    std::string kind = "synth";
    std::string train_images;
    std::string train_labels;
    std::vector<std::string> cifar_files;
    // 0 keeps everything that is left.
    std::size_t train_count = 0;
    std::size_t val_count = 0;
    // "pixel", "channel" or "none".
    std::string normalize = "pixel";
    std::uint64_t split_seed = 0;
    BlobOptions blobs;
};

struct ExperimentConfig {
    Shape3 input;
    std::size_t classes = 10;
    std::vector<LayerSpec> layers;
    std::uint64_t init_seed = 0;
    DataConfig data;
    SgdConfig sgd;
    TrainConfig lwsvm;
    std::uint64_t seed = 0;
};

// Throws ConfigError on unknown keys, bad types or invalid values.
ExperimentConfig parse_config(const nlohmann::json& j);
// `seed` replaces the top-level seed before parsing. Relative data paths are
// resolved against the directory of the config file.
ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed = std::nullopt);
nlohmann::json to_json(const ExperimentConfig& cfg);

NetworkState build_network(const ExperimentConfig& cfg);

struct LoadedData {
    Dataset train;
    Dataset val;
};

// Loads, splits and normalizes (validation reuses the training statistics).
LoadedData load_data(const ExperimentConfig& cfg);

// Binary weight container: magic "PLCW", uint32 version, uint32 tensor count,
// then per tensor uint32 rank, rank x uint64 extents and float64 payload, all
// little-endian. Tensors are the parametric layers in order, SVM head last.
void save_weights(const NetworkState& net, const std::string& path);
// Throws DataError when the file does not match the network.
void load_weights(NetworkState& net, const std::string& path);

// Metrics table with the header
//   phase,pass,layer,epoch,objective,layer_objective,train_acc,val_acc,wall_s
// Numbers use 17 significant digits; "nan" marks a missing value. wall_s is
// written as 0 unless `wall_time` is set, which keeps reruns byte-identical.
std::string metrics_csv(const TrainLog& log, bool wall_time);
void write_metrics_csv(const TrainLog& log, const std::string& path, bool wall_time);
// One JSON object per record.
void write_metrics_jsonl(const TrainLog& log, const std::string& path, bool wall_time);

} // namespace plcnn
