#include "plcnn/config.hpp"

#include "plcnn/errors.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace plcnn {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) {
        throw ConfigError(where + " must be an object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!allowed.contains(key)) {
            throw ConfigError("unknown key '" + key + "' in " + where);
        }
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key)) {
        return fallback;
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("bad value for '") + key + "' in " + where);
    }
}

std::size_t positive(const json& j, const char* key, std::size_t fallback, const std::string& where) {
    const auto v = get_or<long long>(j, key, static_cast<long long>(fallback), where);
    if (v <= 0) {
        throw ConfigError(std::string("'") + key + "' in " + where + " must be positive");
    }
    return static_cast<std::size_t>(v);
}

std::size_t nonnegative(const json& j, const char* key, std::size_t fallback, const std::string& where) {
    const auto v = get_or<long long>(j, key, static_cast<long long>(fallback), where);
    if (v < 0) {
        throw ConfigError(std::string("'") + key + "' in " + where + " must be nonnegative");
    }
    return static_cast<std::size_t>(v);
}

// "kernel": 5 or [5, 3]
std::pair<std::size_t, std::size_t> extent2(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) {
        throw ConfigError(std::string("missing '") + key + "' in " + where);
    }
    const auto& v = j.at(key);
    if (v.is_number_integer() && v.get<long long>() > 0) {
        const auto k = v.get<std::size_t>();
        return {k, k};
    }
    if (v.is_array() && v.size() == 2 && v[0].is_number_integer() && v[1].is_number_integer() &&
        v[0].get<long long>() > 0 && v[1].get<long long>() > 0) {
        return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
    }
    throw ConfigError(std::string("'") + key + "' in " + where + " must be a positive integer or a pair");
}

LayerSpec parse_layer(const json& j, std::size_t index) {
    const std::string where = "layers[" + std::to_string(index) + "]";
    if (!j.is_object() || !j.contains("type")) {
        throw ConfigError(where + " needs a 'type'");
    }
    const auto type = get_or<std::string>(j, "type", "", where);
    if (type == "conv" || type == "convolution") {
        check_keys(j, {"type", "filters", "kernel", "stride", "padding", "bias"}, where);
        const auto [kh, kw] = extent2(j, "kernel", where);
        return LayerSpec::convolution(positive(j, "filters", 0, where), kh, kw, positive(j, "stride", 1, where),
                                      nonnegative(j, "padding", 0, where), get_or<bool>(j, "bias", true, where));
    }
    if (type == "dense") {
        check_keys(j, {"type", "units", "bias"}, where);
        return LayerSpec::dense(positive(j, "units", 0, where), get_or<bool>(j, "bias", true, where));
    }
    if (type == "relu") {
        check_keys(j, {"type"}, where);
        return LayerSpec::relu();
    }
    if (type == "maxpool") {
        check_keys(j, {"type", "window", "stride"}, where);
        const auto [wh, ww] = extent2(j, "window", where);
        return LayerSpec::max_pool(wh, ww, positive(j, "stride", wh, where));
    }
    if (type == "affine") {
        check_keys(j, {"type", "scale", "shift"}, where);
        return LayerSpec::affine(get_or<std::vector<double>>(j, "scale", {}, where),
                                 get_or<std::vector<double>>(j, "shift", {}, where));
    }
    throw ConfigError(where + ": unknown layer type '" + type + "'");
}

json layer_to_json(const LayerSpec& s) {
    switch (s.kind) {
    case LayerKind::Convolution:
        return {{"type", "conv"},      {"filters", s.filters}, {"kernel", {s.kernel_h, s.kernel_w}},
                {"stride", s.stride},  {"padding", s.padding}, {"bias", s.bias}};
    case LayerKind::Dense:
        return {{"type", "dense"}, {"units", s.units}, {"bias", s.bias}};
    case LayerKind::Relu:
        return {{"type", "relu"}};
    case LayerKind::MaxPool:
        return {{"type", "maxpool"}, {"window", {s.window_h, s.window_w}}, {"stride", s.stride}};
    case LayerKind::Affine:
        return {{"type", "affine"}, {"scale", s.scale}, {"shift", s.shift}};
    }
    return {};
}

} // namespace

ExperimentConfig parse_config(const json& j) {
    check_keys(j, {"input", "classes", "layers", "init", "data", "sgd", "lwsvm", "seed"}, "config");
    ExperimentConfig c;
    if (!j.contains("input")) {
        throw ConfigError("config needs an 'input' shape");
    }
    const auto& in = j.at("input");
    check_keys(in, {"channels", "height", "width"}, "input");
    c.input = {positive(in, "channels", 1, "input"), positive(in, "height", 1, "input"),
               positive(in, "width", 1, "input")};
    c.classes = positive(j, "classes", 10, "config");
    if (c.classes < 2) {
        throw ConfigError("'classes' must be at least 2");
    }
    if (j.contains("layers")) {
        if (!j.at("layers").is_array()) {
            throw ConfigError("'layers' must be an array");
        }
        for (std::size_t k = 0; k < j.at("layers").size(); ++k) {
            c.layers.push_back(parse_layer(j.at("layers")[k], k));
        }
    }
    c.seed = get_or<std::uint64_t>(j, "seed", 0, "config");
    c.init_seed = c.seed;
    if (j.contains("init")) {
        check_keys(j.at("init"), {"seed"}, "init");
        c.init_seed = get_or<std::uint64_t>(j.at("init"), "seed", c.seed, "init");
    }

    c.data.split_seed = c.seed;
    c.data.blobs.classes = c.classes;
    c.data.blobs.channels = c.input.channels;
    c.data.blobs.image_side = c.input.height;
    c.data.blobs.seed = c.seed;
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d,
                   {"kind", "train_images", "train_labels", "cifar_files", "train_count", "val_count", "normalize",
                    "split_seed", "samples_per_class", "noise", "seed"},
                   "data");
        c.data.kind = get_or<std::string>(d, "kind", "synth", "data");
        c.data.train_images = get_or<std::string>(d, "train_images", "", "data");
        c.data.train_labels = get_or<std::string>(d, "train_labels", "", "data");
        c.data.cifar_files = get_or<std::vector<std::string>>(d, "cifar_files", {}, "data");
        c.data.train_count = nonnegative(d, "train_count", 0, "data");
        c.data.val_count = nonnegative(d, "val_count", 0, "data");
        c.data.normalize = get_or<std::string>(d, "normalize", "pixel", "data");
        c.data.split_seed = get_or<std::uint64_t>(d, "split_seed", c.seed, "data");
        c.data.blobs.samples_per_class = positive(d, "samples_per_class", 25, "data");
        c.data.blobs.noise = get_or<double>(d, "noise", 0.3, "data");
        c.data.blobs.seed = get_or<std::uint64_t>(d, "seed", c.seed, "data");
        if (c.data.kind != "synth" && c.data.kind != "idx" && c.data.kind != "cifar") {
            throw ConfigError("unknown data kind '" + c.data.kind + "'");
        }
        if (c.data.normalize != "pixel" && c.data.normalize != "channel" && c.data.normalize != "none") {
            throw ConfigError("unknown normalization '" + c.data.normalize + "'");
        }
        if (!(c.data.blobs.noise >= 0.0)) {
            throw ConfigError("'noise' must be nonnegative");
        }
    }

    c.sgd = SgdConfig::mnist_defaults(SgdSolver::Adam);
    c.sgd.seed = c.seed;
    if (j.contains("sgd")) {
        const auto& s = j.at("sgd");
        check_keys(s,
                   {"solver", "eta", "lambda", "batch_size", "epochs", "rho", "beta1", "beta2", "epsilon", "loss"},
                   "sgd");
        const auto solver = parse_solver(get_or<std::string>(s, "solver", "adam", "sgd"));
        c.sgd = SgdConfig::mnist_defaults(solver);
        c.sgd.seed = c.seed;
        c.sgd.eta = get_or<double>(s, "eta", c.sgd.eta, "sgd");
        c.sgd.lambda = get_or<double>(s, "lambda", c.sgd.lambda, "sgd");
        c.sgd.batch_size = positive(s, "batch_size", c.sgd.batch_size, "sgd");
        c.sgd.epochs = nonnegative(s, "epochs", c.sgd.epochs, "sgd");
        c.sgd.rho = get_or<double>(s, "rho", c.sgd.rho, "sgd");
        c.sgd.beta1 = get_or<double>(s, "beta1", c.sgd.beta1, "sgd");
        c.sgd.beta2 = get_or<double>(s, "beta2", c.sgd.beta2, "sgd");
        c.sgd.epsilon = get_or<double>(s, "epsilon", c.sgd.epsilon, "sgd");
        c.sgd.loss = parse_loss(get_or<std::string>(s, "loss", "hinge", "sgd"));
        if (!(c.sgd.eta >= 0.0) || !(c.sgd.lambda >= 0.0)) {
            throw ConfigError("sgd eta and lambda must be nonnegative");
        }
    }

    c.lwsvm.seed = c.seed;
    if (j.contains("lwsvm")) {
        const auto& l = j.at("lwsvm");
        check_keys(l,
                   {"lambda", "mu", "batch_size", "cccp_tolerance", "inner_stop", "inner_max_epochs",
                    "cccp_min_iters", "cccp_max_iters", "max_passes", "stop_on_validation", "escalate",
                    "require_descent", "gap_tol", "gap_samples"},
                   "lwsvm");
        auto& t = c.lwsvm;
        t.lambda = get_or<double>(l, "lambda", t.lambda, "lwsvm");
        t.mu = get_or<double>(l, "mu", 10.0 * t.lambda, "lwsvm");
        t.batch_size = positive(l, "batch_size", t.batch_size, "lwsvm");
        t.cccp_tolerance = get_or<double>(l, "cccp_tolerance", t.cccp_tolerance, "lwsvm");
        t.inner_stop = get_or<double>(l, "inner_stop", t.inner_stop, "lwsvm");
        t.inner_max_epochs = positive(l, "inner_max_epochs", t.inner_max_epochs, "lwsvm");
        t.cccp_min_iters = positive(l, "cccp_min_iters", t.cccp_min_iters, "lwsvm");
        t.cccp_max_iters = positive(l, "cccp_max_iters", t.cccp_max_iters, "lwsvm");
        t.max_passes = nonnegative(l, "max_passes", t.max_passes, "lwsvm");
        t.stop_on_validation = get_or<bool>(l, "stop_on_validation", t.stop_on_validation, "lwsvm");
        if (l.contains("escalate")) {
            t.escalate = get_or<bool>(l, "escalate", false, "lwsvm");
        }
        t.require_descent = get_or<bool>(l, "require_descent", t.require_descent, "lwsvm");
        t.gap_tol = get_or<double>(l, "gap_tol", t.gap_tol, "lwsvm");
        t.gap_samples = positive(l, "gap_samples", t.gap_samples, "lwsvm");
        if (!(t.lambda > 0.0) || !(t.mu >= 0.0)) {
            throw ConfigError("lwsvm lambda must be positive and mu nonnegative");
        }
        if (!(t.cccp_tolerance > 0.0 && t.cccp_tolerance < 1.0) || !(t.inner_stop > 0.0 && t.inner_stop < 1.0)) {
            throw ConfigError("lwsvm thresholds must lie in (0, 1)");
        }
    }
    return c;
}

ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    if (seed) {
        if (!j.is_object()) {
            throw ConfigError(path + ": expected a JSON object");
        }
        j["seed"] = *seed;
    }
    ExperimentConfig c = parse_config(j);
    // Data paths are relative to the config file.
    const auto base = std::filesystem::path(path).parent_path();
    const auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) {
            p = (base / p).lexically_normal().string();
        }
    };
    resolve(c.data.train_images);
    resolve(c.data.train_labels);
    for (auto& f : c.data.cifar_files) {
        resolve(f);
    }
    return c;
}

json to_json(const ExperimentConfig& c) {
    json layers = json::array();
    for (const auto& s : c.layers) {
        layers.push_back(layer_to_json(s));
    }
    json j;
    j["input"] = {{"channels", c.input.channels}, {"height", c.input.height}, {"width", c.input.width}};
    j["classes"] = c.classes;
    j["layers"] = layers;
    j["seed"] = c.seed;
    j["init"] = {{"seed", c.init_seed}};
    j["data"] = {{"kind", c.data.kind},
                 {"train_images", c.data.train_images},
                 {"train_labels", c.data.train_labels},
                 {"cifar_files", c.data.cifar_files},
                 {"train_count", c.data.train_count},
                 {"val_count", c.data.val_count},
                 {"normalize", c.data.normalize},
                 {"split_seed", c.data.split_seed},
                 {"samples_per_class", c.data.blobs.samples_per_class},
                 {"noise", c.data.blobs.noise},
                 {"seed", c.data.blobs.seed}};
    j["sgd"] = {{"solver", to_string(c.sgd.solver)}, {"eta", c.sgd.eta},       {"lambda", c.sgd.lambda},
                {"batch_size", c.sgd.batch_size},    {"epochs", c.sgd.epochs}, {"rho", c.sgd.rho},
                {"beta1", c.sgd.beta1},              {"beta2", c.sgd.beta2},   {"epsilon", c.sgd.epsilon},
                {"loss", to_string(c.sgd.loss)}};
    const auto& t = c.lwsvm;
    j["lwsvm"] = {{"lambda", t.lambda},
                  {"mu", t.mu},
                  {"batch_size", t.batch_size},
                  {"cccp_tolerance", t.cccp_tolerance},
                  {"inner_stop", t.inner_stop},
                  {"inner_max_epochs", t.inner_max_epochs},
                  {"cccp_min_iters", t.cccp_min_iters},
                  {"cccp_max_iters", t.cccp_max_iters},
                  {"max_passes", t.max_passes},
                  {"stop_on_validation", t.stop_on_validation},
                  {"require_descent", t.require_descent},
                  {"gap_tol", t.gap_tol},
                  {"gap_samples", t.gap_samples}};
    if (t.escalate) {
        j["lwsvm"]["escalate"] = *t.escalate;
    }
    return j;
}

NetworkState build_network(const ExperimentConfig& cfg) {
    NetworkState net(cfg.input, cfg.layers, cfg.classes);
    net.init_random(cfg.init_seed);
    return net;
}

LoadedData load_data(const ExperimentConfig& cfg) {
    Dataset all;
    if (cfg.data.kind == "synth") {
        BlobOptions opt = cfg.data.blobs;
        opt.classes = cfg.classes;
        opt.channels = cfg.input.channels;
        opt.image_side = cfg.input.height;
        if (cfg.input.height != cfg.input.width) {
            throw ConfigError("synthetic data needs a square input");
        }
        all = synth_blobs(opt);
    } else if (cfg.data.kind == "idx") {
        all = load_idx(cfg.data.train_images, cfg.data.train_labels, cfg.classes);
    } else {
        all = load_cifar(cfg.data.cifar_files, cfg.classes);
    }
    if (!(all.shape == cfg.input)) {
        throw DataError("dataset shape " + to_string(all.shape) + " does not match the network input " +
                        to_string(cfg.input));
    }
    const std::size_t n = all.size();
    std::size_t n_train = cfg.data.train_count ? cfg.data.train_count : n - std::min(n, cfg.data.val_count);
    std::size_t n_val = cfg.data.val_count;
    if (n_train + n_val > n) {
        throw DataError("requested " + std::to_string(n_train + n_val) + " samples but the dataset has " +
                        std::to_string(n));
    }
    auto [train, rest] = split_dataset(all, n_train, cfg.data.split_seed);
    Dataset val = take(rest, n_val);
    val.split = SplitTag::Val;
    if (train.empty()) {
        throw DataError("empty training set");
    }
    if (cfg.data.normalize != "none") {
        auto [ntrain, stats] = normalize(train, std::nullopt, cfg.data.normalize == "channel");
        train = std::move(ntrain);
        if (!val.empty()) {
            val = normalize(val, stats).first;
        }
    }
    return {std::move(train), std::move(val)};
}

namespace {

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw TruncatedError(path + ": weight file truncated");
    }
    return v;
}

constexpr std::uint32_t kWeightVersion = 1;

} // namespace

void save_weights(const NetworkState& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path);
    }
    out.write("PLCW", 4);
    const auto idx = net.parametric_indices();
    put<std::uint32_t>(out, kWeightVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(idx.size()));
    for (std::size_t k : idx) {
        const Tensor& t = net.weights(k);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t e : t.shape()) {
            put<std::uint64_t>(out, e);
        }
        out.write(reinterpret_cast<const char*>(t.storage().data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
}

void load_weights(NetworkState& net, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    char magic[4] = {};
    if (!in.read(magic, 4) || std::memcmp(magic, "PLCW", 4) != 0) {
        throw BadMagicError(path + ": not a weight file");
    }
    if (get<std::uint32_t>(in, path) != kWeightVersion) {
        throw DataError(path + ": unsupported weight file version");
    }
    const auto idx = net.parametric_indices();
    if (get<std::uint32_t>(in, path) != idx.size()) {
        throw CountMismatchError(path + ": tensor count does not match the network");
    }
    std::vector<Tensor> loaded;
    for (std::size_t k : idx) {
        const auto rank = get<std::uint32_t>(in, path);
        std::vector<std::size_t> shape;
        for (std::uint32_t r = 0; r < rank; ++r) {
            shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(in, path)));
        }
        if (shape != net.weights(k).shape()) {
            throw CountMismatchError(path + ": tensor shape does not match layer " + std::to_string(k));
        }
        Tensor t(shape);
        if (!in.read(reinterpret_cast<char*>(t.storage().data()),
                     static_cast<std::streamsize>(t.size() * sizeof(double)))) {
            throw TruncatedError(path + ": weight payload truncated");
        }
        loaded.push_back(std::move(t));
    }
    for (std::size_t n = 0; n < idx.size(); ++n) {
        net.weights(idx[n]) = std::move(loaded[n]);
    }
}

namespace {

std::string num(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json num_json(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

} // namespace

std::string metrics_csv(const TrainLog& log, bool wall_time) {
    std::ostringstream out;
    out << "phase,pass,layer,epoch,objective,layer_objective,train_acc,val_acc,wall_s\n";
    for (const auto& r : log.records) {
        out << r.phase << ',' << r.pass << ',' << r.layer << ',' << r.epoch << ',' << num(r.objective) << ','
            << num(r.layer_objective) << ',' << num(r.train_acc) << ',' << num(r.val_acc) << ','
            << (wall_time ? num(r.wall_s) : std::string("0")) << '\n';
    }
    return out.str();
}

void write_metrics_csv(const TrainLog& log, const std::string& path, bool wall_time) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path);
    }
    out << metrics_csv(log, wall_time);
}

void write_metrics_jsonl(const TrainLog& log, const std::string& path, bool wall_time) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path);
    }
    for (const auto& r : log.records) {
        json j = {{"phase", r.phase},
                  {"pass", r.pass},
                  {"layer", r.layer},
                  {"epoch", r.epoch},
                  {"objective", num_json(r.objective)},
                  {"layer_objective", num_json(r.layer_objective)},
                  {"train_acc", num_json(r.train_acc)},
                  {"val_acc", num_json(r.val_acc)},
                  {"wall_s", wall_time ? r.wall_s : 0.0}};
        out << j.dump() << '\n';
    }
}

} // namespace plcnn
