#include "plcnn/checks/suites.hpp"
#include "plcnn/config.hpp"
#include "plcnn/data.hpp"
#include "plcnn/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace plcnn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    const fs::path p = fs::temp_directory_path() / "plcnn_unit_io";
    fs::create_directories(p);
    return p;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Dataset tiny_images() {
    Dataset d;
    d.class_count = 10;
    d.shape = {1, 2, 3};
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<double> px(6);
        for (std::size_t k = 0; k < 6; ++k) {
            px[k] = static_cast<double>((i * 37 + k * 51) % 256) / 255.0;
        }
        d.samples.push_back({Tensor({1, 2, 3}, std::move(px)), (i * 3) % 10});
    }
    return d;
}

} // namespace

TEST_CASE("idx round trip") {
    const fs::path dir = scratch_dir();
    const Dataset d = tiny_images();
    write_idx(d, (dir / "img").string(), (dir / "lab").string());
    const auto img = read_bytes(dir / "img");
    REQUIRE(img.size() == 16 + 24);
    CHECK(img[2] == 0x08);
    CHECK(img[3] == 0x03);
    CHECK(img[7] == 4);
    const Dataset back = load_idx((dir / "img").string(), (dir / "lab").string());
    REQUIRE(back.size() == 4);
    CHECK(back.shape.height == 2);
    CHECK(back.shape.width == 3);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(back.samples[i].label == d.samples[i].label);
        CHECK(back.samples[i].input.storage() == d.samples[i].input.storage());
    }
}

TEST_CASE("idx errors") {
    const fs::path dir = scratch_dir();
    write_idx(tiny_images(), (dir / "img").string(), (dir / "lab").string());
    auto img = read_bytes(dir / "img");

    auto bad = img;
    bad[3] = 0x01;
    write_bytes(dir / "bad", bad);
    CHECK_THROWS_AS(load_idx((dir / "bad").string(), (dir / "lab").string()), BadMagicError);

    auto cut = img;
    cut.resize(cut.size() - 5);
    write_bytes(dir / "cut", cut);
    CHECK_THROWS_AS(load_idx((dir / "cut").string(), (dir / "lab").string()), TruncatedError);

    Dataset three = tiny_images();
    three.samples.pop_back();
    write_idx(three, (dir / "img3").string(), (dir / "lab3").string());
    CHECK_THROWS_AS(load_idx((dir / "img").string(), (dir / "lab3").string()), CountMismatchError);
    CHECK_THROWS_AS(load_idx((dir / "missing").string(), (dir / "lab").string()), DataError);
}

TEST_CASE("normalize per pixel") {
    Dataset d;
    d.class_count = 2;
    d.shape = {1, 1, 2};
    d.samples = {{Tensor({1, 1, 2}, std::vector<double>{1.0, 5.0}), 0},
                 {Tensor({1, 1, 2}, std::vector<double>{3.0, 5.0}), 1}};
    const auto [n, stats] = normalize(d);
    // First pixel: mean 2, std 1. Second is constant: centered, scale 1.
    CHECK(n.samples[0].input.storage() == std::vector<double>{-1.0, 0.0});
    CHECK(n.samples[1].input.storage() == std::vector<double>{1.0, 0.0});
    CHECK(stats.scale[1] == 1.0);
    // Reusing the statistics maps a new sample the same way.
    Dataset v = d;
    v.samples.resize(1);
    v.samples[0].input.storage() = {4.0, 7.0};
    const auto [nv, unused] = normalize(v, stats);
    CHECK(nv.samples[0].input.storage() == std::vector<double>{2.0, 2.0});
    Dataset empty;
    CHECK_THROWS_AS(normalize(empty), DataError);
}

TEST_CASE("synthetic blobs") {
    const Dataset a = synth_blobs(3, 4, 5, 11);
    const Dataset b = synth_blobs(3, 4, 5, 11);
    REQUIRE(a.size() == 12);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.samples[i].label == i % 3);
        CHECK(a.samples[i].input.storage() == b.samples[i].input.storage());
    }
    BlobOptions o;
    o.classes = 2;
    o.samples_per_class = 3;
    o.noise = 0.0;
    o.seed = 4;
    const Dataset clean = synth_blobs(o);
    CHECK(clean.samples[0].input.storage() == clean.samples[2].input.storage());
    CHECK(clean.samples[0].input.storage() != clean.samples[1].input.storage());
}

TEST_CASE("split and take") {
    const Dataset d = synth_blobs(2, 10, 4, 1);
    const auto [x, y] = split_dataset(d, 15, 3);
    CHECK(x.size() == 15);
    CHECK(y.size() == 5);
    const auto [x2, y2] = split_dataset(d, 15, 3);
    CHECK(x2.samples[7].input.storage() == x.samples[7].input.storage());
    CHECK(take(d, 3).size() == 3);
}

TEST_CASE("config parsing") {
    const nlohmann::json good = nlohmann::json::parse(R"({
        "input": {"channels": 1, "height": 8, "width": 8},
        "classes": 4,
        "layers": [{"type": "conv", "filters": 2, "kernel": 3}, {"type": "relu"},
                   {"type": "maxpool", "window": 2}, {"type": "dense", "units": 16}, {"type": "relu"}],
        "seed": 5,
        "lwsvm": {"lambda": 0.002}
    })");
    const ExperimentConfig c = parse_config(good);
    CHECK(c.layers.size() == 5);
    CHECK(c.lwsvm.lambda == 0.002);
    CHECK(c.lwsvm.mu == doctest::Approx(0.02));
    CHECK(c.sgd.seed == 5);
    CHECK(build_network(c).svm_index() == 5);

    auto unknown = good;
    unknown["lwsvm"]["learning_rate"] = 0.1;
    CHECK_THROWS_AS(parse_config(unknown), ConfigError);
    auto wrong_type = good;
    wrong_type["classes"] = "four";
    CHECK_THROWS_AS(parse_config(wrong_type), ConfigError);
    auto bad_kind = good;
    bad_kind["data"] = {{"kind", "imagenet"}};
    CHECK_THROWS_AS(parse_config(bad_kind), ConfigError);
    auto bad_layer = good;
    bad_layer["layers"][0]["type"] = "softmax";
    CHECK_THROWS_AS(parse_config(bad_layer), ConfigError);

    const ExperimentConfig again = parse_config(to_json(c));
    CHECK(to_json(again) == to_json(c));
}

TEST_CASE("weights round trip and mismatches") {
    const fs::path dir = scratch_dir();
    Rng rng(6);
    NetworkState net = checks::tiny_net(1);
    checks::randomize(net, rng);
    save_weights(net, (dir / "w.plcw").string());
    const auto bytes = read_bytes(dir / "w.plcw");
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PLCW");

    NetworkState other = checks::tiny_net(2);
    load_weights(other, (dir / "w.plcw").string());
    for (std::size_t l : net.parametric_indices()) {
        CHECK(other.weights(l).storage() == net.weights(l).storage());
    }

    NetworkState different = checks::enumerable_conv_net(1);
    CHECK_THROWS_AS(load_weights(different, (dir / "w.plcw").string()), DataError);
    auto cut = bytes;
    cut.resize(cut.size() / 2);
    write_bytes(dir / "cut.plcw", cut);
    CHECK_THROWS_AS(load_weights(other, (dir / "cut.plcw").string()), DataError);
    auto magic = bytes;
    magic[0] = 'X';
    write_bytes(dir / "magic.plcw", magic);
    CHECK_THROWS_AS(load_weights(other, (dir / "magic.plcw").string()), DataError);
}

TEST_CASE("metrics table") {
    TrainLog log;
    TrainRecord r;
    r.phase = "lwsvm";
    r.pass = 1;
    r.layer = 3;
    r.epoch = 2;
    r.objective = 0.1;
    r.layer_objective = std::nan("");
    r.train_acc = 0.5;
    r.val_acc = 0.25;
    r.wall_s = 12.5;
    log.add(r);
    const std::string csv = metrics_csv(log, false);
    CHECK(csv ==
          "phase,pass,layer,epoch,objective,layer_objective,train_acc,val_acc,wall_s\n"
          "lwsvm,1,3,2,0.10000000000000001,nan,0.5,0.25,0\n");
    CHECK(metrics_csv(log, true).find(",12.5\n") != std::string::npos);
}
