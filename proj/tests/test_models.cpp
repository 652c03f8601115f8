// Model assembly, analytic vs runtime parameter counts, prediction
// invariants, and the CKPT1 container including its failure modes.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "thama/model.hpp"
#include "thama/rng.hpp"

using namespace thama;
using models::CoreKind;
using models::ModelKind;
using models::ModelSpec;

namespace {

namespace fs = std::filesystem;

Tensor random_batch(std::size_t b, std::size_t d, Rng& rng) {
    Tensor t({b, d});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal());
    return t;
}

ModelSpec thama_spec(std::size_t d1, std::size_t d2, std::size_t d_f,
                     CoreKind core = CoreKind::Full) {
    ModelSpec spec;
    spec.kind = ModelKind::Thama;
    spec.d1 = d1;
    spec.d2 = d2;
    spec.d_f = d_f;
    spec.core = core;
    spec.seed = 404;
    return spec;
}

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("thama_models_" +
                                                  std::to_string(::getpid()))) {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

} // namespace

TEST_CASE("fcn graph holds exactly three dense layers") {
    ModelSpec spec;
    spec.kind = ModelKind::Fcn;
    spec.d1 = 512;
    auto model = models::build_model(spec);
    CHECK(model.graph->params().size() == 6); // three weight/bias pairs
    CHECK(models::param_count(model) == 73985);
    CHECK(models::analytic_param_count(spec) == 73985);
}

TEST_CASE("cnn flatten width: 768 -> 96 positions x 256 channels") {
    CHECK(models::flatten_dim(768) == 24576);
    ModelSpec spec;
    spec.kind = ModelKind::Cnn;
    spec.d1 = 768;
    auto model = models::build_model(spec);
    const int w1 = model.graph->find_param("fcn.dense1.w");
    CHECK(model.graph->node(w1).shape == Shape{24576, 128});
    CHECK(models::param_count(model) == models::analytic_param_count(spec));
}

TEST_CASE("full-size fusion model lands inside the 5.5M-10M parameter band") {
    const ModelSpec spec = thama_spec(1280, 1280, 96);
    CHECK(models::flatten_dim(1280) == 40960);
    const std::size_t count = models::analytic_param_count(spec);
    CHECK(count >= 5'500'000);
    CHECK(count <= 10'000'000);
    // frozen value of the closed-form count:
    // 2*123520 conv + 2*40960*96 proj + 96^3 core + (96*128+128 + 128*64+64 + 65)
    CHECK(count == 9'016'833);
    auto model = models::build_model(spec);
    CHECK(models::param_count(model) == count);
}

TEST_CASE("analytic parameter count equals the runtime count for every kind") {
    std::vector<ModelSpec> specs;
    {
        ModelSpec s;
        s.kind = ModelKind::Fcn;
        s.d1 = 37;
        specs.push_back(s);
    }
    {
        ModelSpec s;
        s.kind = ModelKind::Cnn;
        s.d1 = 50;
        specs.push_back(s);
    }
    {
        ModelSpec s;
        s.kind = ModelKind::Concat;
        s.d1 = 24;
        s.d2 = 40;
        specs.push_back(s);
    }
    specs.push_back(thama_spec(24, 40, 12));
    {
        ModelSpec s = thama_spec(24, 40, 12, CoreKind::Factored);
        s.ranks = {3, 5, 7};
        specs.push_back(s);
    }
    for (const ModelSpec& s : specs) {
        auto model = models::build_model(s);
        CHECK(models::param_count(model) == models::analytic_param_count(s));
    }
}

TEST_CASE("doubling d_f strictly increases the parameter count") {
    const std::size_t small = models::analytic_param_count(thama_spec(64, 64, 8));
    const std::size_t big = models::analytic_param_count(thama_spec(64, 64, 16));
    CHECK(big > small);
}

TEST_CASE("zero output layer predicts exactly 0.5 everywhere") {
    ModelSpec spec = thama_spec(16, 16, 4);
    auto model = models::build_model(spec);
    model.exec->set_param("fcn.out.w", Tensor({64, 1}));
    model.exec->set_param("fcn.out.b", Tensor({1}));
    Rng rng(7);
    const Tensor x1 = random_batch(5, 16, rng);
    const Tensor x2 = random_batch(5, 16, rng);
    for (float p : models::predict_batch(model, x1, &x2)) CHECK(p == 0.5f);
}

TEST_CASE("permuting the batch permutes the outputs identically") {
    ModelSpec spec;
    spec.kind = ModelKind::Cnn;
    spec.d1 = 24;
    spec.seed = 3;
    auto model = models::build_model(spec);
    Rng rng(8);
    const Tensor x = random_batch(6, 24, rng);
    Tensor reversed({6, 24});
    for (std::size_t b = 0; b < 6; ++b)
        std::copy(x.data() + b * 24, x.data() + (b + 1) * 24,
                  reversed.data() + (5 - b) * 24);
    const auto p = models::predict_batch(model, x);
    const auto q = models::predict_batch(model, reversed);
    for (std::size_t b = 0; b < 6; ++b) CHECK(p[b] == q[5 - b]);
}

TEST_CASE("a batch of one equals the corresponding row of a larger batch") {
    ModelSpec spec = thama_spec(16, 16, 4);
    auto model = models::build_model(spec);
    Rng rng(9);
    const Tensor x1 = random_batch(4, 16, rng);
    const Tensor x2 = random_batch(4, 16, rng);
    const auto full = models::predict_batch(model, x1, &x2);
    for (std::size_t b = 0; b < 4; ++b) {
        Tensor r1({1, 16}), r2({1, 16});
        std::copy(x1.data() + b * 16, x1.data() + (b + 1) * 16, r1.data());
        std::copy(x2.data() + b * 16, x2.data() + (b + 1) * 16, r2.data());
        const auto one = models::predict_batch(model, r1, &r2);
        CHECK(one[0] == full[b]);
    }
}

TEST_CASE("spec validation rejects impossible dimensions") {
    ModelSpec bad;
    bad.kind = ModelKind::Cnn;
    bad.d1 = 7; // cannot survive three pool-2 stages
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    ModelSpec no_d2 = thama_spec(16, 0, 4);
    CHECK_THROWS_AS(no_d2.validate(), ConfigError);

    ModelSpec bad_rank = thama_spec(16, 16, 4, CoreKind::Factored);
    bad_rank.ranks = {5, 2, 2}; // r1 > d_f
    CHECK_THROWS_AS(bad_rank.validate(), ConfigError);

    ModelSpec fcn_with_d2;
    fcn_with_d2.kind = ModelKind::Fcn;
    fcn_with_d2.d1 = 16;
    fcn_with_d2.d2 = 16;
    CHECK_THROWS_AS(fcn_with_d2.validate(), ConfigError);
}

TEST_CASE("two builds from the same spec are bitwise identical") {
    ModelSpec spec = thama_spec(16, 16, 4, CoreKind::Factored);
    spec.ranks = {2, 3, 4};
    auto a = models::build_model(spec);
    auto b = models::build_model(spec);
    for (int pid : a.graph->params()) {
        const auto va = a.exec->param_data(pid);
        const auto vb = b.exec->param_data(pid);
        REQUIRE(va.size() == vb.size());
        for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);
    }
}

TEST_CASE("checkpoint round trip reproduces predictions bitwise") {
    TempDir tmp;
    ModelSpec spec = thama_spec(16, 16, 4);
    auto model = models::build_model(spec);
    Rng rng(11);
    const Tensor x1 = random_batch(3, 16, rng);
    const Tensor x2 = random_batch(3, 16, rng);
    const auto before = models::predict_batch(model, x1, &x2);

    models::CheckpointMeta meta{0.123, 7, "E"};
    const std::string path = tmp.file("model.ckpt");
    models::save_checkpoint(model, meta, path);
    auto loaded = models::load_checkpoint(path);
    const auto after = models::predict_batch(loaded, x1, &x2);
    CHECK(before == after);

    const models::CheckpointMeta meta2 = models::read_checkpoint_meta(path);
    CHECK(meta2.best_dev_loss == doctest::Approx(0.123));
    CHECK(meta2.epoch == 7);
    CHECK(meta2.train_domain == "E");
}

TEST_CASE("checkpoint fault injection: truncation, kind mismatch, bad magic") {
    TempDir tmp;
    ModelSpec spec;
    spec.kind = ModelKind::Fcn;
    spec.d1 = 12;
    auto model = models::build_model(spec);
    const std::string path = tmp.file("fcn.ckpt");
    models::save_checkpoint(model, {}, path);

    // truncated payload
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        std::ofstream out(tmp.file("trunc.ckpt"), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS((void)models::load_checkpoint(tmp.file("trunc.ckpt")), DataError);

    // loading an fcn checkpoint while expecting a fusion model
    CHECK_THROWS_AS((void)models::load_checkpoint(path, ModelKind::Thama), DataError);

    // corrupt magic
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        bytes[0] = 'X';
        std::ofstream out(tmp.file("magic.ckpt"), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS((void)models::load_checkpoint(tmp.file("magic.ckpt")), DataError);

    // trailing garbage
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        bytes += "junk";
        std::ofstream out(tmp.file("tail.ckpt"), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS((void)models::load_checkpoint(tmp.file("tail.ckpt")), DataError);
}

TEST_CASE("checkpoint bytes are identical across repeated saves") {
    TempDir tmp;
    auto model = models::build_model(thama_spec(16, 16, 4));
    models::save_checkpoint(model, {0.5, 3, "C"}, tmp.file("a.ckpt"));
    models::save_checkpoint(model, {0.5, 3, "C"}, tmp.file("b.ckpt"));
    std::ifstream fa(tmp.file("a.ckpt"), std::ios::binary);
    std::ifstream fb(tmp.file("b.ckpt"), std::ios::binary);
    const std::string a((std::istreambuf_iterator<char>(fa)),
                        std::istreambuf_iterator<char>());
    const std::string b((std::istreambuf_iterator<char>(fb)),
                        std::istreambuf_iterator<char>());
    CHECK(a == b);
    CHECK(!a.empty());
}
