// Container formats (EMB1/FRM1/manifest), pooling, the synthetic two-view
// task, and batch iteration. Round trips are checked bitwise; fault injection
// covers truncation, bad magic, versions, and misalignment.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "thama/data.hpp"
#include "thama/rng.hpp"

using namespace thama;
using namespace thama::data;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("thama_data_" +
                                                  std::to_string(::getpid()))) {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)),
                       std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

EmbeddingSet random_set(std::uint32_t dim, std::size_t count, Rng& rng) {
    EmbeddingSet set;
    set.dim = dim;
    for (std::size_t i = 0; i < count; ++i) {
        EmbeddingRecord r;
        r.id = 1000 + i;
        r.label = rng.uniform() < 0.5 ? kLabelBonafide : kLabelFake;
        r.domain = rng.uniform() < 0.5 ? kDomainE : kDomainC;
        r.vec.resize(dim);
        for (auto& v : r.vec) v = static_cast<float>(rng.normal());
        set.records.push_back(std::move(r));
    }
    return set;
}

double dot_f(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

} // namespace

TEST_CASE("pool_frames: single frame passes through unchanged") {
    FrameMatrix m{1, 3, {1.5f, -2.0f, 0.25f}};
    const auto v = pool_frames(m);
    CHECK(v == std::vector<float>{1.5f, -2.0f, 0.25f});
}

TEST_CASE("pool_frames: hand mean of [[1,3],[3,5]] is [2,4]") {
    FrameMatrix m{2, 2, {1, 3, 3, 5}};
    const auto v = pool_frames(m);
    CHECK(v[0] == doctest::Approx(2.0f));
    CHECK(v[1] == doctest::Approx(4.0f));
}

TEST_CASE("pool_frames: random 7x5 matrix equals the column-sum oracle") {
    Rng rng(61);
    FrameMatrix m{7, 5, {}};
    m.values.resize(35);
    for (auto& v : m.values) v = static_cast<float>(rng.normal());
    const auto got = pool_frames(m);
    for (std::size_t d = 0; d < 5; ++d) {
        double acc = 0.0;
        for (std::size_t f = 0; f < 7; ++f) acc += m.values[f * 5 + d];
        CHECK(got[d] == doctest::Approx(acc / 7.0).epsilon(1e-6));
    }
}

TEST_CASE("pool_frames: permutation-invariant over frames") {
    Rng rng(62);
    FrameMatrix m{4, 3, {}};
    m.values.resize(12);
    for (auto& v : m.values) v = static_cast<float>(rng.normal());
    FrameMatrix shuffled = m;
    // rotate the frames
    std::rotate(shuffled.values.begin(), shuffled.values.begin() + 3,
                shuffled.values.end());
    CHECK(pool_frames(m) == pool_frames(shuffled));
}

TEST_CASE("pool_frames: empty matrix is an error") {
    CHECK_THROWS_AS((void)pool_frames(FrameMatrix{}), DataError);
}

TEST_CASE("EMB1: empty set round-trips") {
    TempDir tmp;
    EmbeddingSet set;
    set.dim = 4;
    write_emb1(set, tmp.file("empty.emb1"));
    const EmbeddingSet back = read_emb1(tmp.file("empty.emb1"));
    CHECK(back.dim == 4);
    CHECK(back.records.empty());
}

TEST_CASE("EMB1: random payloads round-trip bitwise") {
    TempDir tmp;
    Rng rng(63);
    for (int trial = 0; trial < 10; ++trial) {
        const EmbeddingSet set = random_set(1 + rng.below(9), rng.below(20), rng);
        const std::string path = tmp.file("set.emb1");
        write_emb1(set, path);
        const EmbeddingSet back = read_emb1(path);
        REQUIRE(back.records.size() == set.records.size());
        CHECK(back.dim == set.dim);
        for (std::size_t i = 0; i < set.records.size(); ++i) {
            CHECK(back.records[i].id == set.records[i].id);
            CHECK(back.records[i].label == set.records[i].label);
            CHECK(back.records[i].domain == set.records[i].domain);
            REQUIRE(back.records[i].vec.size() == set.records[i].vec.size());
            for (std::size_t k = 0; k < set.records[i].vec.size(); ++k) {
                const float a = set.records[i].vec[k];
                const float b = back.records[i].vec[k];
                CHECK(std::memcmp(&a, &b, sizeof(float)) == 0);
            }
        }
        // writing twice gives identical bytes
        write_emb1(set, tmp.file("again.emb1"));
        CHECK(slurp(path) == slurp(tmp.file("again.emb1")));
    }
}

TEST_CASE("EMB1 fault injection: truncation names the record index") {
    TempDir tmp;
    Rng rng(64);
    const EmbeddingSet set = random_set(4, 3, rng);
    write_emb1(set, tmp.file("ok.emb1"));
    std::string bytes = slurp(tmp.file("ok.emb1"));
    // chop into the middle of record 1 (header is 20 bytes, record is 26)
    bytes.resize(20 + 26 + 13);
    spit(tmp.file("cut.emb1"), bytes);
    try {
        (void)read_emb1(tmp.file("cut.emb1"));
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    }
}

TEST_CASE("EMB1 fault injection: magic, version, dim, label, trailing bytes") {
    TempDir tmp;
    Rng rng(65);
    const EmbeddingSet set = random_set(2, 2, rng);
    write_emb1(set, tmp.file("ok.emb1"));
    const std::string good = slurp(tmp.file("ok.emb1"));

    std::string bad_magic = good;
    bad_magic[0] = 'Z';
    spit(tmp.file("m.emb1"), bad_magic);
    CHECK_THROWS_AS((void)read_emb1(tmp.file("m.emb1")), DataError);

    std::string bad_version = good;
    bad_version[4] = 9;
    spit(tmp.file("v.emb1"), bad_version);
    CHECK_THROWS_AS((void)read_emb1(tmp.file("v.emb1")), DataError);

    std::string zero_dim = good;
    zero_dim[8] = zero_dim[9] = zero_dim[10] = zero_dim[11] = 0;
    spit(tmp.file("d.emb1"), zero_dim);
    CHECK_THROWS_AS((void)read_emb1(tmp.file("d.emb1")), DataError);

    std::string bad_label = good;
    bad_label[20 + 8] = 7; // label byte of record 0
    spit(tmp.file("l.emb1"), bad_label);
    CHECK_THROWS_AS((void)read_emb1(tmp.file("l.emb1")), DataError);

    std::string trailing = good + "x";
    spit(tmp.file("t.emb1"), trailing);
    CHECK_THROWS_AS((void)read_emb1(tmp.file("t.emb1")), DataError);
}

TEST_CASE("FRM1: variable-length records round-trip and pool correctly") {
    TempDir tmp;
    Rng rng(66);
    FrameSet frames;
    frames.dim = 3;
    for (std::size_t i = 0; i < 5; ++i) {
        FrameRecord r;
        r.id = i;
        r.label = i % 2 ? kLabelFake : kLabelBonafide;
        r.domain = kDomainE;
        r.matrix.frames = 1 + rng.below(6);
        r.matrix.dim = 3;
        r.matrix.values.resize(r.matrix.frames * 3);
        for (auto& v : r.matrix.values) v = static_cast<float>(rng.normal());
        frames.records.push_back(std::move(r));
    }
    write_frm1(frames, tmp.file("f.frm1"));
    const FrameSet back = read_frm1(tmp.file("f.frm1"));
    REQUIRE(back.records.size() == 5);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(back.records[i].matrix.values == frames.records[i].matrix.values);

    const EmbeddingSet pooled = pool_set(back);
    CHECK(pooled.dim == 3);
    REQUIRE(pooled.records.size() == 5);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(pooled.records[i].vec == pool_frames(frames.records[i].matrix));

    // a zero frame count is rejected at read time
    std::string bytes = slurp(tmp.file("f.frm1"));
    // record 0 frame-count field sits after header(20) + id(8) + label + domain
    bytes[20 + 10] = bytes[20 + 11] = bytes[20 + 12] = bytes[20 + 13] = 0;
    spit(tmp.file("z.frm1"), bytes);
    CHECK_THROWS_AS((void)read_frm1(tmp.file("z.frm1")), DataError);
}

TEST_CASE("CSV manifest ingestion reads raw f32 vector files") {
    TempDir tmp;
    Rng rng(67);
    std::string manifest = "id,label,domain,path\n";
    std::vector<std::vector<float>> vecs;
    for (int i = 0; i < 3; ++i) {
        std::vector<float> v(4);
        for (auto& x : v) x = static_cast<float>(rng.normal());
        vecs.push_back(v);
        const std::string name = "vec" + std::to_string(i) + ".f32";
        std::ofstream os(tmp.file(name), std::ios::binary);
        os.write(reinterpret_cast<const char*>(v.data()), 16);
        manifest += std::to_string(100 + i) + "," + (i % 2 ? "1" : "0") + ",E," + name + "\n";
    }
    spit(tmp.file("manifest.csv"), manifest);
    const EmbeddingSet set = read_manifest_csv(tmp.file("manifest.csv"));
    REQUIRE(set.records.size() == 3);
    CHECK(set.dim == 4);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(set.records[i].id == 100 + i);
        CHECK(set.records[i].vec == vecs[i]);
    }
    // malformed row
    spit(tmp.file("bad.csv"), "id,label,domain,path\n5,1\n");
    CHECK_THROWS_AS((void)read_manifest_csv(tmp.file("bad.csv")), DataError);
}

TEST_CASE("synthetic: label balance within 2% of 50% at 10k records") {
    SynthConfig cfg;
    cfg.d1 = cfg.d2 = 8;
    cfg.train_count = 10000;
    cfg.dev_count = 1;
    cfg.test_count = 1;
    cfg.seed = 42;
    const SynthOutput out = generate_synthetic(cfg);
    double mean = 0.0;
    for (const auto& r : out.domain_e.train.view1.records) mean += r.label;
    mean /= static_cast<double>(out.domain_e.train.view1.records.size());
    CHECK(std::fabs(mean - 0.5) < 0.02);
}

TEST_CASE("synthetic: identical seeds give bitwise-identical files") {
    TempDir tmp;
    SynthConfig cfg;
    cfg.d1 = cfg.d2 = 8;
    cfg.train_count = 50;
    cfg.dev_count = 10;
    cfg.test_count = 10;
    cfg.seed = 4242;
    const SynthOutput a = generate_synthetic(cfg);
    const SynthOutput b = generate_synthetic(cfg);
    write_emb1(a.domain_c.test.view2, tmp.file("a.emb1"));
    write_emb1(b.domain_c.test.view2, tmp.file("b.emb1"));
    CHECK(slurp(tmp.file("a.emb1")) == slurp(tmp.file("b.emb1")));
}

TEST_CASE("synthetic: sigma=0, theta=0 is noiseless and separable per view pair") {
    SynthConfig cfg;
    cfg.d1 = 8;
    cfg.d2 = 12;
    cfg.train_count = 64;
    cfg.dev_count = 8;
    cfg.test_count = 8;
    cfg.sigma = 0.0;
    cfg.theta_deg = 0.0;
    const SynthOutput out = generate_synthetic(cfg);
    const auto& v1 = out.domain_e.train.view1.records;
    const auto& v2 = out.domain_e.train.view2.records;
    for (std::size_t i = 0; i < v1.size(); ++i) {
        const double s1 = dot_f(v1[i].vec, out.u);
        const double s2 = dot_f(v2[i].vec, out.v);
        CHECK(std::fabs(std::fabs(s1) - 1.0) < 1e-5); // exactly +-u
        CHECK(std::fabs(std::fabs(s2) - 1.0) < 1e-5);
        const bool same_sign = (s1 > 0) == (s2 > 0);
        CHECK(v1[i].label == (same_sign ? kLabelFake : kLabelBonafide));
        CHECK(v1[i].label == v2[i].label);
        CHECK(v1[i].id == v2[i].id);
    }
}

TEST_CASE("synthetic: rotation moves domain C away from the domain-E directions") {
    SynthConfig cfg;
    cfg.d1 = cfg.d2 = 16;
    cfg.train_count = 2000;
    cfg.dev_count = 1;
    cfg.test_count = 1;
    cfg.sigma = 0.25;
    cfg.theta_deg = 30.0;
    const SynthOutput out = generate_synthetic(cfg);
    // statistic: mean of (x1.u)(x2.v) conditioned on the label sign; the
    // rotation attenuates it by cos^2(theta) in domain C
    auto stat = [&](const DomainSplits& d) {
        double acc = 0.0;
        const auto& r1 = d.train.view1.records;
        const auto& r2 = d.train.view2.records;
        for (std::size_t i = 0; i < r1.size(); ++i) {
            const double sign = r1[i].label == kLabelFake ? 1.0 : -1.0;
            acc += sign * dot_f(r1[i].vec, out.u) * dot_f(r2[i].vec, out.v);
        }
        return acc / static_cast<double>(r1.size());
    };
    const double stat_e = stat(out.domain_e);
    const double stat_c = stat(out.domain_c);
    CHECK(stat_e > stat_c);
    CHECK(stat_e - stat_c > 0.1);
}

TEST_CASE("batching: 100 records at batch 32 gives sizes 32,32,32,4") {
    Rng rng(68);
    const EmbeddingSet v1 = random_set(4, 100, rng);
    const auto batches = make_batches(v1, nullptr, 32, 9);
    REQUIRE(batches.size() == 4);
    CHECK(batches[0].labels.size() == 32);
    CHECK(batches[1].labels.size() == 32);
    CHECK(batches[2].labels.size() == 32);
    CHECK(batches[3].labels.size() == 4);
}

TEST_CASE("batching: fixed shuffle seed reproduces the order; ids are a partition") {
    Rng rng(69);
    const EmbeddingSet v1 = random_set(4, 57, rng);
    const auto a = make_batches(v1, nullptr, 16, 123);
    const auto b = make_batches(v1, nullptr, 16, 123);
    REQUIRE(a.size() == b.size());
    std::set<std::uint64_t> seen;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].ids == b[i].ids);
        for (std::uint64_t id : a[i].ids) CHECK(seen.insert(id).second);
    }
    std::set<std::uint64_t> want;
    for (const auto& r : v1.records) want.insert(r.id);
    CHECK(seen == want);
}

TEST_CASE("batching: misaligned views are rejected") {
    Rng rng(70);
    const EmbeddingSet v1 = random_set(4, 10, rng);
    EmbeddingSet v2 = v1;
    std::swap(v2.records[3], v2.records[4]);
    CHECK_THROWS_AS((void)make_batches(v1, &v2, 4, 0), DataError);
    EmbeddingSet shorter = v1;
    shorter.records.pop_back();
    CHECK_THROWS_AS((void)make_batches(v1, &shorter, 4, 0), DataError);
}
