#include "thama/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "thama/bytes.hpp"
#include "thama/rng.hpp"

namespace thama::data {

namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kFormatVersion = 1;

void write_header(std::ostream& os, const char magic[4], std::uint32_t dim,
                  std::uint64_t count) {
    os.write(magic, 4);
    bytes::put_u32(os, kFormatVersion);
    bytes::put_u32(os, dim);
    bytes::put_u64(os, count);
}

struct Header {
    std::uint32_t dim = 0;
    std::uint64_t count = 0;
};

Header read_header(std::istream& is, const char magic[4], const std::string& path) {
    char m[4];
    is.read(m, 4);
    if (is.gcount() != 4 || std::memcmp(m, magic, 4) != 0)
        throw DataError("'" + path + "': bad magic, expected " +
                        std::string(magic, 4));
    const std::uint32_t version = bytes::get_u32(is, "container version");
    if (version != kFormatVersion)
        throw DataError("'" + path + "': unsupported version " + std::to_string(version));
    Header h;
    h.dim = bytes::get_u32(is, "container dim");
    if (h.dim == 0) throw DataError("'" + path + "': dim must be positive");
    h.count = bytes::get_u64(is, "container count");
    return h;
}

void check_label(std::uint8_t label, std::size_t index, const std::string& path) {
    if (label != kLabelBonafide && label != kLabelFake && label != kLabelUnlabeled)
        throw DataError("'" + path + "': record " + std::to_string(index) +
                        " has invalid label " + std::to_string(label));
}

} // namespace

std::string domain_name(std::uint8_t domain) {
    switch (domain) {
        case kDomainE: return "E";
        case kDomainC: return "C";
        default: return std::to_string(domain);
    }
}

std::uint8_t parse_domain(const std::string& name) {
    if (name == "E" || name == "0") return kDomainE;
    if (name == "C" || name == "1") return kDomainC;
    throw DataError("unknown domain tag '" + name + "'");
}

void EmbeddingSet::validate() const {
    std::set<std::uint64_t> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const EmbeddingRecord& r = records[i];
        if (r.vec.size() != dim)
            throw DataError("embedding set: record " + std::to_string(i) +
                            " has dim " + std::to_string(r.vec.size()) + ", set dim is " +
                            std::to_string(dim));
        if (!seen.insert(r.id).second)
            throw DataError("embedding set: duplicate id " + std::to_string(r.id));
        check_label(r.label, i, "embedding set");
    }
}

void write_emb1(const EmbeddingSet& set, const std::string& path) {
    if (set.dim == 0) throw DataError("EMB1: dim must be positive");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("EMB1: cannot open '" + path + "' for writing");
    write_header(os, "EMB1", set.dim, set.records.size());
    for (const EmbeddingRecord& r : set.records) {
        if (r.vec.size() != set.dim)
            throw DataError("EMB1: record dim mismatch while writing '" + path + "'");
        bytes::put_u64(os, r.id);
        bytes::put_u8(os, r.label);
        bytes::put_u8(os, r.domain);
        bytes::put_f32_block(os, r.vec.data(), r.vec.size());
    }
    if (!os) throw DataError("EMB1: short write to '" + path + "'");
}

EmbeddingSet read_emb1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("EMB1: cannot open '" + path + "'");
    const Header h = read_header(is, "EMB1", path);
    EmbeddingSet set;
    set.dim = h.dim;
    set.records.resize(h.count);
    for (std::uint64_t i = 0; i < h.count; ++i) {
        EmbeddingRecord& r = set.records[i];
        try {
            r.id = bytes::get_u64(is, "record id");
            r.label = bytes::get_u8(is, "record label");
            r.domain = bytes::get_u8(is, "record domain");
            r.vec.resize(h.dim);
            bytes::get_f32_block(is, r.vec.data(), h.dim, "record vector");
        } catch (const DataError& e) {
            throw DataError("'" + path + "': record " + std::to_string(i) + ": " +
                            e.what());
        }
        check_label(r.label, i, path);
    }
    if (is.peek() != EOF)
        throw DataError("'" + path + "': trailing bytes after " +
                        std::to_string(h.count) + " records");
    set.validate();
    return set;
}

void write_frm1(const FrameSet& set, const std::string& path) {
    if (set.dim == 0) throw DataError("FRM1: dim must be positive");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("FRM1: cannot open '" + path + "' for writing");
    write_header(os, "FRM1", set.dim, set.records.size());
    for (const FrameRecord& r : set.records) {
        if (r.matrix.dim != set.dim || r.matrix.values.size() != r.matrix.frames * set.dim)
            throw DataError("FRM1: malformed frame matrix while writing '" + path + "'");
        bytes::put_u64(os, r.id);
        bytes::put_u8(os, r.label);
        bytes::put_u8(os, r.domain);
        bytes::put_u32(os, static_cast<std::uint32_t>(r.matrix.frames));
        bytes::put_f32_block(os, r.matrix.values.data(), r.matrix.values.size());
    }
    if (!os) throw DataError("FRM1: short write to '" + path + "'");
}

FrameSet read_frm1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("FRM1: cannot open '" + path + "'");
    const Header h = read_header(is, "FRM1", path);
    FrameSet set;
    set.dim = h.dim;
    set.records.resize(h.count);
    for (std::uint64_t i = 0; i < h.count; ++i) {
        FrameRecord& r = set.records[i];
        try {
            r.id = bytes::get_u64(is, "record id");
            r.label = bytes::get_u8(is, "record label");
            r.domain = bytes::get_u8(is, "record domain");
            const std::uint32_t frames = bytes::get_u32(is, "record frame count");
            if (frames == 0)
                throw DataError("frame count must be positive (cannot pool zero frames)");
            r.matrix.frames = frames;
            r.matrix.dim = h.dim;
            r.matrix.values.resize(static_cast<std::size_t>(frames) * h.dim);
            bytes::get_f32_block(is, r.matrix.values.data(), r.matrix.values.size(),
                                 "record frames");
        } catch (const DataError& e) {
            throw DataError("'" + path + "': record " + std::to_string(i) + ": " +
                            e.what());
        }
        check_label(r.label, i, path);
    }
    if (is.peek() != EOF)
        throw DataError("'" + path + "': trailing bytes after " +
                        std::to_string(h.count) + " records");
    return set;
}

std::vector<float> pool_frames(const FrameMatrix& frames) {
    if (frames.frames == 0 || frames.dim == 0)
        throw DataError("pool_frames: empty frame matrix");
    if (frames.values.size() != frames.frames * frames.dim)
        throw DataError("pool_frames: value count disagrees with frame geometry");
    std::vector<double> acc(frames.dim, 0.0);
    for (std::size_t f = 0; f < frames.frames; ++f)
        for (std::size_t d = 0; d < frames.dim; ++d)
            acc[d] += frames.values[f * frames.dim + d];
    std::vector<float> out(frames.dim);
    for (std::size_t d = 0; d < frames.dim; ++d)
        out[d] = static_cast<float>(acc[d] / static_cast<double>(frames.frames));
    return out;
}

EmbeddingSet pool_set(const FrameSet& frames) {
    EmbeddingSet out;
    out.dim = frames.dim;
    out.records.reserve(frames.records.size());
    for (const FrameRecord& r : frames.records) {
        EmbeddingRecord e;
        e.id = r.id;
        e.label = r.label;
        e.domain = r.domain;
        e.vec = pool_frames(r.matrix);
        out.records.push_back(std::move(e));
    }
    return out;
}

EmbeddingSet read_manifest_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("manifest: cannot open '" + path + "'");
    const fs::path base = fs::path(path).parent_path();
    EmbeddingSet set;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        if (line_no == 1 && line.rfind("id,", 0) == 0) continue; // header row
        std::istringstream row(line);
        std::string id_s, label_s, domain_s, rec_path;
        if (!std::getline(row, id_s, ',') || !std::getline(row, label_s, ',') ||
            !std::getline(row, domain_s, ',') || !std::getline(row, rec_path))
            throw DataError("manifest '" + path + "': malformed row " +
                            std::to_string(line_no));
        EmbeddingRecord r;
        try {
            r.id = std::stoull(id_s);
            r.label = static_cast<std::uint8_t>(std::stoul(label_s));
        } catch (const std::exception&) {
            throw DataError("manifest '" + path + "': bad id/label on row " +
                            std::to_string(line_no));
        }
        r.domain = parse_domain(domain_s);
        check_label(r.label, line_no, path);
        const fs::path vec_path =
            fs::path(rec_path).is_absolute() ? fs::path(rec_path) : base / rec_path;
        std::ifstream vis(vec_path, std::ios::binary);
        if (!vis)
            throw DataError("manifest '" + path + "': cannot open vector file '" +
                            vec_path.string() + "'");
        const auto size = fs::file_size(vec_path);
        if (size == 0 || size % 4 != 0)
            throw DataError("manifest '" + path + "': vector file '" + vec_path.string() +
                            "' is not a whole number of f32 values");
        r.vec.resize(size / 4);
        bytes::get_f32_block(vis, r.vec.data(), r.vec.size(), "manifest vector");
        if (set.records.empty()) {
            set.dim = static_cast<std::uint32_t>(r.vec.size());
        } else if (r.vec.size() != set.dim) {
            throw DataError("manifest '" + path + "': row " + std::to_string(line_no) +
                            " has dim " + std::to_string(r.vec.size()) +
                            ", earlier rows have " + std::to_string(set.dim));
        }
        set.records.push_back(std::move(r));
    }
    if (set.records.empty()) throw DataError("manifest '" + path + "': no records");
    set.validate();
    return set;
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
    if (d1 < 2 || d2 < 2)
        throw ConfigError("synth: view dims must be at least 2 (rotation plane)");
    if (train_count == 0 || dev_count == 0 || test_count == 0)
        throw ConfigError("synth: split counts must be positive");
    if (sigma < 0.0) throw ConfigError("synth: sigma must be nonnegative");
}

namespace {

// Smooth slowly-varying unit direction (a low-frequency sinusoid with a
// seed-chosen phase). Conv features track locally smooth structure and every
// pooled position carries signal, so the latent factor stays visible to the
// downstream architecture; any unit vector gives the same task geometry and
// Bayes rate.
std::vector<double> unit_direction(std::size_t d, Rng& rng) {
    std::vector<double> v(d, 0.0);
    const double cycles = 2.0;
    const double phase = rng.uniform(0.0, 6.283185307179586);
    double norm2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        v[i] = std::sin(6.283185307179586 * cycles * static_cast<double>(i) /
                            static_cast<double>(d) +
                        phase);
        norm2 += v[i] * v[i];
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    return v;
}

std::vector<double> orthogonal_unit(const std::vector<double>& u, Rng& rng) {
    const std::size_t d = u.size();
    std::vector<double> w(d);
    double norm2 = 0.0;
    do {
        for (double& x : w) x = rng.normal();
        double proj = 0.0;
        for (std::size_t i = 0; i < d; ++i) proj += w[i] * u[i];
        norm2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            w[i] -= proj * u[i];
            norm2 += w[i] * w[i];
        }
    } while (norm2 < 1e-12);
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : w) x *= inv;
    return w;
}

// In-plane rotation by theta within span(u, u_perp).
void rotate_in_plane(std::vector<float>& x, const std::vector<double>& u,
                     const std::vector<double>& u_perp, double theta) {
    double a1 = 0.0, a2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        a1 += x[i] * u[i];
        a2 += x[i] * u_perp[i];
    }
    const double c = std::cos(theta), s = std::sin(theta);
    const double d1 = (a1 * c - a2 * s) - a1;
    const double d2 = (a1 * s + a2 * c) - a2;
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = static_cast<float>(x[i] + d1 * u[i] + d2 * u_perp[i]);
}

struct Directions {
    std::vector<double> u, u_perp, v, v_perp;
};

constexpr double kPi = 3.14159265358979323846;

SetPair make_split(const SynthConfig& cfg, const Directions& dir, std::uint8_t domain,
                   std::size_t count, std::uint64_t id_base, Rng& rng) {
    const double theta = domain == kDomainC ? cfg.theta_deg * kPi / 180.0 : 0.0;
    SetPair pair;
    pair.view1.dim = static_cast<std::uint32_t>(cfg.d1);
    pair.view2.dim = static_cast<std::uint32_t>(cfg.d2);
    pair.view1.records.reserve(count);
    pair.view2.records.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double a = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const double b = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const std::uint8_t label = a * b > 0.0 ? kLabelFake : kLabelBonafide;

        std::vector<float> x1(cfg.d1), x2(cfg.d2);
        for (std::size_t k = 0; k < cfg.d1; ++k)
            x1[k] = static_cast<float>(a * dir.u[k] + cfg.sigma * rng.normal());
        for (std::size_t k = 0; k < cfg.d2; ++k)
            x2[k] = static_cast<float>(b * dir.v[k] + cfg.sigma * rng.normal());
        if (theta != 0.0) {
            rotate_in_plane(x1, dir.u, dir.u_perp, theta);
            rotate_in_plane(x2, dir.v, dir.v_perp, theta);
        }

        const std::uint64_t id = id_base + i;
        pair.view1.records.push_back({id, label, domain, std::move(x1)});
        pair.view2.records.push_back({id, label, domain, std::move(x2)});
    }
    return pair;
}

} // namespace

SynthOutput generate_synthetic(const SynthConfig& config) {
    config.validate();
    Rng dir_rng(derive_seed(config.seed, 0x0D1));
    Directions dir;
    dir.u = unit_direction(config.d1, dir_rng);
    dir.u_perp = orthogonal_unit(dir.u, dir_rng);
    dir.v = unit_direction(config.d2, dir_rng);
    dir.v_perp = orthogonal_unit(dir.v, dir_rng);

    SynthOutput out;
    out.u.assign(dir.u.begin(), dir.u.end());
    out.v.assign(dir.v.begin(), dir.v.end());

    const std::array<std::size_t, 3> counts{config.train_count, config.dev_count,
                                            config.test_count};
    for (std::uint8_t domain : {kDomainE, kDomainC}) {
        DomainSplits& splits = domain == kDomainE ? out.domain_e : out.domain_c;
        for (std::size_t split = 0; split < 3; ++split) {
            const std::uint64_t tag = domain * 3 + split;
            Rng rng(derive_seed(config.seed, 0x5EED00 + tag));
            const std::uint64_t id_base = (tag + 1) << 32;
            SetPair pair = make_split(config, dir, domain, counts[split], id_base, rng);
            (split == 0 ? splits.train : split == 1 ? splits.dev : splits.test) =
                std::move(pair);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch iteration
// ---------------------------------------------------------------------------

std::vector<Batch> make_batches(const EmbeddingSet& view1, const EmbeddingSet* view2,
                                std::size_t batch_size, std::uint64_t shuffle_seed,
                                bool shuffle) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (view1.records.empty()) throw DataError("batching: empty record set");
    const std::size_t n = view1.records.size();
    if (view2 != nullptr) {
        if (view2->records.size() != n)
            throw DataError("batching: views hold " + std::to_string(n) + " and " +
                            std::to_string(view2->records.size()) + " records");
        for (std::size_t i = 0; i < n; ++i) {
            if (view1.records[i].id != view2->records[i].id)
                throw DataError("batching: views misaligned at position " +
                                std::to_string(i) + " (ids " +
                                std::to_string(view1.records[i].id) + " vs " +
                                std::to_string(view2->records[i].id) + ")");
        }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (shuffle) {
        Rng rng(shuffle_seed);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
            std::swap(order[i], order[j]);
        }
    }

    std::vector<Batch> batches;
    batches.reserve((n + batch_size - 1) / batch_size);
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t b = std::min(batch_size, n - start);
        Batch batch;
        batch.x1 = Tensor({b, view1.dim});
        if (view2 != nullptr) batch.x2 = Tensor({b, view2->dim});
        batch.labels.resize(b);
        batch.ids.resize(b);
        for (std::size_t r = 0; r < b; ++r) {
            const std::size_t src = order[start + r];
            const EmbeddingRecord& r1 = view1.records[src];
            std::copy(r1.vec.begin(), r1.vec.end(), batch.x1.data() + r * view1.dim);
            if (view2 != nullptr) {
                const EmbeddingRecord& r2 = view2->records[src];
                std::copy(r2.vec.begin(), r2.vec.end(),
                          batch.x2->data() + r * view2->dim);
            }
            batch.labels[r] = static_cast<float>(r1.label);
            batch.ids[r] = r1.id;
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

} // namespace thama::data
