// Embedding ingestion and synthesis: the EMB1/FRM1 binary containers, a CSV
// manifest route, final-hidden-layer average pooling, the seeded two-view
// two-domain synthetic task, and batch iteration for training.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "thama/tensor.hpp"

namespace thama::data {

inline constexpr std::uint8_t kLabelBonafide = 0;
inline constexpr std::uint8_t kLabelFake = 1;
inline constexpr std::uint8_t kLabelUnlabeled = 255;
inline constexpr std::uint8_t kDomainE = 0;
inline constexpr std::uint8_t kDomainC = 1;

std::string domain_name(std::uint8_t domain);
std::uint8_t parse_domain(const std::string& name);

struct EmbeddingRecord {
    std::uint64_t id = 0;
    std::uint8_t label = kLabelUnlabeled; // 0 bonafide, 1 fake, 255 unlabeled
    std::uint8_t domain = kDomainE;
    std::vector<float> vec;
};

struct EmbeddingSet {
    std::uint32_t dim = 0;
    std::vector<EmbeddingRecord> records;

    std::size_t size() const { return records.size(); }
    void validate() const; // homogeneous dim, unique ids, known labels
};

// EMB1: "EMB1", version u32 = 1, dim u32, count u64, then per record
// id u64, label u8, domain u8, dim x f32 -- all little-endian.
void write_emb1(const EmbeddingSet& set, const std::string& path);
EmbeddingSet read_emb1(const std::string& path);

// ---------------------------------------------------------------------------
// Frame-level ingestion: per-utterance hidden states with variable frame
// counts, pooled down to one vector per record.
// ---------------------------------------------------------------------------

struct FrameMatrix {
    std::size_t frames = 0;
    std::size_t dim = 0;
    std::vector<float> values; // row-major [frames x dim]
};

struct FrameRecord {
    std::uint64_t id = 0;
    std::uint8_t label = kLabelUnlabeled;
    std::uint8_t domain = kDomainE;
    FrameMatrix matrix;
};

struct FrameSet {
    std::uint32_t dim = 0;
    std::vector<FrameRecord> records;
};

// FRM1: same header as EMB1, then per record id u64, label u8, domain u8,
// frame-count u32, frames row-major f32.
void write_frm1(const FrameSet& set, const std::string& path);
FrameSet read_frm1(const std::string& path);

// Arithmetic mean over the frame axis.
std::vector<float> pool_frames(const FrameMatrix& frames);

// Record-aligned pooling of a whole frame set.
EmbeddingSet pool_set(const FrameSet& frames);

// CSV manifest route: rows of `id,label,domain,path` where each path names a
// raw little-endian f32 file holding that record's vector. Relative paths
// resolve against the manifest location.
EmbeddingSet read_manifest_csv(const std::string& path);

// ---------------------------------------------------------------------------
// Synthetic two-view bilinear task. Latent signs a, b are uniform and
// independent; the label is 1 iff a*b > 0, so no single view determines it.
// view1 = a*u + noise, view2 = b*v + noise with fixed unit directions and
// isotropic Gaussian noise sigma. Domain C rotates each view by theta inside
// the (direction, orthogonal) plane to mimic a cross-lingual shift.
// ---------------------------------------------------------------------------

struct SynthConfig {
    std::size_t d1 = 64;
    std::size_t d2 = 64;
    std::size_t train_count = 2730;
    std::size_t dev_count = 910;
    std::size_t test_count = 1750;
    double sigma = 0.5;
    double theta_deg = 30.0;
    std::uint64_t seed = 42;

    void validate() const;
};

struct SetPair {
    EmbeddingSet view1;
    EmbeddingSet view2;
};

struct DomainSplits {
    SetPair train;
    SetPair dev;
    SetPair test;
};

struct SynthOutput {
    DomainSplits domain_e;
    DomainSplits domain_c;
    // Generating unit directions for domain E (diagnostics and tests).
    std::vector<float> u;
    std::vector<float> v;
};

SynthOutput generate_synthetic(const SynthConfig& config);

// ---------------------------------------------------------------------------
// Batch iteration: a seeded permutation per epoch, every record exactly once,
// final short batch emitted. Views must be aligned record-by-record on ids.
// ---------------------------------------------------------------------------

struct Batch {
    Tensor x1;                    // [B x d1]
    std::optional<Tensor> x2;     // [B x d2] for two-view sets
    std::vector<float> labels;    // [B]
    std::vector<std::uint64_t> ids;
};

std::vector<Batch> make_batches(const EmbeddingSet& view1, const EmbeddingSet* view2,
                                std::size_t batch_size, std::uint64_t shuffle_seed,
                                bool shuffle = true);

} // namespace thama::data
