// Run configuration: one self-describing JSON document per run. The schema is
// validated strictly (unknown keys are rejected) before any work starts, so an
// invalid config never produces partial artifacts.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "thama/data.hpp"
#include "thama/model.hpp"
#include "thama/train.hpp"

namespace thama::cli {

struct ModelCfg {
    models::ModelKind kind = models::ModelKind::Thama;
    std::size_t d_f = 96;
    models::CoreKind core = models::CoreKind::Full;
    std::array<std::size_t, 3> ranks{32, 32, 32};
    float dropout = 0.3f;
};

struct SplitFiles {
    std::vector<std::string> train; // one path per view
    std::vector<std::string> dev;
    std::vector<std::string> test;
};

struct DataCfg {
    std::optional<data::SynthConfig> synth;
    std::optional<std::map<std::uint8_t, SplitFiles>> files;
    std::uint8_t train_domain = data::kDomainE;
};

struct RunConfig {
    ModelCfg model;
    DataCfg data;
    train::TrainConfig train;
    std::string output_dir;

    // Model spec with dims resolved from the data block.
    models::ModelSpec resolve_spec(std::size_t d1, std::size_t d2) const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Loads or generates the splits of one domain, resolving paths relative to
// `base_dir` (the config file location). Synthetic data generates both
// domains; `domain` picks one.
data::DomainSplits resolve_domain(const DataCfg& cfg, std::uint8_t domain,
                                  const std::string& base_dir, bool two_views);

// Per-view dims the data block will produce (reads file headers if needed).
std::pair<std::size_t, std::size_t> resolve_dims(const DataCfg& cfg,
                                                 const std::string& base_dir,
                                                 bool two_views);

} // namespace thama::cli
