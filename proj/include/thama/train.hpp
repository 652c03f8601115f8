// Optimization loop: Adam with bias correction, reduce-LR-on-plateau, early
// stopping on the dev metric, best-epoch parameter restoration, plus the
// cross-domain train/test protocol.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "thama/data.hpp"
#include "thama/metrics.hpp"
#include "thama/model.hpp"

namespace thama::train {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Single-tensor Adam update; `t` is the already-incremented step counter.
void adam_update(std::span<float> param, std::span<const float> grad,
                 std::span<float> m, std::span<float> v, std::int64_t t, double lr,
                 const AdamConfig& cfg = {});

// Per-parameter moment state over a model's named parameters.
class AdamState {
public:
    explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(models::ModelInstance& model, const ad::GradientMap<float>& grads,
              double lr);

    std::int64_t steps() const { return t_; }

private:
    struct Moments {
        std::vector<float> m;
        std::vector<float> v;
    };
    AdamConfig cfg_;
    std::map<std::string, Moments> moments_;
    std::int64_t t_ = 0;
};

struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 100;
    std::size_t early_stop_patience = 10;
    std::size_t lr_patience = 5;
    double lr_factor = 0.5;
    double lr_floor = 1e-6;
    double improve_eps = 1e-5;
    std::string monitor = "loss"; // "loss" or "eer" on the dev split
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochStats {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double dev_loss = 0.0;
    double dev_eer_percent = 0.0;
    double lr = 0.0;
    double wall_time_s = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    double best_dev_loss = 0.0;
    bool stopped_early = false;

    std::string to_json() const;
};

struct TrainResult {
    TrainHistory history;
    models::CheckpointMeta meta;
};

// Minimizes batch-mean BCE with Adam; evaluates the dev split each epoch,
// halves the learning rate after `lr_patience` stale epochs, stops after
// `early_stop_patience`, and restores the best-epoch parameters into `model`.
TrainResult train(models::ModelInstance& model, const data::SetPair& train_pair,
                  const data::SetPair& dev_pair, const TrainConfig& config);

// Trains on domain A, evaluates the same checkpoint in-domain (A's test) and
// out-domain (B's test). Returns {in-domain report, out-domain report}.
std::pair<eval::EvalReport, eval::EvalReport> cross_domain_run(
    const models::ModelSpec& spec, const data::DomainSplits& domain_a,
    const data::DomainSplits& domain_b, const TrainConfig& config);

} // namespace thama::train
