#include "thama/train.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "thama/nn.hpp"
#include "thama/rng.hpp"

namespace thama::train {

using json = nlohmann::json;

void adam_update(std::span<float> param, std::span<const float> grad,
                 std::span<float> m, std::span<float> v, std::int64_t t, double lr,
                 const AdamConfig& cfg) {
    if (param.size() != grad.size() || param.size() != m.size() ||
        param.size() != v.size())
        throw ShapeError("adam: parameter, gradient, and moment sizes disagree");
    if (t < 1) throw ConfigError("adam: step counter must be >= 1");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        m[i] = static_cast<float>(mi);
        v[i] = static_cast<float>(vi);
        const double m_hat = mi / bc1;
        const double v_hat = vi / bc2;
        param[i] = static_cast<float>(param[i] - lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
}

void AdamState::step(models::ModelInstance& model, const ad::GradientMap<float>& grads,
                     double lr) {
    ++t_;
    for (const auto& [name, grad] : grads) {
        const int pid = model.graph->find_param(name);
        if (pid < 0) throw ShapeError("adam: gradient for unknown parameter '" + name + "'");
        auto param = model.exec->param_data(pid);
        Moments& mom = moments_[name];
        if (mom.m.empty()) {
            mom.m.assign(param.size(), 0.0f);
            mom.v.assign(param.size(), 0.0f);
        }
        adam_update(param, grad.values(), mom.m, mom.v, t_, lr, cfg_);
    }
}

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("train: learning rate must be positive");
    if (batch_size == 0) throw ConfigError("train: batch size must be positive");
    if (max_epochs == 0) throw ConfigError("train: epochs must be positive");
    if (early_stop_patience == 0 || lr_patience == 0)
        throw ConfigError("train: patience values must be positive");
    if (early_stop_patience >= max_epochs)
        throw ConfigError("train: early-stop patience must be smaller than max epochs");
    if (lr_factor <= 0.0 || lr_factor >= 1.0)
        throw ConfigError("train: LR factor must lie in (0, 1)");
    if (improve_eps < 0.0) throw ConfigError("train: improvement threshold must be >= 0");
    if (monitor != "loss" && monitor != "eer")
        throw ConfigError("train: monitor must be 'loss' or 'eer'");
}

std::string TrainHistory::to_json() const {
    json epochs_json = json::array();
    json wall = json::array();
    for (const EpochStats& e : epochs) {
        epochs_json.push_back({{"epoch", e.epoch},
                               {"train_loss", e.train_loss},
                               {"dev_loss", e.dev_loss},
                               {"dev_eer_percent", e.dev_eer_percent},
                               {"lr", e.lr}});
        wall.push_back(e.wall_time_s);
    }
    json j;
    j["epochs"] = std::move(epochs_json);
    j["wall_time_s"] = std::move(wall);
    j["best_epoch"] = best_epoch;
    j["best_dev_loss"] = best_dev_loss;
    j["stopped_early"] = stopped_early;
    return j.dump(2);
}

namespace {

struct DevScores {
    std::vector<float> probs;
    std::vector<float> labels;
};

DevScores score_split(models::ModelInstance& model, const data::SetPair& pair) {
    const bool fusion = models::is_fusion(model.spec.kind);
    DevScores out;
    const auto batches = data::make_batches(pair.view1, fusion ? &pair.view2 : nullptr,
                                            256, 0, /*shuffle=*/false);
    for (const data::Batch& b : batches) {
        const std::vector<float> probs =
            models::predict_batch(model, b.x1, b.x2 ? &*b.x2 : nullptr);
        out.probs.insert(out.probs.end(), probs.begin(), probs.end());
        out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    }
    return out;
}

void check_dims(const models::ModelSpec& spec, const data::SetPair& pair,
                const char* split) {
    if (pair.view1.dim != spec.d1)
        throw ShapeError(std::string("train: ") + split + " view 1 dim " +
                         std::to_string(pair.view1.dim) + " does not match model d1 " +
                         std::to_string(spec.d1));
    if (models::is_fusion(spec.kind) && pair.view2.dim != spec.d2)
        throw ShapeError(std::string("train: ") + split + " view 2 dim " +
                         std::to_string(pair.view2.dim) + " does not match model d2 " +
                         std::to_string(spec.d2));
}

} // namespace

TrainResult train(models::ModelInstance& model, const data::SetPair& train_pair,
                  const data::SetPair& dev_pair, const TrainConfig& config) {
    config.validate();
    check_dims(model.spec, train_pair, "train");
    check_dims(model.spec, dev_pair, "dev");
    const bool fusion = models::is_fusion(model.spec.kind);

    AdamState adam;
    Rng dropout_rng(derive_seed(config.seed, 0xD80));
    double lr = config.lr;
    double best_metric = std::numeric_limits<double>::infinity();
    std::size_t stale = 0, lr_wait = 0;
    ad::GradientMap<float> best_params;

    TrainResult result;
    TrainHistory& history = result.history;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto batches =
            data::make_batches(train_pair.view1, fusion ? &train_pair.view2 : nullptr,
                               config.batch_size, derive_seed(config.seed, epoch));
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const data::Batch& b = batches[bi];
            float loss = 0.0f;
            try {
                model.exec->bind("x1", b.x1);
                if (fusion) model.exec->bind("x2", *b.x2);
                model.exec->bind("y", Tensor::vec(std::vector<float>(b.labels)));
                model.exec->forward({model.io.loss}, ad::Mode::Train, &dropout_rng);
                loss = model.exec->scalar(model.io.loss);
                const auto grads = model.exec->backward(model.io.loss);
                adam.step(model, grads, lr);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(bi) + ")");
            }
            loss_sum += static_cast<double>(loss) * static_cast<double>(b.labels.size());
            seen += b.labels.size();
        }

        DevScores dev;
        try {
            dev = score_split(model, dev_pair);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                               ", dev evaluation)");
        }
        const double dev_loss =
            nn::bce(std::span<const float>(dev.probs), std::span<const float>(dev.labels));
        std::vector<double> scores(dev.probs.begin(), dev.probs.end());
        std::vector<int> labels(dev.labels.size());
        for (std::size_t i = 0; i < dev.labels.size(); ++i)
            labels[i] = static_cast<int>(dev.labels[i]);
        const double dev_eer = eval::compute_eer(scores, labels).eer_percent;

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(seen);
        stats.dev_loss = dev_loss;
        stats.dev_eer_percent = dev_eer;
        stats.lr = lr;
        stats.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.epochs.push_back(stats);

        const double monitored = config.monitor == "eer" ? dev_eer : dev_loss;
        if (monitored < best_metric - config.improve_eps) {
            best_metric = monitored;
            history.best_epoch = epoch;
            history.best_dev_loss = dev_loss;
            stale = 0;
            lr_wait = 0;
            best_params.clear();
            for (int pid : model.graph->params())
                best_params.emplace(model.graph->node(pid).name,
                                    model.exec->param(model.graph->node(pid).name));
        } else {
            ++stale;
            ++lr_wait;
            if (stale >= config.early_stop_patience) {
                history.stopped_early = true;
                break;
            }
            if (lr_wait >= config.lr_patience) {
                // the floor stops the decay but must never raise the rate
                lr = std::max(lr * config.lr_factor, std::min(lr, config.lr_floor));
                lr_wait = 0;
            }
        }
    }

    // restore best
    for (const auto& [name, value] : best_params) model.exec->set_param(name, value);

    result.meta.best_dev_loss = history.best_dev_loss;
    result.meta.epoch = static_cast<std::int64_t>(history.best_epoch);
    return result;
}

std::pair<eval::EvalReport, eval::EvalReport> cross_domain_run(
    const models::ModelSpec& spec, const data::DomainSplits& domain_a,
    const data::DomainSplits& domain_b, const TrainConfig& config) {
    if (domain_a.train.view1.dim != domain_b.test.view1.dim ||
        domain_a.train.view2.dim != domain_b.test.view2.dim)
        throw ShapeError("cross-domain: domains disagree on embedding dims");
    models::ModelInstance model = models::build_model(spec);
    train(model, domain_a.train, domain_a.dev, config);
    const std::string train_domain =
        domain_a.train.view1.records.empty()
            ? std::string{}
            : data::domain_name(domain_a.train.view1.records.front().domain);
    eval::EvalReport in_domain = eval::evaluate(model, domain_a.test, train_domain);
    eval::EvalReport out_domain = eval::evaluate(model, domain_b.test, train_domain);
    return {std::move(in_domain), std::move(out_domain)};
}

} // namespace thama::train
