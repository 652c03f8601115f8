#include "thama/runconfig.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace thama::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

void expect_object(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
}

void reject_unknown(const json& j, const std::string& where,
                    std::initializer_list<const char*> allowed) {
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (key == a) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("config: unknown key '" + key + "' in '" + where + "'");
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for '" + std::string(key) + "': " + e.what());
    }
}

ModelCfg parse_model(const json& j) {
    expect_object(j, "model");
    reject_unknown(j, "model", {"kind", "d_f", "core", "ranks", "dropout"});
    if (!j.contains("kind")) throw ConfigError("config: 'model.kind' is required");
    ModelCfg m;
    m.kind = models::parse_model_kind(j.at("kind").get<std::string>());
    m.d_f = get_or<std::size_t>(j, "d_f", m.d_f);
    if (j.contains("core")) m.core = models::parse_core_kind(j.at("core").get<std::string>());
    m.ranks = get_or<std::array<std::size_t, 3>>(j, "ranks", m.ranks);
    m.dropout = get_or<float>(j, "dropout", m.dropout);
    return m;
}

SplitFiles parse_split_files(const json& j, const std::string& where) {
    expect_object(j, where);
    reject_unknown(j, where, {"train", "dev", "test"});
    SplitFiles out;
    for (const char* split : {"train", "dev", "test"}) {
        if (!j.contains(split))
            throw ConfigError("config: '" + where + "' is missing the '" + split +
                              "' split");
        const json& paths = j.at(split);
        if (!paths.is_array() || paths.empty() || paths.size() > 2)
            throw ConfigError("config: '" + where + "." + split +
                              "' must list one or two EMB1 paths");
        std::vector<std::string>& dst = split == std::string("train") ? out.train
                                        : split == std::string("dev") ? out.dev
                                                                      : out.test;
        for (const json& p : paths) dst.push_back(p.get<std::string>());
    }
    return out;
}

DataCfg parse_data(const json& j) {
    expect_object(j, "data");
    reject_unknown(j, "data", {"synth", "files", "train_domain"});
    DataCfg d;
    if (j.contains("synth") == j.contains("files"))
        throw ConfigError("config: 'data' must hold exactly one of 'synth' or 'files'");
    if (j.contains("synth")) {
        const json& s = j.at("synth");
        expect_object(s, "data.synth");
        reject_unknown(s, "data.synth",
                       {"d1", "d2", "train", "dev", "test", "sigma", "theta_deg", "seed"});
        data::SynthConfig cfg;
        cfg.d1 = get_or<std::size_t>(s, "d1", cfg.d1);
        cfg.d2 = get_or<std::size_t>(s, "d2", cfg.d2);
        cfg.train_count = get_or<std::size_t>(s, "train", cfg.train_count);
        cfg.dev_count = get_or<std::size_t>(s, "dev", cfg.dev_count);
        cfg.test_count = get_or<std::size_t>(s, "test", cfg.test_count);
        cfg.sigma = get_or<double>(s, "sigma", cfg.sigma);
        cfg.theta_deg = get_or<double>(s, "theta_deg", cfg.theta_deg);
        cfg.seed = get_or<std::uint64_t>(s, "seed", cfg.seed);
        cfg.validate();
        d.synth = cfg;
    } else {
        const json& f = j.at("files");
        expect_object(f, "data.files");
        reject_unknown(f, "data.files", {"E", "C"});
        std::map<std::uint8_t, SplitFiles> files;
        for (const auto& [domain_key, value] : f.items())
            files[data::parse_domain(domain_key)] =
                parse_split_files(value, "data.files." + domain_key);
        if (files.empty()) throw ConfigError("config: 'data.files' lists no domains");
        d.files = std::move(files);
    }
    if (j.contains("train_domain"))
        d.train_domain = data::parse_domain(j.at("train_domain").get<std::string>());
    return d;
}

train::TrainConfig parse_train(const json& j) {
    expect_object(j, "train");
    reject_unknown(j, "train",
                   {"lr", "batch", "epochs", "early_stop_patience", "lr_patience",
                    "lr_factor", "lr_floor", "improve_eps", "monitor", "seed"});
    train::TrainConfig t;
    t.lr = get_or<double>(j, "lr", t.lr);
    t.batch_size = get_or<std::size_t>(j, "batch", t.batch_size);
    t.max_epochs = get_or<std::size_t>(j, "epochs", t.max_epochs);
    t.early_stop_patience =
        get_or<std::size_t>(j, "early_stop_patience", t.early_stop_patience);
    t.lr_patience = get_or<std::size_t>(j, "lr_patience", t.lr_patience);
    t.lr_factor = get_or<double>(j, "lr_factor", t.lr_factor);
    t.lr_floor = get_or<double>(j, "lr_floor", t.lr_floor);
    t.improve_eps = get_or<double>(j, "improve_eps", t.improve_eps);
    t.monitor = get_or<std::string>(j, "monitor", t.monitor);
    t.seed = get_or<std::uint64_t>(j, "seed", t.seed);
    t.validate();
    return t;
}

} // namespace

models::ModelSpec RunConfig::resolve_spec(std::size_t d1, std::size_t d2) const {
    models::ModelSpec spec;
    spec.kind = model.kind;
    spec.d1 = d1;
    spec.d2 = models::is_fusion(model.kind) ? d2 : 0;
    spec.d_f = model.d_f;
    spec.core = model.core;
    spec.ranks = model.ranks;
    spec.dropout = model.dropout;
    spec.seed = train.seed;
    spec.validate();
    return spec;
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    expect_object(j, "config");
    reject_unknown(j, "config", {"model", "data", "train", "output_dir"});
    if (!j.contains("model") || !j.contains("data"))
        throw ConfigError("config: 'model' and 'data' sections are required");
    RunConfig cfg;
    cfg.model = parse_model(j.at("model"));
    cfg.data = parse_data(j.at("data"));
    if (j.contains("train")) cfg.train = parse_train(j.at("train"));
    cfg.output_dir = get_or<std::string>(j, "output_dir", std::string{});
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_run_config(buf.str());
}

namespace {

std::string resolve_path(const std::string& base_dir, const std::string& p) {
    const fs::path path(p);
    if (path.is_absolute() || base_dir.empty()) return p;
    return (fs::path(base_dir) / path).string();
}

bool is_csv(const std::string& path) {
    return fs::path(path).extension() == ".csv";
}

data::EmbeddingSet load_set(const std::string& path) {
    return is_csv(path) ? data::read_manifest_csv(path) : data::read_emb1(path);
}

data::SetPair load_pair(const std::vector<std::string>& paths,
                        const std::string& base_dir, bool two_views,
                        const std::string& what) {
    if (two_views && paths.size() != 2)
        throw ConfigError("config: " + what + " needs two view paths for a fusion model");
    if (!two_views && paths.size() != 1)
        throw ConfigError("config: " + what + " needs exactly one view path for a "
                          "single-view model");
    data::SetPair pair;
    pair.view1 = load_set(resolve_path(base_dir, paths[0]));
    if (two_views) pair.view2 = load_set(resolve_path(base_dir, paths[1]));
    return pair;
}

} // namespace

data::DomainSplits resolve_domain(const DataCfg& cfg, std::uint8_t domain,
                                  const std::string& base_dir, bool two_views) {
    if (cfg.synth) {
        const data::SynthOutput out = data::generate_synthetic(*cfg.synth);
        return domain == data::kDomainC ? out.domain_c : out.domain_e;
    }
    const auto it = cfg.files->find(domain);
    if (it == cfg.files->end())
        throw ConfigError("config: no files listed for domain " +
                          data::domain_name(domain));
    data::DomainSplits splits;
    const std::string tag = "data.files." + data::domain_name(domain);
    splits.train = load_pair(it->second.train, base_dir, two_views, tag + ".train");
    splits.dev = load_pair(it->second.dev, base_dir, two_views, tag + ".dev");
    splits.test = load_pair(it->second.test, base_dir, two_views, tag + ".test");
    return splits;
}

std::pair<std::size_t, std::size_t> resolve_dims(const DataCfg& cfg,
                                                 const std::string& base_dir,
                                                 bool two_views) {
    if (cfg.synth) return {cfg.synth->d1, cfg.synth->d2};
    const auto it = cfg.files->find(cfg.train_domain);
    if (it == cfg.files->end())
        throw ConfigError("config: no files listed for train domain " +
                          data::domain_name(cfg.train_domain));
    if (it->second.train.empty())
        throw ConfigError("config: train split lists no paths");
    const data::EmbeddingSet v1 = load_set(resolve_path(base_dir, it->second.train[0]));
    std::size_t d2 = 0;
    if (two_views) {
        if (it->second.train.size() < 2)
            throw ConfigError("config: fusion model needs two view paths per split");
        d2 = load_set(resolve_path(base_dir, it->second.train[1])).dim;
    }
    return {v1.dim, d2};
}

} // namespace thama::cli
