// Command-line surface: synth, pool, train, eval, xdomain, params, gradcheck.
// One command per process; every run is reproducible from its config + seed.
// Exit codes: 0 success, 2 config error, 3 data/format error, 4 numerical
// failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "thama/data.hpp"
#include "thama/gradcheck.hpp"
#include "thama/metrics.hpp"
#include "thama/model.hpp"
#include "thama/runconfig.hpp"
#include "thama/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace thama;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> out_override;
};

struct LoadedConfig {
    cli::RunConfig cfg;
    std::string base_dir;
    std::string raw_text;
};

LoadedConfig load_config(const CommonArgs& args) {
    std::ifstream is(args.config_path);
    if (!is) throw ConfigError("config: cannot open '" + args.config_path + "'");
    std::string text((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
    LoadedConfig out;
    out.cfg = cli::parse_run_config(text);
    out.raw_text = std::move(text);
    out.base_dir = fs::path(args.config_path).parent_path().string();
    if (args.seed_override) {
        out.cfg.train.seed = *args.seed_override;
        if (out.cfg.data.synth) out.cfg.data.synth->seed = *args.seed_override;
    }
    if (args.out_override) out.cfg.output_dir = *args.out_override;
    return out;
}

std::string require_output_dir(const LoadedConfig& lc) {
    if (lc.cfg.output_dir.empty())
        throw ConfigError("config: 'output_dir' is required for this command");
    const fs::path p(lc.cfg.output_dir);
    return p.is_absolute() || lc.base_dir.empty() ? p.string()
                                                  : (fs::path(lc.base_dir) / p).string();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    os << text;
    if (!os) throw DataError("short write to '" + path + "'");
}

data::SetPair& split_of(data::DomainSplits& d, std::size_t i) {
    return i == 0 ? d.train : i == 1 ? d.dev : d.test;
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonArgs& args) {
    LoadedConfig lc = load_config(args);
    if (!lc.cfg.data.synth)
        throw ConfigError("synth: config must carry a 'data.synth' block");
    const std::string out_dir = require_output_dir(lc);
    data::SynthOutput out = data::generate_synthetic(*lc.cfg.data.synth);

    fs::create_directories(out_dir);
    json manifest;
    manifest["dims"] = {{"view1", lc.cfg.data.synth->d1}, {"view2", lc.cfg.data.synth->d2}};
    manifest["seed"] = lc.cfg.data.synth->seed;
    manifest["files"] = json::array();
    const char* split_names[3] = {"train", "dev", "test"};
    for (std::uint8_t domain : {data::kDomainE, data::kDomainC}) {
        data::DomainSplits& splits =
            domain == data::kDomainE ? out.domain_e : out.domain_c;
        for (std::size_t si = 0; si < 3; ++si) {
            data::SetPair& pair = split_of(splits, si);
            for (int view = 1; view <= 2; ++view) {
                const data::EmbeddingSet& set = view == 1 ? pair.view1 : pair.view2;
                const std::string name = data::domain_name(domain) + "_" +
                                         split_names[si] + "_view" +
                                         std::to_string(view) + ".emb1";
                data::write_emb1(set, (fs::path(out_dir) / name).string());
                manifest["files"].push_back({{"domain", data::domain_name(domain)},
                                             {"split", split_names[si]},
                                             {"view", view},
                                             {"path", name},
                                             {"count", set.size()},
                                             {"dim", set.dim}});
            }
        }
    }
    write_text((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
    write_text((fs::path(out_dir) / "config.json").string(), lc.raw_text);
    std::cout << "wrote " << manifest["files"].size() << " EMB1 files under " << out_dir
              << "\n";
    return 0;
}

int cmd_pool(const std::string& in_path, const std::string& out_path) {
    const data::FrameSet frames = data::read_frm1(in_path);
    const data::EmbeddingSet pooled = data::pool_set(frames);
    if (pooled.records.empty()) {
        // explicit empty output: header only
        data::EmbeddingSet empty;
        empty.dim = frames.dim;
        data::write_emb1(empty, out_path);
        std::cout << "pooled 0 records (empty input)\n";
        return 0;
    }
    data::write_emb1(pooled, out_path);
    std::cout << "pooled " << pooled.size() << " records of dim " << pooled.dim << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    LoadedConfig lc = load_config(args);
    const std::string out_dir = require_output_dir(lc);
    const bool two_views = models::is_fusion(lc.cfg.model.kind);
    const auto [d1, d2] = cli::resolve_dims(lc.cfg.data, lc.base_dir, two_views);
    const models::ModelSpec spec = lc.cfg.resolve_spec(d1, d2);
    const data::DomainSplits splits =
        cli::resolve_domain(lc.cfg.data, lc.cfg.data.train_domain, lc.base_dir, two_views);

    models::ModelInstance model = models::build_model(spec);
    train::TrainResult result = train::train(model, splits.train, splits.dev, lc.cfg.train);
    result.meta.train_domain = data::domain_name(lc.cfg.data.train_domain);

    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "config.json").string(), lc.raw_text);
    models::save_checkpoint(model, result.meta,
                            (fs::path(out_dir) / "checkpoint.ckpt").string());
    write_text((fs::path(out_dir) / "history.json").string(),
               result.history.to_json() + "\n");
    const auto& epochs = result.history.epochs;
    std::cout << "trained " << models::to_string(spec.kind) << " for " << epochs.size()
              << " epochs; best epoch " << result.history.best_epoch << " dev loss "
              << result.history.best_dev_loss << " dev EER "
              << (result.history.best_epoch > 0
                      ? epochs[result.history.best_epoch - 1].dev_eer_percent
                      : 100.0)
              << "%\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::vector<std::string>& test_paths,
             const std::optional<std::string>& out_file) {
    models::ModelInstance model = models::load_checkpoint(ckpt_path);
    const models::CheckpointMeta meta = models::read_checkpoint_meta(ckpt_path);
    const bool two_views = models::is_fusion(model.spec.kind);
    if (two_views != (test_paths.size() == 2))
        throw ConfigError("eval: model kind " + models::to_string(model.spec.kind) +
                          " needs " + (two_views ? std::string("two") : std::string("one")) +
                          " test path(s)");
    data::SetPair test;
    test.view1 = data::read_emb1(test_paths[0]);
    if (two_views) test.view2 = data::read_emb1(test_paths[1]);
    const eval::EvalReport report = eval::evaluate(model, test, meta.train_domain);
    const std::string text = report.to_json() + "\n";
    if (out_file) write_text(*out_file, text);
    std::cout << text;
    return 0;
}

int cmd_xdomain(const CommonArgs& args) {
    LoadedConfig lc = load_config(args);
    const std::string out_dir = require_output_dir(lc);
    const bool two_views = models::is_fusion(lc.cfg.model.kind);
    const auto [d1, d2] = cli::resolve_dims(lc.cfg.data, lc.base_dir, two_views);
    const models::ModelSpec spec = lc.cfg.resolve_spec(d1, d2);
    const std::uint8_t dom_a = lc.cfg.data.train_domain;
    const std::uint8_t dom_b = dom_a == data::kDomainE ? data::kDomainC : data::kDomainE;
    const data::DomainSplits a = cli::resolve_domain(lc.cfg.data, dom_a, lc.base_dir, two_views);
    const data::DomainSplits b = cli::resolve_domain(lc.cfg.data, dom_b, lc.base_dir, two_views);

    const auto [in_report, out_report] = train::cross_domain_run(spec, a, b, lc.cfg.train);

    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "config.json").string(), lc.raw_text);
    write_text((fs::path(out_dir) / "report_in.json").string(), in_report.to_json() + "\n");
    write_text((fs::path(out_dir) / "report_out.json").string(),
               out_report.to_json() + "\n");
    std::cout << "in-domain " << in_report.train_domain << "->" << in_report.test_domain
              << " EER " << in_report.eer_percent << "%\n"
              << "out-domain " << out_report.train_domain << "->"
              << out_report.test_domain << " EER " << out_report.eer_percent << "%\n";
    return 0;
}

int cmd_params(const CommonArgs& args) {
    LoadedConfig lc = load_config(args);
    const bool two_views = models::is_fusion(lc.cfg.model.kind);
    const auto [d1, d2] = cli::resolve_dims(lc.cfg.data, lc.base_dir, two_views);
    const models::ModelSpec spec = lc.cfg.resolve_spec(d1, d2);
    models::ModelInstance model = models::build_model(spec);
    const std::size_t runtime = models::param_count(model);
    const std::size_t analytic = models::analytic_param_count(spec);
    if (runtime != analytic)
        throw NumericError("params: runtime count " + std::to_string(runtime) +
                           " disagrees with analytic formula " + std::to_string(analytic));
    std::cout << runtime << "\n";
    return 0;
}

int cmd_gradcheck(const CommonArgs& args, double epsilon, double threshold) {
    LoadedConfig lc = load_config(args);
    const bool two_views = models::is_fusion(lc.cfg.model.kind);
    const auto [d1, d2] = cli::resolve_dims(lc.cfg.data, lc.base_dir, two_views);
    const models::ModelSpec spec = lc.cfg.resolve_spec(d1, d2);
    models::ModelInstance64 model = models::build_model_f64(spec);

    // Moderate input scale keeps the output probability away from the BCE
    // clamp; a saturated graph would make the check vacuous.
    Rng rng(derive_seed(lc.cfg.train.seed, 0x6C));
    const std::size_t batch = 1;
    const double input_scale = 0.3;
    Tensor64 x1({batch, spec.d1});
    for (std::size_t i = 0; i < x1.numel(); ++i) x1[i] = input_scale * rng.normal();
    model.exec->bind("x1", x1);
    if (two_views) {
        Tensor64 x2({batch, spec.d2});
        for (std::size_t i = 0; i < x2.numel(); ++i) x2[i] = input_scale * rng.normal();
        model.exec->bind("x2", x2);
    }
    Tensor64 y({batch, 1});
    for (std::size_t i = 0; i < batch; ++i) y[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    model.exec->bind("y", y);

    ad::GradCheckOptions opt;
    opt.epsilon = epsilon;
    opt.seed = lc.cfg.train.seed;
    const auto t0 = std::chrono::steady_clock::now();
    const double err = ad::grad_check(*model.exec, model.io.loss, opt);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const auto grads = model.exec->backward(model.io.loss);
    double grad_peak = 0.0;
    for (const auto& [name, tensor] : grads)
        for (std::size_t i = 0; i < tensor.numel(); ++i)
            grad_peak = std::max(grad_peak, std::fabs(tensor[i]));
    if (grad_peak == 0.0)
        throw NumericError("gradient check degenerate: all gradients are exactly zero "
                           "(saturated loss)");

    std::cout << "max_rel_error=" << err << " epsilon=" << epsilon
              << " threshold=" << threshold << " grad_peak=" << grad_peak
              << " seconds=" << secs << "\n";
    if (!(err < threshold))
        throw NumericError("gradient check failed: max relative error " +
                           std::to_string(err) + " exceeds " + std::to_string(threshold));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-view embedding fusion classifiers (Tucker-core bilinear fusion "
                 "with element-wise squaring) over pre-extracted audio embeddings"};
    app.require_subcommand(1);

    CommonArgs synth_args, train_args, xdomain_args, params_args, grad_args;
    std::string pool_in, pool_out, eval_ckpt;
    std::vector<std::string> eval_paths;
    std::optional<std::string> eval_out;
    double grad_epsilon = 1e-5, grad_threshold = 1e-5;

    auto add_common = [](CLI::App* cmd, CommonArgs& args) {
        cmd->add_option("config", args.config_path, "Run configuration JSON")->required();
        cmd->add_option("--seed", args.seed_override, "Override the config seed");
        cmd->add_option("--out", args.out_override, "Override the output directory");
    };

    add_common(app.add_subcommand("synth", "Generate the synthetic two-view dataset"),
               synth_args);
    CLI::App* pool = app.add_subcommand("pool", "Average-pool a FRM1 file into EMB1");
    pool->add_option("input", pool_in, "FRM1 input path")->required();
    pool->add_option("output", pool_out, "EMB1 output path")->required();
    add_common(app.add_subcommand("train", "Train a model and write checkpoint+history"),
               train_args);
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a test set");
    eval_cmd->add_option("checkpoint", eval_ckpt, "CKPT1 checkpoint path")->required();
    eval_cmd->add_option("test", eval_paths, "Test EMB1 path(s), one per view")
        ->required()
        ->expected(1, 2);
    eval_cmd->add_option("--out", eval_out, "Also write the report JSON here");
    add_common(app.add_subcommand("xdomain",
                                  "Train on one domain, evaluate in- and out-domain"),
               xdomain_args);
    add_common(app.add_subcommand("params", "Print the trainable parameter count"),
               params_args);
    CLI::App* grad = app.add_subcommand("gradcheck",
                                        "Verify gradients against central differences");
    add_common(grad, grad_args);
    grad->add_option("--epsilon", grad_epsilon, "Finite-difference step");
    grad->add_option("--threshold", grad_threshold, "Maximum accepted relative error");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("synth")) return cmd_synth(synth_args);
        if (app.got_subcommand("pool")) return cmd_pool(pool_in, pool_out);
        if (app.got_subcommand("train")) return cmd_train(train_args);
        if (app.got_subcommand("eval")) return cmd_eval(eval_ckpt, eval_paths, eval_out);
        if (app.got_subcommand("xdomain")) return cmd_xdomain(xdomain_args);
        if (app.got_subcommand("params")) return cmd_params(params_args);
        if (app.got_subcommand("gradcheck"))
            return cmd_gradcheck(grad_args, grad_epsilon, grad_threshold);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
