// texseg command line: toy-data generation, training, dataset evaluation and
// single-image segmentation, driven by a flat key=value config with CLI
// overrides. Every run writes the fully resolved config next to its outputs
// so it can be replayed with --config alone.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "texseg/texseg.hpp"

namespace {

using texseg::KeyValueConfig;

// missing required settings are usage errors (exit 2), whether they were
// expected from a flag or a config file
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_keys(const KeyValueConfig& kv, std::initializer_list<const char*> keys) {
    for (const char* key : keys)
        if (!kv.has(key) || kv.get_str(key, "").empty())
            throw UsageError(std::string("missing required setting '") + key +
                             "' (pass --" + key + " or put it in --config)");
}

std::string flag_name(const std::string& key) {
    std::string flag = "--" + key;
    for (auto& ch : flag)
        if (ch == '_') ch = '-';
    return flag;
}

// Stages CLI flag values by config key; resolution order is
// defaults -> config file -> explicit flags.
struct ArgStage {
    CLI::App* cmd;
    std::string config_path;
    std::map<std::string, std::string> staged;

    explicit ArgStage(CLI::App* c) : cmd(c) {
        cmd->add_option("--config", config_path, "key=value config file; flags override it");
    }

    CLI::Option* opt(const std::string& key, const std::string& help) {
        return cmd->add_option_function<std::string>(
            flag_name(key), [this, key](const std::string& v) { staged[key] = v; }, help);
    }

    KeyValueConfig resolve(const KeyValueConfig& defaults) const {
        KeyValueConfig kv = defaults;
        if (!config_path.empty())
            for (const auto& [k, v] : KeyValueConfig::load(config_path).values) kv.set(k, v);
        for (const auto& [k, v] : staged) kv.set(k, v);
        return kv;
    }
};

void write_effective_config(const KeyValueConfig& kv, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    kv.save(out_dir + "/effective-config.txt");
}

void echo_config(const KeyValueConfig& kv) {
    for (const auto& [k, v] : kv.values) std::cout << k << " = " << v << "\n";
}

texseg::SsimParams ssim_from(const KeyValueConfig& kv) {
    texseg::SsimParams p;
    p.window_size = static_cast<int>(kv.get_int("ssim_k", 11));
    p.c1 = kv.get_num("ssim_c1", 0.01);
    p.c2 = kv.get_num("ssim_c2", 0.03);
    p.alpha = kv.get_num("alpha", 1.0);
    p.beta = kv.get_num("beta", 1.0);
    p.gamma = kv.get_num("gamma", 1.0);
    p.check();
    return p;
}

// --- gen ------------------------------------------------------------------

KeyValueConfig gen_defaults() {
    KeyValueConfig kv;
    kv.set("command", "gen");
    kv.set("seed", "1");
    kv.set("n_train", "100");
    kv.set("n_test", "50");
    kv.set("image_size", "128");
    kv.set("cell_min", "8");
    kv.set("cell_max", "24");
    kv.set("rot_min", "0");
    kv.set("rot_max", "45");
    kv.set("low", "0");
    kv.set("high", "1");
    kv.set("antialias", "on");
    kv.set("random_phase", "on");
    kv.set("stroke_count_min", "2");
    kv.set("stroke_count_max", "5");
    kv.set("stroke_width_min", "2");
    kv.set("stroke_width_max", "4");
    kv.set("stroke_length_min", "12");
    kv.set("stroke_length_max", "40");
    kv.set("dot_count_min", "2");
    kv.set("dot_count_max", "5");
    kv.set("dot_radius_min", "2");
    kv.set("dot_radius_max", "5");
    kv.set("defect_intensity", "0.5");
    return kv;
}

int cmd_gen(const KeyValueConfig& kv) {
    require_keys(kv, {"out"});
    const std::string out = kv.get_str("out", "");
    texseg::CheckerSpec checker;
    checker.image_size = static_cast<int>(kv.get_int("image_size", 128));
    checker.cell_min = static_cast<int>(kv.get_int("cell_min", 8));
    checker.cell_max = static_cast<int>(kv.get_int("cell_max", 24));
    checker.rot_min_deg = kv.get_num("rot_min", 0.0);
    checker.rot_max_deg = kv.get_num("rot_max", 45.0);
    checker.low = static_cast<float>(kv.get_num("low", 0.0));
    checker.high = static_cast<float>(kv.get_num("high", 1.0));
    checker.antialias = kv.get_flag("antialias", true);
    checker.random_phase = kv.get_flag("random_phase", true);

    texseg::DefectSpec defects;
    defects.stroke_count_min = static_cast<int>(kv.get_int("stroke_count_min", 2));
    defects.stroke_count_max = static_cast<int>(kv.get_int("stroke_count_max", 5));
    defects.stroke_width_min = kv.get_num("stroke_width_min", 2.0);
    defects.stroke_width_max = kv.get_num("stroke_width_max", 4.0);
    defects.stroke_length_min = kv.get_num("stroke_length_min", 12.0);
    defects.stroke_length_max = kv.get_num("stroke_length_max", 40.0);
    defects.dot_count_min = static_cast<int>(kv.get_int("dot_count_min", 2));
    defects.dot_count_max = static_cast<int>(kv.get_int("dot_count_max", 5));
    defects.dot_radius_min = kv.get_num("dot_radius_min", 2.0);
    defects.dot_radius_max = kv.get_num("dot_radius_max", 5.0);
    defects.intensity = static_cast<float>(kv.get_num("defect_intensity", 0.5));

    write_effective_config(kv, out);
    texseg::make_toy_dataset(out, static_cast<int>(kv.get_int("n_train", 100)),
                             static_cast<int>(kv.get_int("n_test", 50)), checker, defects,
                             static_cast<std::uint64_t>(kv.get_int("seed", 1)));
    std::cout << out << "/manifest.txt\n";
    return 0;
}

// --- train ----------------------------------------------------------------

KeyValueConfig train_defaults() {
    KeyValueConfig kv;
    kv.set("command", "train");
    kv.set("seed", "1");
    kv.set("loss", "l2");
    kv.set("latent_dim", "100");
    kv.set("epochs", "200");
    kv.set("batch_size", "64");
    kv.set("learning_rate", "0.0002");
    kv.set("weight_decay", "0.00001");
    kv.set("patch_count", "10000");
    kv.set("patch_size", "128");
    kv.set("validation_fraction", "0.1");
    kv.set("ssim_k", "11");
    kv.set("ssim_c1", "0.01");
    kv.set("ssim_c2", "0.03");
    kv.set("alpha", "1");
    kv.set("beta", "1");
    kv.set("gamma", "1");
    kv.set("vae_samples", "6");
    kv.set("fm_lambda", "1");
    kv.set("downscale", "0");
    kv.set("resample_per_epoch", "off");
    kv.set("decoupled_weight_decay", "off");
    kv.set("checkpoint_every", "50");
    return kv;
}

int cmd_train(const KeyValueConfig& kv) {
    require_keys(kv, {"manifest", "out"});
    const std::string out = kv.get_str("out", "");
    echo_config(kv);
    write_effective_config(kv, out);

    const texseg::LossKind loss = texseg::loss_from_string(kv.get_str("loss", "l2"));
    texseg::ModelSpec spec;
    spec.latent_dim = static_cast<int>(kv.get_int("latent_dim", 100));
    spec.variant = loss == texseg::LossKind::VAE  ? texseg::Variant::VAE
                   : loss == texseg::LossKind::FM ? texseg::Variant::FM
                                                  : texseg::Variant::AE;
    spec.fm_lambda = static_cast<float>(kv.get_num("fm_lambda", 1.0));
    spec.vae_samples = static_cast<int>(kv.get_int("vae_samples", 6));

    texseg::TrainConfig cfg;
    cfg.loss = loss;
    cfg.epochs = static_cast<int>(kv.get_int("epochs", 200));
    cfg.batch_size = static_cast<int>(kv.get_int("batch_size", 64));
    cfg.learning_rate = kv.get_num("learning_rate", 2e-4);
    cfg.weight_decay = kv.get_num("weight_decay", 1e-5);
    cfg.patch_count = static_cast<int>(kv.get_int("patch_count", 10000));
    cfg.patch_size = static_cast<int>(kv.get_int("patch_size", 128));
    cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
    cfg.validation_fraction = kv.get_num("validation_fraction", 0.1);
    cfg.resample_per_epoch = kv.get_flag("resample_per_epoch", false);
    cfg.decoupled_weight_decay = kv.get_flag("decoupled_weight_decay", false);
    cfg.checkpoint_every = static_cast<int>(kv.get_int("checkpoint_every", 50));
    cfg.downscale_to = static_cast<int>(kv.get_int("downscale", 0));
    cfg.ssim = ssim_from(kv);
    cfg.extractor_weights = kv.get_str("extractor_weights", "");

    texseg::DatasetManifest manifest = texseg::load_manifest(kv.get_str("manifest", ""));
    manifest.validation_fraction = cfg.validation_fraction;

    const auto [ckpt, log] = texseg::train(manifest, spec, cfg, out);
    std::cout << "checkpoint " << log.final_checkpoint << "\n";
    std::cout << "final_train_loss " << log.epochs.back().train_loss << "\n";
    return 0;
}

// --- eval -----------------------------------------------------------------

KeyValueConfig eval_defaults() {
    KeyValueConfig kv;
    kv.set("command", "eval");
    kv.set("seed", "1");
    kv.set("stride", "30");
    kv.set("opening", "on");
    kv.set("n_thresholds", "256");
    kv.set("fprs", "0.01,0.05,0.1");
    kv.set("ssim_k", "11");
    kv.set("ssim_c1", "0.01");
    kv.set("ssim_c2", "0.03");
    kv.set("alpha", "1");
    kv.set("beta", "1");
    kv.set("gamma", "1");
    kv.set("downscale", "0");
    kv.set("save_raw", "off");
    return kv;
}

std::vector<double> parse_fprs(const std::string& csv) {
    std::vector<double> out;
    std::string item;
    std::istringstream in(csv);
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    if (out.empty()) throw std::runtime_error("no false-positive-rate targets given");
    return out;
}

texseg::GroundTruthMask downscale_mask(const texseg::GroundTruthMask& mask, int size) {
    texseg::GroundTruthMask out(size, size);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            const int sr = std::min(mask.height - 1,
                                    static_cast<int>((r + 0.5) * mask.height / size));
            const int sc = std::min(mask.width - 1,
                                    static_cast<int>((c + 0.5) * mask.width / size));
            out.at(r, c) = mask.at(sr, sc);
        }
    return out;
}

int cmd_eval(const KeyValueConfig& kv) {
    require_keys(kv, {"manifest", "checkpoint", "out"});
    const std::string out = kv.get_str("out", "");
    write_effective_config(kv, out);

    const texseg::Checkpoint ckpt = texseg::load_checkpoint(kv.get_str("checkpoint", ""));
    const texseg::Autoencoder net = texseg::restore_model(ckpt);
    const texseg::LossKind method =
        texseg::loss_from_string(kv.get_str("method", ckpt.meta.loss_type));
    const texseg::SsimParams ssim = ssim_from(kv);
    const int stride = static_cast<int>(kv.get_int("stride", 30));
    const bool opening = kv.get_flag("opening", true);
    const int n_thresholds = static_cast<int>(kv.get_int("n_thresholds", 256));
    const int downscale = static_cast<int>(kv.get_int("downscale", 0));
    const bool save_raw = kv.get_flag("save_raw", false);
    const auto fprs = parse_fprs(kv.get_str("fprs", "0.01,0.05,0.1"));
    const std::uint64_t seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));

    const texseg::DatasetManifest manifest = texseg::load_manifest(kv.get_str("manifest", ""));
    if (manifest.test_images.empty()) throw std::runtime_error("manifest has no test images");

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<texseg::ResidualMap> residuals;
    std::vector<texseg::GroundTruthMask> masks;
    std::ofstream scale_notes;
    std::filesystem::create_directories(out);
    std::ofstream report_file(out + "/eval_report.txt");
    report_file.precision(9);

    for (size_t i = 0; i < manifest.test_images.size(); ++i) {
        texseg::Image img = texseg::load_image(manifest.test_images[i].first);
        texseg::GroundTruthMask mask = texseg::load_mask(manifest.test_images[i].second);
        if (downscale > 0) {
            img = texseg::downscale_bilinear(img, downscale, downscale);
            mask = downscale_mask(mask, downscale);
        }
        residuals.push_back(texseg::residual_for(method, net, img, ssim, stride,
                                                 texseg::derive_seed(seed, i)));
        masks.push_back(std::move(mask));

        texseg::ResidualScaling scaling;
        const texseg::Image vis = texseg::residual_to_unit_image(residuals.back(), &scaling);
        char name[64];
        std::snprintf(name, sizeof(name), "residual_%04zu", i);
        texseg::save_image(vis, out + "/" + name + ".png", 16);
        if (save_raw) texseg::save_raw_map(residuals.back(), out + "/" + name + ".txsg");
        report_file << "residual " << i << " file " << name << ".png min " << scaling.min_score
                    << " max " << scaling.max_score << "\n";
    }

    texseg::EvalReport report =
        texseg::region_overlap_quantiles(residuals, masks, fprs, n_thresholds, opening);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    texseg::write_eval_report(report, report_file);
    std::ofstream roc_file(out + "/roc.csv");
    texseg::write_roc_csv(report.roc, roc_file);

    std::cout << "auc " << report.auc << "\n";
    for (const auto& oq : report.overlaps)
        std::cout << "overlap fpr " << oq.fpr_target << " q25 " << oq.q25 << " q50 " << oq.q50
                  << " q75 " << oq.q75 << "\n";
    return 0;
}

// --- segment ----------------------------------------------------------------

KeyValueConfig segment_defaults() {
    KeyValueConfig kv;
    kv.set("command", "segment");
    kv.set("seed", "1");
    kv.set("stride", "30");
    kv.set("opening", "on");
    kv.set("ssim_k", "11");
    kv.set("ssim_c1", "0.01");
    kv.set("ssim_c2", "0.03");
    kv.set("alpha", "1");
    kv.set("beta", "1");
    kv.set("gamma", "1");
    return kv;
}

int cmd_segment(const KeyValueConfig& kv) {
    require_keys(kv, {"checkpoint", "image", "out", "threshold"});
    const std::string out = kv.get_str("out", "");
    write_effective_config(kv, out);
    const double threshold = kv.get_num("threshold", 0.0);

    const texseg::Checkpoint ckpt = texseg::load_checkpoint(kv.get_str("checkpoint", ""));
    const texseg::Autoencoder net = texseg::restore_model(ckpt);
    const texseg::LossKind method =
        texseg::loss_from_string(kv.get_str("method", ckpt.meta.loss_type));
    const texseg::SsimParams ssim = ssim_from(kv);
    const int stride = static_cast<int>(kv.get_int("stride", 30));
    const bool opening = kv.get_flag("opening", true);
    const std::uint64_t seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));

    const std::string image_path = kv.get_str("image", "");
    const texseg::Image img = texseg::load_image(image_path);
    const std::string stem =
        out + "/" + std::filesystem::path(image_path).stem().string();

    const texseg::Image recon = texseg::strided_reconstruct(net, img, stride);
    const texseg::ResidualMap res = texseg::residual_for(method, net, img, ssim, stride, seed);
    texseg::GroundTruthMask seg = texseg::binarize(res, threshold);
    if (opening) seg = texseg::open_disk4(seg);

    texseg::save_image(recon, stem + "_reconstruction.png", 8);
    texseg::save_image(texseg::residual_to_unit_image(res), stem + "_residual.png", 16);
    texseg::save_mask(seg, stem + "_segmentation.png");
    std::cout << stem << "_reconstruction.png\n"
              << stem << "_residual.png\n"
              << stem << "_segmentation.png\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unsupervised texture defect segmentation with autoencoders"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen", "generate a toy checkerboard dataset");
    ArgStage gen_args(gen);
    gen_args.opt("out", "output directory");
    for (const char* key :
         {"seed", "n_train", "n_test", "image_size", "cell_min", "cell_max", "rot_min", "rot_max",
          "low", "high", "antialias", "random_phase", "stroke_count_min", "stroke_count_max", "stroke_width_min",
          "stroke_width_max", "stroke_length_min", "stroke_length_max", "dot_count_min",
          "dot_count_max", "dot_radius_min", "dot_radius_max", "defect_intensity"})
        gen_args.opt(key, "");

    auto* train = app.add_subcommand("train", "train an autoencoder on defect-free images");
    ArgStage train_args(train);
    train_args.opt("manifest", "dataset manifest");
    train_args.opt("out", "output directory");
    train_args.opt("loss", "training loss: l2 | ssim | vae | fm")
        ->check(CLI::IsMember({"l2", "ssim", "vae", "fm"}));
    for (const char* key :
         {"seed", "latent_dim", "epochs", "batch_size", "learning_rate", "weight_decay",
          "patch_count", "patch_size", "validation_fraction", "ssim_k", "ssim_c1", "ssim_c2",
          "alpha", "beta", "gamma", "vae_samples", "fm_lambda", "downscale", "resample_per_epoch",
          "decoupled_weight_decay", "checkpoint_every", "extractor_weights"})
        train_args.opt(key, "");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a test set");
    ArgStage eval_args(eval);
    eval_args.opt("manifest", "dataset manifest");
    eval_args.opt("checkpoint", "trained model checkpoint");
    eval_args.opt("out", "output directory");
    eval_args.opt("method", "residual method: l2 | ssim | vae | fm")
        ->check(CLI::IsMember({"l2", "ssim", "vae", "fm"}));
    for (const char* key : {"seed", "stride", "opening", "n_thresholds", "fprs", "ssim_k",
                            "ssim_c1", "ssim_c2", "alpha", "beta", "gamma", "downscale", "save_raw"})
        eval_args.opt(key, "");

    auto* segment = app.add_subcommand("segment", "segment a single image at a fixed threshold");
    ArgStage segment_args(segment);
    segment_args.opt("checkpoint", "trained model checkpoint");
    segment_args.opt("image", "input image");
    segment_args.opt("out", "output directory");
    segment_args.opt("threshold", "residual threshold");
    segment_args.opt("method", "residual method: l2 | ssim | vae | fm")
        ->check(CLI::IsMember({"l2", "ssim", "vae", "fm"}));
    for (const char* key : {"seed", "stride", "opening", "ssim_k", "ssim_c1", "ssim_c2", "alpha",
                            "beta", "gamma"})
        segment_args.opt(key, "");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_args.resolve(gen_defaults()));
        if (train->parsed()) return cmd_train(train_args.resolve(train_defaults()));
        if (eval->parsed()) return cmd_eval(eval_args.resolve(eval_defaults()));
        if (segment->parsed()) return cmd_segment(segment_args.resolve(segment_defaults()));
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
