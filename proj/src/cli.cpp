#include "pfsd/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "pfsd/checks.hpp"
#include "pfsd/config.hpp"
#include "pfsd/data.hpp"
#include "pfsd/trainer.hpp"
#include "pfsd/viz.hpp"

namespace fs = std::filesystem;

namespace pfsd {

namespace {

// Shared flag overrides; precedence is defaults < config JSON < flags.
struct TrainFlags {
    std::string config_path, out, dataset, teacher, mode, dtype;
    std::optional<uint64_t> seed;
    std::optional<int> epochs;
    std::optional<int> batch_size;
    std::optional<double> lambda, mu, temperature;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON config file");
    cmd->add_option("--seed", f.seed, "training seed");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--dataset", f.dataset, "dataset directory");
    cmd->add_option("--mode", f.mode, "distill mode");
    cmd->add_option("--epochs", f.epochs, "number of epochs");
    cmd->add_option("--batch-size", f.batch_size, "batch size");
    cmd->add_option("--lambda", f.lambda, "weight of the pfs loss");
    cmd->add_option("--mu", f.mu, "weight of the soft term");
    cmd->add_option("--temperature", f.temperature, "teacher softening temperature");
    cmd->add_option("--dtype", f.dtype, "f32 or f64");
}

TrainConfig resolve_train_config(const TrainFlags& f, TrainConfig cfg) {
    if (!f.config_path.empty()) cfg = train_config_from_json(load_json_file(f.config_path), cfg);
    if (f.seed) cfg.seed = *f.seed;
    if (!f.out.empty()) cfg.out_dir = f.out;
    if (!f.dataset.empty()) cfg.dataset_dir = f.dataset;
    if (!f.mode.empty()) cfg.mode = distill_mode_from_string(f.mode);
    if (f.epochs) cfg.epochs = *f.epochs;
    if (f.batch_size) cfg.batch_size = *f.batch_size;
    if (f.lambda) cfg.loss.lambda = *f.lambda;
    if (f.mu) cfg.loss.mu = *f.mu;
    if (f.temperature) cfg.loss.temperature = *f.temperature;
    if (!f.dtype.empty()) cfg.dtype = f.dtype;
    return cfg;
}

void write_resolved_config(const TrainConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    std::ofstream os(fs::path(cfg.out_dir) / "config.json");
    os << train_config_to_json(cfg).dump(2) << "\n";
}

void print_result(const char* what, const TrainResult& r) {
    std::printf("%s: best val mIoU %.4f (epoch %d), final %.4f\n", what, r.best_val_miou,
                r.best_epoch, r.final_val_miou);
    std::printf("checkpoint: %s\n", r.checkpoint_path.c_str());
}

std::vector<std::pair<int, int>> parse_pixel_list(const std::string& s) {
    std::vector<std::pair<int, int>> out;
    size_t pos = 0;
    while (pos < s.size()) {
        size_t end = s.find(';', pos);
        if (end == std::string::npos) end = s.size();
        const std::string part = s.substr(pos, end - pos);
        const size_t comma = part.find(',');
        if (comma == std::string::npos)
            throw ConfigError("bad pixel '" + part + "', expected x,y");
        try {
            out.emplace_back(std::stoi(part.substr(0, comma)), std::stoi(part.substr(comma + 1)));
        } catch (const std::exception&) {
            throw ConfigError("bad pixel '" + part + "', expected integers x,y");
        }
        pos = end + 1;
    }
    if (out.empty()) throw ConfigError("empty pixel list");
    return out;
}

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"pixel-similarity knowledge distillation for toy semantic segmentation"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    std::string gen_config, gen_out = "data";
    std::optional<uint64_t> gen_seed;
    gen->add_option("--config", gen_config, "JSON dataset spec");
    gen->add_option("--out", gen_out, "dataset directory");
    gen->add_option("--seed", gen_seed, "master seed");

    // train-teacher
    auto* tt = app.add_subcommand("train-teacher", "train the teacher with hard CE only");
    TrainFlags tt_flags;
    add_train_flags(tt, tt_flags);

    // distill
    auto* ds = app.add_subcommand("distill", "train a student against a frozen teacher");
    TrainFlags ds_flags;
    add_train_flags(ds, ds_flags);
    ds->add_option("--teacher", ds_flags.teacher, "teacher checkpoint");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_dataset, ev_split = "val", ev_out;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--dataset", ev_dataset, "dataset directory")->required();
    ev->add_option("--split", ev_split, "train or val");
    ev->add_option("--out", ev_out, "CSV report path");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference checks for all ops and losses");
    int gc_configs = 100;
    std::string gc_out;
    gc->add_option("--configs", gc_configs, "configs per op");
    gc->add_option("--out", gc_out, "CSV path (default stdout)");

    // oracle-check
    auto* oc = app.add_subcommand("oracle-check", "brute-force oracle checks for the kernels");
    int oc_instances = 200;
    std::string oc_out;
    oc->add_option("--instances", oc_instances, "instances per op");
    oc->add_option("--out", oc_out, "CSV path (default stdout)");

    // pfs-dump
    auto* pd = app.add_subcommand("pfs-dump", "export similarity heatmaps for chosen pixels");
    std::string pd_ckpt, pd_image, pd_dataset, pd_split = "val", pd_pixels, pd_out = "pfs_dump",
                pd_prefix = "pfs";
    std::optional<int> pd_index;
    pd->add_option("--checkpoint", pd_ckpt, "checkpoint path")->required();
    pd->add_option("--image", pd_image, "image tensor file [3,H,W] f32");
    pd->add_option("--dataset", pd_dataset, "dataset directory");
    pd->add_option("--split", pd_split, "train or val");
    pd->add_option("--index", pd_index, "sample index within the split");
    pd->add_option("--pixels", pd_pixels, "pixel list 'x,y;x,y'")->required();
    pd->add_option("--out", pd_out, "output directory");
    pd->add_option("--prefix", pd_prefix, "output file prefix");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (gen->parsed()) {
        DatasetSpec spec;
        if (!gen_config.empty()) spec = load_json_file(gen_config).get<DatasetSpec>();
        if (gen_seed) spec.seed = *gen_seed;
        spec.validate();
        generate_dataset(spec, gen_out);
        std::printf("wrote %d train and %d val samples to %s\n", spec.train_count, spec.val_count,
                    gen_out.c_str());
        return 0;
    }
    if (tt->parsed()) {
        TrainConfig cfg = resolve_train_config(tt_flags, default_teacher_config());
        write_resolved_config(cfg);
        print_result("teacher", train_teacher(cfg));
        return 0;
    }
    if (ds->parsed()) {
        TrainConfig cfg = resolve_train_config(ds_flags, default_student_config());
        if (!ds_flags.teacher.empty()) cfg.teacher_checkpoint = ds_flags.teacher;
        write_resolved_config(cfg);
        print_result("student", distill(cfg));
        return 0;
    }
    if (ev->parsed()) {
        const MiouResult r = evaluate_checkpoint(ev_ckpt, ev_dataset, ev_split);
        std::fputs(miou_table(r).c_str(), stdout);
        if (!ev_out.empty()) {
            std::ofstream os(ev_out);
            if (!os) throw IoError("cannot write " + ev_out);
            os << miou_csv(r);
        }
        if (!r.valid) throw NumericError("evaluation saw no valid pixels");
        return 0;
    }
    if (gc->parsed()) {
        SuiteResult r;
        if (gc_out.empty()) {
            r = run_gradcheck_suite(gc_configs, std::cout);
        } else {
            std::ofstream os(gc_out);
            if (!os) throw IoError("cannot write " + gc_out);
            r = run_gradcheck_suite(gc_configs, os);
        }
        std::fprintf(stderr, "gradcheck: %d checks, %d failures, %.1fs\n", r.checks, r.failures,
                     r.seconds);
        return r.pass() ? 0 : 2;
    }
    if (oc->parsed()) {
        SuiteResult r;
        if (oc_out.empty()) {
            r = run_oracle_suite(oc_instances, std::cout);
        } else {
            std::ofstream os(oc_out);
            if (!os) throw IoError("cannot write " + oc_out);
            r = run_oracle_suite(oc_instances, os);
        }
        std::fprintf(stderr, "oracle-check: %d checks, %d failures, %.1fs\n", r.checks, r.failures,
                     r.seconds);
        return r.pass() ? 0 : 2;
    }
    if (pd->parsed()) {
        Tensor<float> image;
        if (!pd_image.empty()) {
            image = load_tensor<float>(pd_image);
        } else if (!pd_dataset.empty() && pd_index) {
            Dataset d = load_split(pd_dataset, pd_split);
            if (*pd_index < 0 || static_cast<size_t>(*pd_index) >= d.samples.size())
                throw ConfigError("sample index out of range");
            image = d.samples[static_cast<size_t>(*pd_index)].image;
        } else {
            throw ConfigError("pfs-dump needs --image or --dataset with --index");
        }
        Network<double> net = load_checkpoint<double>(pd_ckpt);
        const auto files = pfs_dump(net, image, parse_pixel_list(pd_pixels), pd_out, pd_prefix);
        std::printf("wrote %zu heatmaps under %s\n", files.heatmaps.size(), pd_out.c_str());
        return 0;
    }
    return 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

}  // namespace pfsd
