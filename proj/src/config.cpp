#include "pfsd/config.hpp"

#include <algorithm>
#include <fstream>
#include <vector>

namespace pfsd {

namespace {

void check_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

}  // namespace

LossConfig loss_config_from_json(const nlohmann::json& j, LossConfig cfg) {
    check_keys(j, {"mu", "lambda", "temperature", "ignore_index", "pixel_reduction"}, "loss config");
    cfg.mu = j.value("mu", cfg.mu);
    cfg.lambda = j.value("lambda", cfg.lambda);
    cfg.temperature = j.value("temperature", cfg.temperature);
    cfg.ignore_index = j.value("ignore_index", cfg.ignore_index);
    if (j.contains("pixel_reduction")) {
        const std::string r = j.at("pixel_reduction").get<std::string>();
        if (r == "mean")
            cfg.pixel_reduction = PixelReduction::mean;
        else if (r == "sum")
            cfg.pixel_reduction = PixelReduction::sum;
        else
            throw ConfigError("pixel_reduction must be 'mean' or 'sum', got '" + r + "'");
    }
    cfg.validate();
    return cfg;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig cfg) {
    check_keys(j,
               {"epochs", "batch_size", "loss", "mode", "seed", "dtype", "dataset", "out",
                "teacher_checkpoint", "optim", "arch"},
               "train config");
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    if (j.contains("loss")) cfg.loss = loss_config_from_json(j.at("loss"), cfg.loss);
    if (j.contains("mode")) cfg.mode = distill_mode_from_string(j.at("mode").get<std::string>());
    cfg.seed = j.value("seed", cfg.seed);
    cfg.dtype = j.value("dtype", cfg.dtype);
    cfg.dataset_dir = j.value("dataset", cfg.dataset_dir);
    cfg.out_dir = j.value("out", cfg.out_dir);
    cfg.teacher_checkpoint = j.value("teacher_checkpoint", cfg.teacher_checkpoint);
    if (j.contains("optim")) {
        const auto& o = j.at("optim");
        check_keys(o, {"base_lr", "momentum", "weight_decay"}, "optim config");
        cfg.optim.base_lr = o.value("base_lr", cfg.optim.base_lr);
        cfg.optim.momentum = o.value("momentum", cfg.optim.momentum);
        cfg.optim.weight_decay = o.value("weight_decay", cfg.optim.weight_decay);
    }
    if (j.contains("arch")) {
        const auto& a = j.at("arch");
        if (a.is_string()) {
            const std::string name = a.get<std::string>();
            if (name == "teacher-default")
                cfg.arch = SegNetSpec::teacher_default();
            else if (name == "student-default")
                cfg.arch = SegNetSpec::student_default();
            else
                throw ConfigError("unknown arch preset '" + name + "'");
        } else {
            cfg.arch = a.get<SegNetSpec>();
        }
    }
    return cfg;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["loss"] = {{"mu", cfg.loss.mu},
                 {"lambda", cfg.loss.lambda},
                 {"temperature", cfg.loss.temperature},
                 {"ignore_index", cfg.loss.ignore_index},
                 {"pixel_reduction",
                  cfg.loss.pixel_reduction == PixelReduction::mean ? "mean" : "sum"}};
    j["mode"] = to_string(cfg.mode);
    j["seed"] = cfg.seed;
    j["dtype"] = cfg.dtype;
    j["dataset"] = cfg.dataset_dir;
    j["out"] = cfg.out_dir;
    if (!cfg.teacher_checkpoint.empty()) j["teacher_checkpoint"] = cfg.teacher_checkpoint;
    j["optim"] = {{"base_lr", cfg.optim.base_lr},
                  {"momentum", cfg.optim.momentum},
                  {"weight_decay", cfg.optim.weight_decay}};
    j["arch"] = cfg.arch;
    return j;
}

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read config file: " + path);
    try {
        nlohmann::json j;
        is >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad JSON in " + path + ": " + e.what());
    }
}

}  // namespace pfsd
