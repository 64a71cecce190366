#include "sjepa/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

#include "sjepa/errors.hpp"

namespace sjepa {

namespace {

using nlohmann::json;

// Every key is bound to one field; reading and writing share the table so the
// two directions cannot drift apart.
struct Binding {
    std::function<json(const RunConfig&)> get;
    std::function<void(RunConfig&, const json&)> set;
};

template <typename T>
T read_as(const json& v, const std::string& key) {
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("");
        } else {
            if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) throw ConfigError("");
        }
        return v.get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
    }
}

template <typename T, typename Fn>
Binding bind(const std::string& key, Fn field) {
    return Binding{[field](const RunConfig& c) { return json(field(const_cast<RunConfig&>(c))); },
                   [field, key](RunConfig& c, const json& v) { field(c) = read_as<T>(v, key); }};
}

const std::map<std::string, Binding>& bindings() {
    static const std::map<std::string, Binding> table = {
        {"image_size", bind<std::size_t>("image_size", [](RunConfig& c) -> auto& { return c.vit.image_size; })},
        {"patch_size", bind<std::size_t>("patch_size", [](RunConfig& c) -> auto& { return c.vit.patch_size; })},
        {"embed_dim", bind<std::size_t>("embed_dim", [](RunConfig& c) -> auto& { return c.vit.embed_dim; })},
        {"depth", bind<std::size_t>("depth", [](RunConfig& c) -> auto& { return c.vit.depth; })},
        {"heads", bind<std::size_t>("heads", [](RunConfig& c) -> auto& { return c.vit.heads; })},
        {"mlp_ratio", bind<double>("mlp_ratio", [](RunConfig& c) -> auto& { return c.vit.mlp_ratio; })},
        {"predictor_width", bind<std::size_t>("predictor_width", [](RunConfig& c) -> auto& { return c.predictor.width; })},
        {"predictor_depth", bind<std::size_t>("predictor_depth", [](RunConfig& c) -> auto& { return c.predictor.depth; })},
        {"predictor_heads", bind<std::size_t>("predictor_heads", [](RunConfig& c) -> auto& { return c.predictor.heads; })},
        {"num_targets", bind<std::size_t>("num_targets", [](RunConfig& c) -> auto& { return c.mask.num_targets; })},
        {"target_scale_min", bind<double>("target_scale_min", [](RunConfig& c) -> auto& { return c.mask.target_scale.first; })},
        {"target_scale_max", bind<double>("target_scale_max", [](RunConfig& c) -> auto& { return c.mask.target_scale.second; })},
        {"target_aspect_min", bind<double>("target_aspect_min", [](RunConfig& c) -> auto& { return c.mask.target_aspect.first; })},
        {"target_aspect_max", bind<double>("target_aspect_max", [](RunConfig& c) -> auto& { return c.mask.target_aspect.second; })},
        {"context_scale_min", bind<double>("context_scale_min", [](RunConfig& c) -> auto& { return c.mask.context_scale.first; })},
        {"context_scale_max", bind<double>("context_scale_max", [](RunConfig& c) -> auto& { return c.mask.context_scale.second; })},
        {"lambda", bind<double>("lambda", [](RunConfig& c) -> auto& { return c.loss.lambda; })},
        {"beta", bind<double>("beta", [](RunConfig& c) -> auto& { return c.loss.beta; })},
        {"rho", bind<double>("rho", [](RunConfig& c) -> auto& { return c.loss.rho; })},
        {"latent_dim", bind<std::size_t>("latent_dim", [](RunConfig& c) -> auto& { return c.loss.latent_dim; })},
        {"groups", bind<std::size_t>("groups", [](RunConfig& c) -> auto& { return c.loss.groups; })},
        {"group_head", bind<bool>("group_head", [](RunConfig& c) -> auto& { return c.loss.group_head; })},
        {"penalty_mode",
         Binding{[](const RunConfig& c) { return json(to_string(c.loss.mode)); },
                 [](RunConfig& c, const json& v) {
                     try {
                         c.loss.mode = penalty_mode_from_string(read_as<std::string>(v, "penalty_mode"));
                     } catch (const ConfigError&) {
                         throw;
                     } catch (const std::exception& e) {
                         throw ConfigError(std::string("penalty_mode: ") + e.what());
                     }
                 }}},
        {"lr", bind<double>("lr", [](RunConfig& c) -> auto& { return c.optim.lr; })},
        {"sgd_momentum", bind<double>("sgd_momentum", [](RunConfig& c) -> auto& { return c.optim.momentum; })},
        {"steps", bind<std::size_t>("steps", [](RunConfig& c) -> auto& { return c.optim.steps; })},
        {"batch_size", bind<std::size_t>("batch_size", [](RunConfig& c) -> auto& { return c.optim.batch_size; })},
        {"ema_momentum", bind<double>("ema_momentum", [](RunConfig& c) -> auto& { return c.optim.ema_momentum; })},
        {"dataset", bind<std::string>("dataset", [](RunConfig& c) -> auto& { return c.dataset.name; })},
        {"train_size", bind<std::size_t>("train_size", [](RunConfig& c) -> auto& { return c.dataset.train_size; })},
        {"test_size", bind<std::size_t>("test_size", [](RunConfig& c) -> auto& { return c.dataset.test_size; })},
        {"data_path", bind<std::string>("data_path", [](RunConfig& c) -> auto& { return c.dataset.path; })},
        {"probe_lr", bind<double>("probe_lr", [](RunConfig& c) -> auto& { return c.probe.lr; })},
        {"probe_epochs", bind<std::size_t>("probe_epochs", [](RunConfig& c) -> auto& { return c.probe.epochs; })},
        {"probe_weight_decay", bind<double>("probe_weight_decay", [](RunConfig& c) -> auto& { return c.probe.weight_decay; })},
        {"seed", bind<std::uint64_t>("seed", [](RunConfig& c) -> auto& { return c.seed; })},
        {"out_dir", bind<std::string>("out_dir", [](RunConfig& c) -> auto& { return c.out_dir; })},
    };
    return table;
}

json to_object(const RunConfig& c, bool with_out_dir) {
    json j = json::object();
    for (const auto& [key, b] : bindings()) {
        if (key == "out_dir" && !with_out_dir) {
            continue;
        }
        j[key] = b.get(c);
    }
    return j;
}

}  // namespace

void RunConfig::validate() const {
    try {
        vit.validate();
        mask.validate();
        loss.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (predictor.width == 0 || predictor.heads == 0 || predictor.width % predictor.heads != 0) {
        throw ConfigError("predictor_width must be a positive multiple of predictor_heads");
    }
    if (predictor.depth == 0) {
        throw ConfigError("predictor_depth must be at least 1");
    }
    if (!(optim.lr > 0.0)) {
        throw ConfigError("lr must be positive");
    }
    if (optim.momentum < 0.0 || optim.momentum >= 1.0) {
        throw ConfigError("sgd_momentum must lie in [0, 1)");
    }
    if (optim.ema_momentum < 0.0 || optim.ema_momentum > 1.0) {
        throw ConfigError("ema_momentum must lie in [0, 1]");
    }
    if (optim.batch_size == 0 || optim.steps == 0) {
        throw ConfigError("steps and batch_size must be at least 1");
    }
    if (dataset.name != "synth-class" && dataset.name != "synth-count" && dataset.name != "cifar100") {
        throw ConfigError("dataset must be synth-class, synth-count or cifar100, got '" + dataset.name + "'");
    }
    if (dataset.name == "cifar100" && dataset.path.empty()) {
        throw ConfigError("dataset cifar100 needs data_path");
    }
    if (dataset.name != "cifar100" && (dataset.train_size == 0 || dataset.test_size == 0)) {
        throw ConfigError("train_size and test_size must be at least 1");
    }
    if (vit.image_size != data::kImageSide || vit.channels != data::kChannels) {
        throw ConfigError("image_size must be 32 for the supported datasets");
    }
    if (!(probe.lr > 0.0) || probe.weight_decay < 0.0 || probe.epochs == 0) {
        throw ConfigError("probe settings out of range");
    }
}

std::string RunConfig::to_json() const { return to_object(*this, true).dump(2); }

std::string RunConfig::portable_json() const { return to_object(*this, false).dump(2); }

RunConfig RunConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    RunConfig c;
    const auto& table = bindings();
    for (const auto& [key, value] : j.items()) {
        auto it = table.find(key);
        if (it == table.end()) {
            throw ConfigError("unknown config key '" + key + "'");
        }
        it->second.set(c, value);
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config '" + path + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t RunConfig::hash() const { return fnv1a64(to_object(*this, false).dump()); }

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace sjepa
