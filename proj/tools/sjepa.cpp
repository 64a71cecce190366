// Command line front end: pretrain, probe, verify-info, inspect, export-metrics.

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>

#include "sjepa/checkpoint.hpp"
#include "sjepa/config.hpp"
#include "sjepa/errors.hpp"
#include "sjepa/infotheory.hpp"
#include "sjepa/probe.hpp"
#include "sjepa/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace sjepa;

namespace {

int code(ExitCode c) { return static_cast<int>(c); }

int cmd_pretrain(const std::string& config_path, const std::string& resume, bool force, std::size_t stop_at,
                 const std::string& out, bool verbose) {
    RunConfig cfg = RunConfig::load(config_path);
    if (!out.empty()) {
        cfg.out_dir = out;
    }
    RunOptions opt;
    if (!resume.empty()) {
        opt.resume = resume;
    }
    opt.force = force;
    if (stop_at > 0) {
        opt.stop_at = stop_at;
    }
    opt.quiet = !verbose;
    const auto result = run_pretrain(cfg, opt);
    if (result.aborted) {
        std::cerr << "aborted: " << result.abort_reason << "\n"
                  << "last good state: " << (fs::path(cfg.out_dir) / "last_good.sjck").string() << "\n";
        return code(ExitCode::numeric);
    }
    if (!result.metrics.empty()) {
        const auto& last = result.metrics.back();
        std::cout << "step " << last.step << " jepa_loss " << last.jepa << " total " << last.total
                  << " zero_columns " << last.zero_columns << "\n";
    }
    std::cout << "checkpoint " << (fs::path(cfg.out_dir) / "checkpoint.sjck").string() << "\n";
    return code(ExitCode::ok);
}

int cmd_probe(const std::string& ckpt_path, const std::string& dataset, const std::string& save, bool force) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    RunConfig cfg = RunConfig::from_json(ckpt.config_json);
    check_config_hash(ckpt, cfg.hash(), force);
    if (!ckpt.has_prefix(kTeacherPrefix)) {
        throw FormatError("checkpoint: missing section group '" + std::string(kTeacherPrefix) + "'");
    }
    Model model = init_model(cfg);
    restore_params(ckpt, kTeacherPrefix, model.teacher.named());

    DatasetConfig ds = cfg.dataset;
    if (!dataset.empty()) {
        ds.name = dataset;
    }
    cfg.dataset = ds;
    cfg.validate();
    const auto splits = load_splits(ds, cfg.seed);
    const auto train = extract_features(splits.train, cfg.vit, model.teacher);
    const auto test = extract_features(splits.test, cfg.vit, model.teacher);
    const auto probe = train_linear_probe(train, cfg.probe, splits.train.num_classes);
    const double train_top1 = top1_accuracy(probe, train);
    const double test_top1 = top1_accuracy(probe, test);

    ordered_json report;
    report["event"] = "probe";
    report["step"] = ckpt.step;
    report["dataset"] = ds.name;
    report["classes"] = probe.classes;
    report["train_size"] = train.n;
    report["test_size"] = test.n;
    report["train_top1"] = train_top1;
    report["test_top1"] = test_top1;
    report["chance"] = 1.0 / static_cast<double>(splits.train.num_classes);
    report["final_probe_loss"] = probe.loss_history.empty() ? 0.0 : probe.loss_history.back();
    std::cout << report.dump(2) << "\n";

    const auto metrics = fs::path(ckpt_path).parent_path() / "metrics.jsonl";
    if (fs::exists(metrics)) {
        std::ofstream(metrics, std::ios::app) << report.dump() << "\n";
    }
    const std::string out = save.empty() ? (fs::path(ckpt_path).parent_path() / ("probe_" + ds.name + ".sjck")).string() : save;
    ckpt.put({std::string(kProbePrefix) + "weight", {probe.d, probe.classes}, probe.weight});
    ckpt.put({std::string(kProbePrefix) + "bias", {probe.classes}, probe.bias});
    ckpt.put({std::string(kProbePrefix) + "feature_mean", {probe.d}, probe.feature_mean});
    ckpt.put({std::string(kProbePrefix) + "feature_std", {probe.d}, probe.feature_std});
    save_checkpoint(out, ckpt);
    return code(ExitCode::ok);
}

ordered_json theorem_case(const info::Theorem1Case& c) {
    ordered_json j;
    j["label"] = c.label;
    j["I_X"] = c.result.info_x;
    j["I_G"] = c.result.info_g;
    j["I_ZX"] = c.result.mi_zx;
    j["I_ZG"] = c.result.mi_zg;
    j["status"] = info::to_string(c.result.claim2);
    return j;
}

int cmd_verify_info(std::size_t trials, std::uint64_t seed, const std::string& out) {
    const auto lemma = info::verify_lemma1(trials, seed);
    const auto theorem = info::audit_theorem1(trials, seed);

    ordered_json j;
    j["trials"] = trials;
    j["seed"] = seed;
    auto& l = j["lemma1"];
    l["statement"] = "I(G_1..G_m) <= I(X_1..X_n) for deterministic groupings";
    l["trials"] = lemma.trials;
    l["violations"] = lemma.violations;
    l["dependent_trials"] = lemma.dependent;
    l["strict_among_dependent"] = lemma.strict_among_dependent;
    l["min_margin"] = lemma.min_margin;
    l["min_margin_dependent"] = lemma.min_margin_dependent;
    l["violation_dumps"] = ordered_json::array();
    for (const auto& d : lemma.violation_dumps) {
        l["violation_dumps"].push_back(ordered_json::parse(d));
    }
    auto& t = j["theorem1"];
    t["trials"] = theorem.trials;
    t["claim1_violations"] = theorem.claim1_violations;
    t["dpi_violations"] = theorem.dpi_violations;
    t["max_dpi_excess"] = theorem.max_dpi_excess;
    t["sufficient"] = theorem.sufficient;
    t["strict_dpi"] = theorem.strict_dpi;
    t["claim2_as_stated"] = "I(Z;G) >= I(Z;X)";
    t["claim2_holds_only_when_sufficient"] = theorem.dpi_violations == 0;
    t["sufficient_cases"] = ordered_json::array();
    for (const auto& c : theorem.sufficient_cases) {
        t["sufficient_cases"].push_back(theorem_case(c));
    }
    t["counterexamples"] = ordered_json::array();
    for (const auto& c : theorem.counterexamples) {
        t["counterexamples"].push_back(theorem_case(c));
    }
    l["records"] = ordered_json::array();
    for (const auto& r : lemma.records) {
        ordered_json e;
        e["seed"] = r.seed;
        e["cards"] = r.cards;
        e["groups"] = r.groups;
        e["I_X"] = r.info_x;
        e["I_G"] = r.info_g;
        e["margin"] = r.margin;
        e["inter_group"] = r.inter_group;
        e["strict"] = r.strict;
        l["records"].push_back(std::move(e));
    }
    t["records"] = ordered_json::array();
    for (const auto& r : theorem.records) {
        t["records"].push_back(theorem_case({"random", r}));
    }
    const std::string text = j.dump(2);
    if (out.empty()) {
        std::cout << text << "\n";
    } else {
        std::ofstream(out, std::ios::trunc) << text << "\n";
        std::cout << "lemma1 violations " << lemma.violations << ", theorem1 dpi violations " << theorem.dpi_violations
                  << ", strict counterexamples " << theorem.counterexamples.size() << "\n";
    }
    if (lemma.violations > 0 || theorem.dpi_violations > 0) {
        return code(ExitCode::verification);
    }
    return code(ExitCode::ok);
}

int cmd_inspect(const std::string& ckpt_path, bool as_json) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    ordered_json j;
    j["step"] = ckpt.step;
    j["config_hash"] = hex64(ckpt.config_hash);
    j["sections"] = ordered_json::array();
    for (const auto& s : ckpt.sections) {
        ordered_json e;
        e["name"] = s.name;
        e["shape"] = s.shape;
        j["sections"].push_back(e);
    }
    // Zero-column map: which latent dimensions influence which patch groups.
    std::vector<std::vector<int>> map;
    for (std::size_t g = 0;; ++g) {
        const auto* w = ckpt.find(std::string(kGroupHeadPrefix) + "W." + std::to_string(g));
        if (!w) {
            break;
        }
        const std::size_t d = w->shape.at(0), k = w->shape.at(1);
        std::vector<int> row(k, 0);
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t r = 0; r < d; ++r) {
                if (w->values[r * k + c] != 0.0) {
                    row[c] = 1;
                    break;
                }
            }
        }
        map.push_back(row);
    }
    std::size_t zeros = 0;
    for (const auto& row : map) {
        for (int v : row) {
            zeros += v == 0 ? 1 : 0;
        }
    }
    j["group_head"]["groups"] = map.size();
    j["group_head"]["zero_columns"] = zeros;
    j["group_head"]["influence"] = map;

    if (as_json) {
        std::cout << j.dump(2) << "\n";
        return code(ExitCode::ok);
    }
    std::cout << "step " << ckpt.step << "  config " << hex64(ckpt.config_hash) << "\n";
    for (const auto& s : ckpt.sections) {
        std::cout << "  " << s.name << " " << shape_str(s.shape) << "\n";
    }
    if (!map.empty()) {
        std::cout << "influence map (rows: groups, columns: latents; '#' active, '.' zero column), " << zeros
                  << " zero columns\n";
        for (std::size_t g = 0; g < map.size(); ++g) {
            std::cout << "  g" << g << " ";
            for (int v : map[g]) {
                std::cout << (v ? '#' : '.');
            }
            std::cout << "\n";
        }
    }
    return code(ExitCode::ok);
}

int cmd_export_metrics(const std::string& run, const std::string& format, const std::string& out_path) {
    if (format != "csv" && format != "jsonl") {
        throw ConfigError("export-metrics: format must be csv or jsonl");
    }
    const fs::path dir(run);
    std::ifstream metrics(dir / "metrics.jsonl");
    if (!metrics) {
        throw FormatError("export-metrics: no metrics.jsonl in '" + run + "'");
    }
    std::map<std::size_t, double> wall;
    {
        std::ifstream timing(dir / "timing.jsonl");
        std::string line;
        while (std::getline(timing, line)) {
            if (line.empty()) continue;
            const auto t = nlohmann::json::parse(line);
            wall[t.at("step").get<std::size_t>()] = t.at("wall_time").get<double>();
        }
    }
    const fs::path out = out_path.empty() ? dir / ("metrics_export." + format) : fs::path(out_path);
    std::ofstream os(out, std::ios::trunc);
    static const char* columns[] = {"step", "jepa_loss", "group_recon", "kl", "penalty", "total", "zero_columns"};
    if (format == "csv") {
        os << "step,jepa_loss,group_recon,kl,penalty,total,zero_columns,wall_time\n";
    }
    std::string line;
    std::size_t rows = 0, line_no = 0;
    while (std::getline(metrics, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json m;
        try {
            m = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw FormatError("export-metrics: bad JSON on line " + std::to_string(line_no));
        }
        if (m.contains("event")) {
            continue;
        }
        const auto step = m.at("step").get<std::size_t>();
        const auto it = wall.find(step);
        const double wt = it == wall.end() ? std::nan("") : it->second;
        if (format == "csv") {
            for (const char* c : columns) {
                os << m.at(c).dump() << ',';
            }
            os << (std::isnan(wt) ? std::string() : ordered_json(wt).dump()) << "\n";
        } else {
            ordered_json r;
            for (const char* c : columns) {
                r[c] = m.at(c);
            }
            r["wall_time"] = std::isnan(wt) ? ordered_json(nullptr) : ordered_json(wt);
            os << r.dump() << "\n";
        }
        ++rows;
    }
    std::cout << "wrote " << rows << " rows to " << out.string() << "\n";
    return code(ExitCode::ok);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse joint-embedding predictive pretraining on a tiny vision transformer"};
    app.require_subcommand(1);

    std::string config_path, resume, out, ckpt, dataset, save, run, format = "csv";
    bool force = false, verbose = false, as_json = false;
    std::size_t stop_at = 0, trials = 10000;
    std::uint64_t seed = 0;

    auto* pretrain = app.add_subcommand("pretrain", "Run self-supervised pretraining");
    pretrain->add_option("--config", config_path, "Flat JSON run configuration")->required();
    pretrain->add_option("--resume", resume, "Checkpoint to resume from");
    pretrain->add_flag("--force", force, "Load a checkpoint whose config hash differs");
    pretrain->add_option("--stop-at", stop_at, "Stop after this many total steps (for split runs)");
    pretrain->add_option("--out", out, "Override the output directory");
    pretrain->add_flag("--verbose,-v", verbose, "Print progress to stderr");

    auto* probe = app.add_subcommand("probe", "Linear probe on frozen teacher features");
    probe->add_option("--ckpt", ckpt, "Checkpoint file")->required();
    probe->add_option("--dataset", dataset, "synth-class, synth-count or cifar100 (default: the run's dataset)");
    probe->add_option("--save", save, "Where to write the checkpoint with probe sections");
    probe->add_flag("--force", force, "Ignore a config hash mismatch");

    auto* verify = app.add_subcommand("verify-info", "Check the grouping inequalities by exact enumeration");
    verify->add_option("--trials", trials, "Random trials per suite");
    verify->add_option("--seed", seed, "Root seed");
    verify->add_option("--out", out, "Write the JSON report here instead of stdout");

    auto* inspect = app.add_subcommand("inspect", "Summarize a checkpoint");
    inspect->add_option("--ckpt", ckpt, "Checkpoint file")->required();
    inspect->add_flag("--json", as_json, "Emit JSON");

    auto* export_metrics = app.add_subcommand("export-metrics", "Export a run's metrics with wall time");
    export_metrics->add_option("--run", run, "Run directory")->required();
    export_metrics->add_option("--format", format, "csv or jsonl");
    export_metrics->add_option("--out", out, "Output file (default: <run>/metrics_export.<format>)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : code(ExitCode::config);
    }

    try {
        if (*pretrain) return cmd_pretrain(config_path, resume, force, stop_at, out, verbose);
        if (*probe) return cmd_probe(ckpt, dataset, save, force);
        if (*verify) return cmd_verify_info(trials, seed, out);
        if (*inspect) return cmd_inspect(ckpt, as_json);
        if (*export_metrics) return cmd_export_metrics(run, format, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return code(ExitCode::config);
    } catch (const FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return code(ExitCode::data);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return code(ExitCode::numeric);
    } catch (const VerificationError& e) {
        std::cerr << "verification failed: " << e.what() << "\n";
        return code(ExitCode::verification);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
