#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace {

namespace fs = std::filesystem;

const fs::path kWork = fs::temp_directory_path() / "sjepa_cli_test";

int run(const std::string& args, std::string* output = nullptr) {
    const fs::path out = kWork / "stdout.txt";
    const std::string cmd = std::string(SJEPA_CLI_PATH) + " " + args + " > " + out.string() + " 2> " +
                            (kWork / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    if (output) {
        std::ifstream in(out);
        std::stringstream ss;
        ss << in.rdbuf();
        *output = ss.str();
    }
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
        // One tiny run shared by the checkpoint-consuming tests.
        write(kWork / "tiny.json", R"({"embed_dim": 16, "depth": 1, "heads": 2, "mlp_ratio": 2.0,
            "predictor_width": 16, "predictor_depth": 1, "predictor_heads": 2, "latent_dim": 8,
            "batch_size": 4, "steps": 3, "lr": 0.001, "train_size": 8, "test_size": 8,
            "probe_epochs": 20, "seed": 3})");
        ASSERT_EQ(run("pretrain --config " + (kWork / "tiny.json").string() + " --out " + (kWork / "run").string()), 0);
    }
};

TEST_F(Cli, PretrainWritesArtifacts) {
    for (const char* f : {"config.json", "metrics.jsonl", "timing.jsonl", "checkpoint.sjck", "final.sjck"}) {
        EXPECT_TRUE(fs::exists(kWork / "run" / f)) << f;
    }
}

TEST_F(Cli, InspectShowsSectionsAndInfluenceMap) {
    std::string out;
    ASSERT_EQ(run("inspect --ckpt " + (kWork / "run" / "final.sjck").string() + " --json", &out), 0);
    const auto j = nlohmann::json::parse(out);
    EXPECT_EQ(j.at("step"), 3);
    EXPECT_TRUE(j.contains("sections"));
    EXPECT_TRUE(j.at("group_head").contains("influence"));
    ASSERT_EQ(run("inspect --ckpt " + (kWork / "run" / "final.sjck").string(), &out), 0);
    EXPECT_NE(out.find("teacher/"), std::string::npos);
}

TEST_F(Cli, ProbeReportsAccuraciesAndStoresSections) {
    std::string out;
    const fs::path saved = kWork / "probed.sjck";
    ASSERT_EQ(run("probe --ckpt " + (kWork / "run" / "final.sjck").string() + " --dataset synth-count --save " +
                      saved.string(),
                  &out),
              0);
    const auto j = nlohmann::json::parse(out);
    EXPECT_EQ(j.at("dataset"), "synth-count");
    EXPECT_GE(j.at("test_top1").get<double>(), 0.0);
    EXPECT_LE(j.at("train_top1").get<double>(), 1.0);
    ASSERT_EQ(run("inspect --ckpt " + saved.string(), &out), 0);
    EXPECT_NE(out.find("probe/weight"), std::string::npos);
}

TEST_F(Cli, ExportMetricsCsv) {
    const fs::path csv = kWork / "metrics.csv";
    ASSERT_EQ(run("export-metrics --run " + (kWork / "run").string() + " --format csv --out " + csv.string()), 0);
    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "step,jepa_loss,group_recon,kl,penalty,total,zero_columns,wall_time");
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) {
        ++rows;
    }
    EXPECT_EQ(rows, 3u);
}

TEST_F(Cli, VerifyInfoSucceeds) {
    std::string out;
    ASSERT_EQ(run("verify-info --trials 50 --seed 1", &out), 0);
    const auto j = nlohmann::json::parse(out);
    EXPECT_EQ(j.at("lemma1").at("violations"), 0);
    EXPECT_FALSE(j.at("theorem1").at("counterexamples").empty());
}

TEST_F(Cli, ExitCodes) {
    write(kWork / "bad.json", R"({"nonsense": 1})");
    EXPECT_EQ(run("pretrain --config " + (kWork / "bad.json").string()), 2);
    EXPECT_EQ(run("pretrain"), 2);
    write(kWork / "garbage.sjck", "not a checkpoint");
    EXPECT_EQ(run("inspect --ckpt " + (kWork / "garbage.sjck").string()), 3);
    EXPECT_EQ(run("probe --ckpt " + (kWork / "missing.sjck").string()), 3);
    // Resuming under a different config is rejected unless forced.
    write(kWork / "other.json", R"({"embed_dim": 16, "depth": 1, "heads": 2, "mlp_ratio": 2.0,
        "predictor_width": 16, "predictor_depth": 1, "predictor_heads": 2, "latent_dim": 8,
        "batch_size": 4, "steps": 4, "lr": 0.001, "train_size": 8, "test_size": 8, "seed": 4})");
    const std::string resume = " --resume " + (kWork / "run" / "final.sjck").string() + " --out " +
                               (kWork / "other").string();
    EXPECT_EQ(run("pretrain --config " + (kWork / "other.json").string() + resume), 2);
    EXPECT_EQ(run("pretrain --config " + (kWork / "other.json").string() + resume + " --force"), 0);
    write(kWork / "diverge.json", R"({"embed_dim": 16, "depth": 1, "heads": 2, "mlp_ratio": 2.0,
        "predictor_width": 16, "predictor_depth": 1, "predictor_heads": 2, "latent_dim": 8,
        "batch_size": 4, "steps": 6, "lr": 1e200, "train_size": 8, "test_size": 8})");
    EXPECT_EQ(run("pretrain --config " + (kWork / "diverge.json").string() + " --out " + (kWork / "div").string()), 4);
    EXPECT_TRUE(fs::exists(kWork / "div" / "last_good.sjck"));
}

}  // namespace
