#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sjepa/errors.hpp"
#include "sjepa/trainer.hpp"

namespace sjepa {
namespace {

namespace fs = std::filesystem;

/// Small but complete run: 8x8 patch grid, one block, tiny batches.
RunConfig small_config(const std::string& out_dir) {
    RunConfig c;
    c.vit.embed_dim = 16;
    c.vit.depth = 1;
    c.vit.heads = 2;
    c.vit.mlp_ratio = 2.0;
    c.predictor.width = 16;
    c.predictor.depth = 1;
    c.predictor.heads = 2;
    c.predictor.mlp_ratio = 2.0;
    c.loss.latent_dim = 8;
    c.optim.batch_size = 4;
    c.optim.steps = 6;
    c.optim.lr = 1e-3;
    c.dataset.train_size = 10;
    c.dataset.test_size = 4;
    c.seed = 5;
    c.out_dir = out_dir;
    return c;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("sjepa_trainer_test_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TEST(Config, JsonRoundTripAndHash) {
    RunConfig c = small_config("a");
    c.loss.lambda = 0.02;
    c.loss.mode = PenaltyMode::subgradient;
    c.dataset.name = "synth-count";
    const RunConfig back = RunConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
    EXPECT_EQ(back.hash(), c.hash());
    RunConfig moved = c;
    moved.out_dir = "elsewhere";
    EXPECT_EQ(moved.hash(), c.hash());
    RunConfig changed = c;
    changed.seed = 6;
    EXPECT_NE(changed.hash(), c.hash());
}

TEST(Config, PartialDocumentKeepsDefaults) {
    const RunConfig c = RunConfig::from_json(R"({"steps": 12, "lambda": 0.1})");
    EXPECT_EQ(c.optim.steps, 12u);
    EXPECT_EQ(c.loss.lambda, 0.1);
    EXPECT_EQ(c.vit.embed_dim, RunConfig{}.vit.embed_dim);
}

TEST(Config, RejectsBadDocuments) {
    EXPECT_THROW(RunConfig::from_json(R"({"stepz": 3})"), ConfigError);
    EXPECT_THROW(RunConfig::from_json(R"({"steps": "many"})"), ConfigError);
    EXPECT_THROW(RunConfig::from_json(R"({"lr": -1})"), ConfigError);
    EXPECT_THROW(RunConfig::from_json(R"({"dataset": "mnist"})"), ConfigError);
    EXPECT_THROW(RunConfig::from_json("[1, 2]"), ConfigError);
    EXPECT_THROW(RunConfig::from_json("{"), ConfigError);
    EXPECT_THROW(RunConfig::load("/nonexistent/sjepa.json"), ConfigError);
}

TEST(Config, Fnv1aKnownVectors) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

Checkpoint sample_checkpoint() {
    Checkpoint c;
    c.config_hash = 0x1234567890abcdefULL;
    c.step = 42;
    c.config_json = R"({"seed":1})";
    c.put({"student/w", {2, 3}, {1, 2, 3, 4, 5, -6.5}});
    c.put({"probe/bias", {4}, {0.1, 0.2, 0.3, 0.4}});
    return c;
}

TEST(Checkpoint, ByteIdenticalRoundTrip) {
    const Checkpoint c = sample_checkpoint();
    const auto bytes = encode_checkpoint(c);
    const Checkpoint back = decode_checkpoint(bytes);
    EXPECT_EQ(back, c);
    EXPECT_EQ(encode_checkpoint(back), bytes);
    const fs::path p = fresh_dir("ckpt") += ".sjck";
    save_checkpoint(p.string(), c);
    EXPECT_EQ(encode_checkpoint(load_checkpoint(p.string())), bytes);
    fs::remove(p);
}

TEST(Checkpoint, LittleEndianHeader) {
    const auto bytes = encode_checkpoint(sample_checkpoint());
    ASSERT_GT(bytes.size(), 24u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SJCK");
    EXPECT_EQ(bytes[4], 1);  // version
    EXPECT_EQ(bytes[8], 0xef);
    EXPECT_EQ(bytes[15], 0x12);
    EXPECT_EQ(bytes[16], 42);
}

TEST(Checkpoint, RejectsCorruption) {
    const auto bytes = encode_checkpoint(sample_checkpoint());
    for (std::size_t cut = 0; cut < bytes.size(); cut += 7) {
        EXPECT_THROW(decode_checkpoint(std::span<const std::uint8_t>(bytes.data(), cut)), FormatError) << cut;
    }
    auto extra = bytes;
    extra.push_back(0);
    EXPECT_THROW(decode_checkpoint(extra), FormatError);
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(magic), FormatError);
    auto version = bytes;
    version[4] = 9;
    EXPECT_THROW(decode_checkpoint(version), FormatError);
}

TEST(Checkpoint, SectionsAndHashCheck) {
    Checkpoint c = sample_checkpoint();
    EXPECT_TRUE(c.has_prefix("probe/"));
    EXPECT_FALSE(c.has_prefix("teacher/"));
    EXPECT_THROW(c.get("teacher/w"), FormatError);
    c.put({"student/w", {1}, {9.0}});
    EXPECT_EQ(c.get("student/w").values, (std::vector<double>{9.0}));
    EXPECT_THROW(check_config_hash(c, 1, false), ConfigError);
    EXPECT_NO_THROW(check_config_hash(c, 1, true));
    EXPECT_NO_THROW(check_config_hash(c, c.config_hash, false));
}

TEST(Checkpoint, StoreAndRestoreParams) {
    Tensor w = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2}, {5, 6});
    Checkpoint c;
    store_params(c, "m/", {{"w", w}, {"b", b}});
    Tensor w2 = Tensor::zeros({2, 2});
    Tensor b2 = Tensor::zeros({2});
    restore_params(c, "m/", {{"w", w2}, {"b", b2}});
    EXPECT_TRUE(std::equal(w.data().begin(), w.data().end(), w2.data().begin()));
    Tensor wrong = Tensor::zeros({3});
    EXPECT_THROW(restore_params(c, "m/", {{"b", wrong}}), FormatError);
    EXPECT_THROW(restore_params(c, "m/", {{"missing", wrong}}), FormatError);
}

TEST(Sgd, MomentumUpdateRule) {
    Tensor w = Tensor::from({1}, {1.0});
    Sgd opt({{"w", w}}, 0.1, 0.9);
    for (int i = 0; i < 2; ++i) {
        Tape::current().reset();
        w.zero_grad();
        backward(sum(scale(w, 2.0)));  // gradient 2
        opt.step();
    }
    // v1 = 2, w1 = 0.8; v2 = 0.9 * 2 + 2 = 3.8, w2 = 0.8 - 0.38
    EXPECT_NEAR(w[0], 0.42, 1e-15);
    EXPECT_NEAR(opt.buffers()[0].tensor[0], 3.8, 1e-15);
}

TEST(Model, TrainableSetsFollowAblation) {
    RunConfig c = small_config("x");
    const Model m = init_model(c);
    const ParamSet full = m.trainable(c.loss);
    c.loss.group_head = false;
    const ParamSet ablated = m.trainable(c.loss);
    EXPECT_GT(full.size(), ablated.size());
    for (const auto& p : ablated) {
        EXPECT_EQ(p.name.rfind(kGroupHeadPrefix, 0), std::string::npos) << p.name;
    }
}

TEST(Trainer, StepChangesStudentAndTeacherOnly) {
    const RunConfig c = small_config("step");
    const auto splits = load_splits(c.dataset, c.seed);
    Trainer t(c, splits.train);
    const auto before = t.checkpoint();
    const StepMetrics m = t.train_step();
    EXPECT_EQ(m.step, 1u);
    EXPECT_TRUE(std::isfinite(m.total));
    EXPECT_GT(m.jepa, 0.0);
    const auto after = t.checkpoint();
    EXPECT_NE(before.get("student/patch_embed.weight").values, after.get("student/patch_embed.weight").values);
    EXPECT_NE(before.get("teacher/patch_embed.weight").values, after.get("teacher/patch_embed.weight").values);
}

TEST(Trainer, LossDecreasesOnSmallRun) {
    RunConfig c = small_config("smoke");
    c.loss.lambda = 0.0;
    c.optim.steps = 40;
    const auto splits = load_splits(c.dataset, c.seed);
    Trainer t(c, splits.train);
    double first = 0.0, last = 0.0;
    for (std::size_t s = 0; s < c.optim.steps; ++s) {
        const StepMetrics m = t.train_step();
        if (s == 0) {
            first = m.jepa;
        }
        last = m.jepa;
    }
    EXPECT_LT(last, first);
}

TEST(Trainer, AblatedPathTotalEqualsJepa) {
    RunConfig c = small_config("ablate");
    c.loss.lambda = 0.0;
    c.loss.beta = 0.0;
    c.loss.group_head = false;
    const auto splits = load_splits(c.dataset, c.seed);
    Trainer ablated(c, splits.train);
    RunConfig with_head = c;
    with_head.loss.group_head = true;
    Trainer full(with_head, splits.train);
    for (int s = 0; s < 3; ++s) {
        const StepMetrics a = ablated.train_step();
        EXPECT_EQ(a.total, a.jepa);
        EXPECT_EQ(a.group_recon, 0.0);
        EXPECT_EQ(a.kl, 0.0);
        const StepMetrics f = full.train_step();
        if (s == 0) {
            // Same initial encoder and predictor, same batch and masks.
            EXPECT_EQ(a.jepa, f.jepa);
        }
    }
}

TEST(Trainer, ProximalModeProducesExactZeros) {
    RunConfig c = small_config("prox");
    c.loss.lambda = 2000.0;  // threshold lambda * lr = 2 wipes every column
    const auto splits = load_splits(c.dataset, c.seed);
    Trainer t(c, splits.train);
    const StepMetrics m = t.train_step();
    EXPECT_EQ(m.zero_columns, c.loss.groups * c.loss.latent_dim);
}

TEST(Trainer, RestoreRejectsOtherConfig) {
    const RunConfig c = small_config("restore");
    const auto splits = load_splits(c.dataset, c.seed);
    Trainer a(c, splits.train);
    a.train_step();
    const Checkpoint ck = a.checkpoint();
    RunConfig other = c;
    other.seed = 77;
    Trainer b(other, splits.train);
    EXPECT_THROW(b.restore(ck), ConfigError);
    EXPECT_NO_THROW(b.restore(ck, true));
    EXPECT_EQ(b.step(), 1u);
}

TEST(Run, DeterministicMetricsFiles) {
    const fs::path d1 = fresh_dir("det1"), d2 = fresh_dir("det2");
    run_pretrain(small_config(d1.string()));
    run_pretrain(small_config(d2.string()));
    const std::string m1 = slurp(d1 / "metrics.jsonl");
    EXPECT_FALSE(m1.empty());
    EXPECT_EQ(m1, slurp(d2 / "metrics.jsonl"));
    EXPECT_TRUE(fs::exists(d1 / "final.sjck"));
    EXPECT_TRUE(fs::exists(d1 / "timing.jsonl"));
    EXPECT_TRUE(fs::exists(d1 / "config.json"));
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST(Run, ResumeReproducesUninterruptedRun) {
    const fs::path whole = fresh_dir("whole"), split = fresh_dir("split");
    run_pretrain(small_config(whole.string()));
    RunOptions first;
    first.stop_at = 4;  // mid-epoch: 10 images in batches of 4 give 3 batches per epoch
    const RunResult partial = run_pretrain(small_config(split.string()), first);
    EXPECT_EQ(partial.metrics.size(), 4u);
    EXPECT_FALSE(fs::exists(split / "final.sjck"));
    RunOptions resume;
    resume.resume = (split / "checkpoint.sjck").string();
    run_pretrain(small_config(split.string()), resume);
    EXPECT_EQ(slurp(whole / "metrics.jsonl"), slurp(split / "metrics.jsonl"));
    EXPECT_EQ(encode_checkpoint(load_checkpoint((whole / "final.sjck").string())),
              encode_checkpoint(load_checkpoint((split / "final.sjck").string())));
    fs::remove_all(whole);
    fs::remove_all(split);
}

TEST(Run, NonFiniteLossAbortsWithLastGoodCheckpoint) {
    RunConfig c = small_config(fresh_dir("abort").string());
    c.optim.lr = 1e200;
    const RunResult r = run_pretrain(c);
    EXPECT_TRUE(r.aborted);
    EXPECT_FALSE(r.abort_reason.empty());
    EXPECT_TRUE(fs::exists(fs::path(c.out_dir) / "last_good.sjck"));
    const Checkpoint good = load_checkpoint((fs::path(c.out_dir) / "last_good.sjck").string());
    EXPECT_EQ(good.step, r.metrics.size());
    fs::remove_all(c.out_dir);
}

TEST(Splits, SyntheticSplitsShareTrainStats) {
    const RunConfig c = small_config("splits");
    const auto s = load_splits(c.dataset, c.seed);
    EXPECT_EQ(s.train.size(), 10u);
    EXPECT_EQ(s.test.size(), 4u);
    EXPECT_EQ(s.test.stats.mean, s.train.stats.mean);
    EXPECT_NE(s.train.records[0], s.test.records[0]);
}

TEST(Splits, MissingCifarDirectoryIsFormatError) {
    DatasetConfig ds;
    ds.name = "cifar100";
    ds.path = "/nonexistent/cifar";
    EXPECT_THROW(load_splits(ds, 0), FormatError);
}

}  // namespace
}  // namespace sjepa
