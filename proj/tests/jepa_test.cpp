#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "sjepa/errors.hpp"
#include "test_util.hpp"

namespace sjepa {
namespace {

using test::random_tensor;

TEST(Masks, BlockSizesWithinScaleBounds) {
    const PatchGrid grid{8, 8};
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(seed);
        const MaskSpec m = sample_masks(grid, rng);
        ASSERT_EQ(m.targets.size(), 4u);
        for (const auto& block : m.targets) {
            EXPECT_GE(block.size(), 9u) << "seed " << seed;
            EXPECT_LE(block.size(), 12u) << "seed " << seed;
        }
    }
}

TEST(Masks, InvariantsOverManySeeds) {
    const PatchGrid grid{8, 8};
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
        Rng rng(seed);
        const MaskSpec m = sample_masks(grid, rng);
        ASSERT_NO_THROW(m.validate()) << "seed " << seed;
        ASSERT_FALSE(m.context.empty());
        std::set<std::size_t> targets;
        for (const auto& block : m.targets) {
            targets.insert(block.begin(), block.end());
            // Blocks are rectangles listed row-major.
            std::size_t r0 = block.front() / 8, c0 = block.front() % 8;
            std::size_t r1 = block.back() / 8, c1 = block.back() % 8;
            ASSERT_EQ(block.size(), (r1 - r0 + 1) * (c1 - c0 + 1));
            ASSERT_TRUE(std::is_sorted(block.begin(), block.end()));
        }
        ASSERT_TRUE(std::is_sorted(m.context.begin(), m.context.end()));
        for (std::size_t c : m.context) {
            ASSERT_EQ(targets.count(c), 0u) << "seed " << seed;
            ASSERT_LT(c, 64u);
        }
    }
}

TEST(Masks, SameSeedSameSpec) {
    Rng a(42), b(42);
    EXPECT_EQ(sample_masks({8, 8}, a), sample_masks({8, 8}, b));
}

TEST(Masks, ValidateRejectsOverlap) {
    MaskSpec m{{2, 2}, {0, 1}, {{1}}};
    EXPECT_THROW(m.validate(), ContractError);
    MaskSpec empty{{2, 2}, {0}, {}};
    EXPECT_THROW(empty.validate(), ContractError);
}

TEST(Masks, ParamsValidate) {
    MaskParams p;
    p.target_scale = {0.3, 0.2};
    EXPECT_THROW(p.validate(), ConfigError);
}

struct Fixture {
    ViTConfig cfg = test::toy_vit();
    PredictorConfig pcfg = test::toy_predictor();
    ViTParams student, teacher;
    PredictorParams predictor;
    Tensor image;
    MaskSpec mask{{2, 2}, {0, 3}, {{1}, {2}}};

    explicit Fixture(std::uint64_t seed) {
        Rng rng(seed);
        student = init_vit(cfg, rng);
        teacher = init_vit(cfg, rng);
        predictor = init_predictor(cfg.embed_dim, pcfg, rng);
        test::perturb(student.named(), rng, 0.3);
        test::perturb(teacher.named(), rng, 0.3);
        test::perturb(predictor.named(), rng, 0.3);
        image = random_tensor({3, 8, 8}, rng);
    }
};

TEST(Targets, RowsEqualFullEncoding) {
    Fixture f(1);
    const auto t = encode_targets(f.image, f.cfg, f.teacher, f.mask);
    const Tensor full = encode(f.image, f.cfg, f.teacher);
    ASSERT_EQ(t.blocks.size(), 2u);
    for (std::size_t b = 0; b < 2; ++b) {
        const std::size_t row = f.mask.targets[b][0];
        for (std::size_t k = 0; k < f.cfg.embed_dim; ++k) {
            EXPECT_EQ(t.blocks[b].at(0, k), full.at(row, k));
            EXPECT_EQ(t.full.at(row, k), full.at(row, k));
        }
    }
}

TEST(Targets, TeacherReceivesNoGradient) {
    Fixture f(2);
    const ParamSet teacher = f.teacher.named();
    for (auto p : teacher) {
        p.tensor.set_requires_grad(true);  // marked on purpose: the encode itself must not record
    }
    ParamSet student = f.student.named();
    for (auto& p : student) {
        p.tensor.set_requires_grad(true);
    }
    Tape::current().reset();
    const auto t = encode_targets(f.image, f.cfg, f.teacher, f.mask);
    const Tensor ctx = encode_context(f.image, f.cfg, f.student, f.mask);
    backward(jepa_loss(predict_targets(ctx, f.mask, f.predictor, f.pcfg), t.blocks, f.mask));
    for (const auto& p : teacher) {
        EXPECT_FALSE(p.tensor.has_grad()) << p.name;
    }
    EXPECT_TRUE(student.front().tensor.has_grad());
}

TEST(Targets, ContextPixelChangesTargetEmbedding) {
    Fixture f(3);
    const auto before = encode_targets(f.image, f.cfg, f.teacher, f.mask);
    // Patch 0 (a context patch) covers pixels rows 0..3, cols 0..3.
    Tensor changed = Tensor::from(f.image.shape(), {f.image.data().begin(), f.image.data().end()});
    changed.mutable_data()[0] += 0.5;
    const auto after = encode_targets(changed, f.cfg, f.teacher, f.mask);
    double diff = 0.0;
    for (std::size_t k = 0; k < f.cfg.embed_dim; ++k) {
        diff = std::max(diff, std::abs(before.blocks[0].at(0, k) - after.blocks[0].at(0, k)));
    }
    EXPECT_GT(diff, 1e-9);
}

TEST(Predictor, OutputShapes) {
    ViTConfig cfg;
    PredictorConfig pcfg;
    Rng rng(4);
    ViTParams student = init_vit(cfg, rng);
    PredictorParams pred = init_predictor(cfg.embed_dim, pcfg, rng);
    const MaskSpec mask = sample_masks(cfg.grid(), rng);
    const Tensor img = random_tensor({3, 32, 32}, rng);
    const Tensor ctx = encode_context(img, cfg, student, mask);
    EXPECT_EQ(ctx.shape(), (Shape{mask.context.size(), cfg.embed_dim}));
    const auto preds = predict_targets(ctx, mask, pred, pcfg);
    ASSERT_EQ(preds.size(), mask.targets.size());
    std::size_t rows = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        EXPECT_EQ(preds[i].shape(), (Shape{mask.targets[i].size(), cfg.embed_dim}));
        rows += preds[i].dim(0);
    }
    EXPECT_EQ(rows, mask.total_target_patches());
}

TEST(Predictor, DistinctPositionsDistinctPredictions) {
    Fixture f(5);
    const MaskSpec mask{{2, 2}, {0}, {{1, 3}}};
    const Tensor ctx = encode_context(f.image, f.cfg, f.student, mask);
    const auto preds = predict_targets(ctx, mask, f.predictor, f.pcfg);
    double diff = 0.0;
    for (std::size_t k = 0; k < f.cfg.embed_dim; ++k) {
        diff = std::max(diff, std::abs(preds[0].at(0, k) - preds[0].at(1, k)));
    }
    EXPECT_GT(diff, 1e-6);
}

TEST(JepaLoss, ZeroWhenPredictionsMatch) {
    Rng rng(6);
    const MaskSpec mask{{2, 2}, {0}, {{1, 3}, {2}}};
    std::vector<Tensor> t{random_tensor({2, 4}, rng), random_tensor({1, 4}, rng)};
    EXPECT_EQ(jepa_loss(t, t, mask).item(), 0.0);
}

TEST(JepaLoss, SinglePatchThreeFour) {
    const MaskSpec mask{{2, 2}, {0}, {{1}}};
    Tensor pred = Tensor::from({1, 2}, {3.0, 4.0});
    Tensor target = Tensor::zeros({1, 2});
    EXPECT_EQ(jepa_loss({pred}, {target}, mask).item(), 25.0);
}

TEST(JepaLoss, AveragesOverBlocksNotPatches) {
    // Squared distances 1 and 2 in the first block, 3 in the second.
    const MaskSpec mask{{2, 2}, {0}, {{1, 2}, {3}}};
    Tensor q1 = Tensor::from({2, 3}, {1.0, 0.0, 0.0, 1.0, 1.0, 0.0});
    Tensor q2 = Tensor::from({1, 3}, {1.0, 1.0, 1.0});
    EXPECT_DOUBLE_EQ(jepa_loss({q1, q2}, {Tensor::zeros({2, 3}), Tensor::zeros({1, 3})}, mask).item(), 3.0);
}

TEST(JepaLoss, NonNegativeAndPermutationInvariant) {
    Rng rng(7);
    const MaskSpec mask{{2, 2}, {0}, {{1, 2, 3}}};
    for (int trial = 0; trial < 50; ++trial) {
        Tensor p = random_tensor({3, 5}, rng);
        Tensor t = random_tensor({3, 5}, rng);
        const double base = jepa_loss({p}, {t}, mask).item();
        EXPECT_GT(base, 0.0);
        const std::vector<std::size_t> perm{2, 0, 1};
        const double permuted = jepa_loss({gather_rows(p, perm)}, {gather_rows(t, perm)}, mask).item();
        EXPECT_NEAR(permuted, base, 1e-12);
    }
}

TEST(JepaLoss, RejectsShapeMismatch) {
    const MaskSpec mask{{2, 2}, {0}, {{1}}};
    EXPECT_THROW(jepa_loss({Tensor::zeros({1, 2})}, {Tensor::zeros({1, 3})}, mask), ContractError);
    EXPECT_THROW(jepa_loss({Tensor::zeros({1, 2})}, {}, mask), ContractError);
}

TEST(JepaLoss, SmallSgdStepDecreasesLoss) {
    Fixture f(8);
    ParamSet params = with_prefix("s.", f.student.named());
    append(params, with_prefix("p.", f.predictor.named()));
    for (auto& p : params) {
        p.tensor.set_requires_grad(true);
    }
    const auto targets = encode_targets(f.image, f.cfg, f.teacher, f.mask);
    auto loss = [&] {
        const Tensor ctx = encode_context(f.image, f.cfg, f.student, f.mask);
        return jepa_loss(predict_targets(ctx, f.mask, f.predictor, f.pcfg), targets.blocks, f.mask);
    };
    Tape::current().reset();
    zero_grads(params);
    const Tensor l0 = loss();
    const double before = l0.item();
    backward(l0);
    std::vector<std::vector<double>> saved, grads;
    for (const auto& p : params) {
        saved.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
        grads.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
    }
    bool decreased = false;
    for (double lr = 1e-3; lr > 1e-9 && !decreased; lr *= 0.5) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto w = params[i].tensor.mutable_data();
            for (std::size_t j = 0; j < w.size(); ++j) {
                w[j] = saved[i][j] - lr * grads[i][j];
            }
        }
        NoGradGuard guard;
        decreased = loss().item() < before;
    }
    EXPECT_TRUE(decreased);
}

TEST(Ema, MomentumOneKeepsTeacher) {
    Rng rng(9);
    EncoderPair pair{init_vit(test::toy_vit(), rng), init_vit(test::toy_vit(), rng), 1.0};
    const ParamSet t = pair.teacher.named();
    std::vector<double> before(t[0].tensor.data().begin(), t[0].tensor.data().end());
    ema_update(pair);
    EXPECT_TRUE(std::equal(before.begin(), before.end(), t[0].tensor.data().begin()));
}

TEST(Ema, MomentumZeroCopiesStudent) {
    Rng rng(10);
    EncoderPair pair{init_vit(test::toy_vit(), rng), init_vit(test::toy_vit(), rng), 0.0};
    ema_update(pair);
    const ParamSet s = pair.student.named();
    const ParamSet t = pair.teacher.named();
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_TRUE(std::equal(s[i].tensor.data().begin(), s[i].tensor.data().end(), t[i].tensor.data().begin()));
    }
}

TEST(Ema, ClosedForm) {
    Tensor teacher = Tensor::zeros({3});
    Tensor student = Tensor::full({3}, 1.0);
    ema_update({{"w", teacher}}, {{"w", student}}, 0.9);
    for (double v : teacher.data()) {
        EXPECT_NEAR(v, 0.1, 1e-15);
    }
}

TEST(Ema, RejectsMismatchedSets) {
    Tensor a = Tensor::zeros({3});
    Tensor b = Tensor::zeros({4});
    EXPECT_THROW(ema_update({{"w", a}}, {{"w", b}}, 0.5), DimensionError);
}

}  // namespace
}  // namespace sjepa
