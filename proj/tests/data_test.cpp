#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "sjepa/data.hpp"
#include "sjepa/errors.hpp"
#include "sjepa/rng.hpp"

namespace sjepa::data {
namespace {

std::vector<Record> random_records(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Record> out(n);
    for (auto& r : out) {
        r.coarse = static_cast<std::uint8_t>(uniform_index(rng, 20));
        r.label = static_cast<std::uint8_t>(uniform_index(rng, 100));
        for (auto& p : r.pixels) {
            p = static_cast<std::uint8_t>(uniform_index(rng, 256));
        }
    }
    return out;
}

TEST(Cifar, AllZeroRecordIsBlackWithZeroLabels) {
    const std::vector<std::uint8_t> bytes(kCifarRecordBytes, 0);
    const Dataset d = parse_cifar100(bytes, Source::cifar100_train);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d.records[0].coarse, 0);
    EXPECT_EQ(d.label(0), 0u);
    const Tensor img = d.raw_image(0);
    EXPECT_EQ(img.shape(), (Shape{3, 32, 32}));
    for (double v : img.data()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Cifar, LayoutIsCoarseFinePlanes) {
    std::vector<std::uint8_t> bytes(kCifarRecordBytes, 0);
    bytes[0] = 7;
    bytes[1] = 42;
    bytes[2 + 1024 * 2 + 5 * 32 + 9] = 255;  // blue plane, row 5, column 9
    const Dataset d = parse_cifar100(bytes, Source::cifar100_test);
    EXPECT_EQ(d.records[0].coarse, 7);
    EXPECT_EQ(d.label(0), 42u);
    EXPECT_EQ(d.raw_image(0)[(2 * 32 + 5) * 32 + 9], 1.0);
    EXPECT_EQ(d.num_classes, 100u);
}

TEST(Cifar, RoundTripIsByteIdentical) {
    const auto records = random_records(25, 1);
    const auto bytes = serialize_cifar100(records);
    EXPECT_EQ(bytes.size(), 25 * kCifarRecordBytes);
    const Dataset d = parse_cifar100(bytes, Source::cifar100_train, 25);
    EXPECT_EQ(d.records, records);
    EXPECT_EQ(serialize_cifar100(d.records), bytes);
}

TEST(Cifar, RejectsEveryTruncation) {
    const auto bytes = serialize_cifar100(random_records(4, 2));
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        const std::size_t cut = 1 + uniform_index(rng, bytes.size() - 1);
        const std::span<const std::uint8_t> prefix(bytes.data(), cut);
        EXPECT_THROW(parse_cifar100(prefix, Source::cifar100_train, 4), FormatError) << "cut at " << cut;
    }
}

TEST(Cifar, PartialRecordNamesOffset) {
    const auto bytes = serialize_cifar100(random_records(2, 4));
    const std::span<const std::uint8_t> prefix(bytes.data(), kCifarRecordBytes + 10);
    try {
        parse_cifar100(prefix, Source::cifar100_train);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(std::to_string(kCifarRecordBytes)), std::string::npos) << e.what();
    }
}

TEST(Cifar, RejectsOutOfRangeLabels) {
    std::vector<std::uint8_t> bytes(kCifarRecordBytes, 0);
    bytes[0] = 20;
    EXPECT_THROW(parse_cifar100(bytes, Source::cifar100_train), FormatError);
    bytes[0] = 0;
    bytes[1] = 100;
    EXPECT_THROW(parse_cifar100(bytes, Source::cifar100_train), FormatError);
}

TEST(Cifar, RejectsWrongRecordCount) {
    const auto bytes = serialize_cifar100(random_records(3, 5));
    EXPECT_THROW(parse_cifar100(bytes, Source::cifar100_train, 4), FormatError);
}

TEST(Cifar, FileRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "sjepa_data_test_cifar.bin";
    const auto records = random_records(3, 6);
    write_file(path.string(), serialize_cifar100(records));
    EXPECT_EQ(load_cifar100(path.string(), Source::cifar100_train).records, records);
    std::filesystem::remove(path);
    EXPECT_THROW(load_cifar100(path.string(), Source::cifar100_train), FormatError);
}

TEST(Synth, CountOfThreeDiscsIsTwo) {
    std::vector<SceneObject> scene;
    for (std::size_t i = 0; i < 3; ++i) {
        scene.push_back(SceneObject{ShapeKind::filled_disc, 2, 2 + 10 * i, 8, 8, false, {200, 100, 90}});
    }
    EXPECT_EQ(render_scene(scene, SynthTask::count, 8).label, 2);
    EXPECT_EQ(render_scene(scene, SynthTask::classify, 8).label, static_cast<std::uint8_t>(ShapeKind::filled_disc));
}

TEST(Synth, ClassLabelIsKindOfLargestObject) {
    std::vector<SceneObject> scene{
        SceneObject{ShapeKind::ring, 0, 0, 6, 6, false, {255, 255, 255}},
        SceneObject{ShapeKind::outlined_rect, 10, 10, 18, 12, true, {120, 90, 200}},
    };
    EXPECT_EQ(render_scene(scene, SynthTask::classify, 8).label, static_cast<std::uint8_t>(ShapeKind::outlined_rect));
}

TEST(Synth, ScenesAreValid) {
    for (SynthTask task : {SynthTask::classify, SynthTask::count}) {
        const SceneParams params = scene_params(task);
        for (std::uint64_t seed = 0; seed < 2000; ++seed) {
            const auto scene = sample_scene(seed, params);
            ASSERT_GE(scene.size(), 1u);
            ASSERT_LE(scene.size(), kMaxObjects);
            for (std::size_t i = 0; i < scene.size(); ++i) {
                const auto& a = scene[i];
                ASSERT_LE(a.top + a.side, kImageSide);
                ASSERT_LE(a.left + a.side, kImageSide);
                if (i > 0) {
                    ASSERT_LT(a.side, scene[0].side) << "largest object must be unique";
                }
                for (std::size_t j = i + 1; j < scene.size(); ++j) {
                    const auto& b = scene[j];
                    const bool overlap = a.top < b.top + b.side && b.top < a.top + a.side &&
                                         a.left < b.left + b.side && b.left < a.left + a.side;
                    ASSERT_FALSE(overlap) << "seed " << seed;
                }
            }
        }
    }
}

TEST(Synth, SameSeedIsByteIdentical) {
    const Dataset a = synth_shapes(50, SynthTask::classify, 9);
    const Dataset b = synth_shapes(50, SynthTask::classify, 9);
    EXPECT_EQ(encode_synth(a), encode_synth(b));
    const Dataset c = synth_shapes(50, SynthTask::classify, 10);
    EXPECT_NE(encode_synth(a), encode_synth(c));
}

TEST(Synth, ClassBalanceNearUniform) {
    for (SynthTask task : {SynthTask::classify, SynthTask::count}) {
        const Dataset d = synth_shapes(6000, task, 11);
        std::map<std::size_t, std::size_t> tally;
        for (std::size_t i = 0; i < d.size(); ++i) {
            ++tally[d.label(i)];
        }
        ASSERT_EQ(tally.size(), d.num_classes);
        // Frequencies within five points of uniform, and a chi-square
        // goodness-of-fit statistic below its 0.999 quantile.
        const double expected = 6000.0 / double(d.num_classes);
        double chi2 = 0.0;
        for (const auto& [label, n] : tally) {
            EXPECT_LE(std::abs(double(n) / 6000.0 - 1.0 / double(d.num_classes)), 0.05) << "label " << label;
            chi2 += (double(n) - expected) * (double(n) - expected) / expected;
        }
        const double quantile = d.num_classes == 4 ? 16.266 : 20.515;  // df 3 and 5
        EXPECT_LT(chi2, quantile);
    }
}

TEST(Synth, PixelsStayInUnitRange) {
    const Dataset d = synth_shapes(20, SynthTask::count, 12);
    for (std::size_t i = 0; i < d.size(); ++i) {
        for (double v : d.raw_image(i).data()) {
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 1.0);
        }
    }
}

TEST(Synth, CacheRoundTripAndCorruption) {
    const Dataset d = synth_shapes(5, SynthTask::count, 13);
    auto bytes = encode_synth(d);
    const Dataset back = decode_synth(bytes);
    EXPECT_EQ(back.records, d.records);
    EXPECT_EQ(back.source, Source::synth_count);
    EXPECT_THROW(decode_synth(std::span<const std::uint8_t>(bytes.data(), bytes.size() - 1)), FormatError);
    bytes[0] = 'X';
    EXPECT_THROW(decode_synth(bytes), FormatError);
    EXPECT_THROW(synth_shapes(0, SynthTask::count, 1), ContractError);
}

TEST(Normalization, TrainSplitIsStandardized) {
    const Dataset d = synth_shapes(300, SynthTask::classify, 14);
    std::array<double, 3> sum{}, sq{};
    std::size_t n = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const Tensor img = d.image(i);
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t p = 0; p < 1024; ++p) {
                const double v = img[c * 1024 + p];
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        n += 1024;
    }
    for (std::size_t c = 0; c < 3; ++c) {
        const double mean = sum[c] / double(n);
        const double var = sq[c] / double(n) - mean * mean;
        EXPECT_LT(std::abs(mean), 1e-6);
        EXPECT_NEAR(std::sqrt(var), 1.0, 1e-6);
    }
}

TEST(Batches, PartialFinalBatchKept) {
    const Dataset d = synth_shapes(10, SynthTask::count, 15);
    BatchIterator it(d, 4, 1);
    EXPECT_EQ(it.batches_per_epoch(), 3u);
    const auto plan = it.epoch_plan(0);
    ASSERT_EQ(plan.size(), 3u);
    EXPECT_EQ(plan[0].size(), 4u);
    EXPECT_EQ(plan[1].size(), 4u);
    EXPECT_EQ(plan[2].size(), 2u);
}

TEST(Batches, SameSeedSameOrderAndEachIndexOnce) {
    const Dataset d = synth_shapes(37, SynthTask::count, 16);
    BatchIterator a(d, 5, 99), b(d, 5, 99), c(d, 5, 100);
    EXPECT_EQ(a.epoch_plan(3), b.epoch_plan(3));
    EXPECT_NE(a.epoch_plan(3), c.epoch_plan(3));
    EXPECT_NE(a.epoch_plan(0), a.epoch_plan(1));
    for (std::size_t epoch = 0; epoch < 5; ++epoch) {
        std::vector<std::size_t> all;
        for (const auto& batch : a.epoch_plan(epoch)) {
            all.insert(all.end(), batch.begin(), batch.end());
        }
        std::sort(all.begin(), all.end());
        for (std::size_t i = 0; i < all.size(); ++i) {
            ASSERT_EQ(all[i], i);
        }
        ASSERT_EQ(all.size(), d.size());
    }
}

TEST(Batches, BatchCarriesNormalizedImagesAndLabels) {
    const Dataset d = synth_shapes(9, SynthTask::classify, 17);
    BatchIterator it(d, 4, 2);
    const ImageBatch batch = it.batch(1, 2);
    ASSERT_EQ(batch.indices.size(), 1u);
    const std::size_t idx = batch.indices[0];
    EXPECT_EQ(batch.labels[0], d.label(idx));
    const Tensor expect = d.image(idx);
    EXPECT_TRUE(std::equal(expect.data().begin(), expect.data().end(), batch.images[0].data().begin()));
    EXPECT_THROW(it.batch(0, 3), ContractError);
    EXPECT_THROW(BatchIterator(d, 0, 1), ContractError);
}

}  // namespace
}  // namespace sjepa::data
