#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sjepa/tensor.hpp"

namespace sjepa::data {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kPixelBytes = kChannels * kImageSide * kImageSide;  // 3072
inline constexpr std::size_t kCifarRecordBytes = 2 + kPixelBytes;               // 3074
inline constexpr std::size_t kCifarTrainRecords = 50000;
inline constexpr std::size_t kCifarTestRecords = 10000;
inline constexpr std::size_t kSynthHeaderBytes = 16;
inline constexpr std::uint32_t kSynthVersion = 1;

enum class Source { cifar100_train, cifar100_test, synth_class, synth_count };

std::string to_string(Source s);

/// One image as stored on disk: three row-major 32x32 planes (R, G, B).
struct Record {
    std::uint8_t label = 0;   // fine label for CIFAR-100, task label for synthetic data
    std::uint8_t coarse = 0;  // CIFAR-100 coarse label; 0 for synthetic data
    std::array<std::uint8_t, kPixelBytes> pixels{};

    bool operator==(const Record&) const = default;
};

/// Per-channel standardization statistics over pixel values in [0, 1].
struct Normalization {
    std::array<double, kChannels> mean{0.0, 0.0, 0.0};
    std::array<double, kChannels> std{1.0, 1.0, 1.0};
};

struct Dataset {
    Source source = Source::synth_class;
    std::size_t num_classes = 0;
    std::vector<Record> records;
    /// Always the statistics of the corresponding train split.
    Normalization stats;

    std::size_t size() const { return records.size(); }
    std::size_t label(std::size_t i) const { return records.at(i).label; }

    /// [3, 32, 32] with pixel byte b mapped to b / 255.
    Tensor raw_image(std::size_t i) const;
    /// raw_image standardized with `stats`.
    Tensor image(std::size_t i) const;
};

Normalization compute_stats(const Dataset& train);

/// Parses the CIFAR-100 binary layout: records of 3074 bytes, coarse label,
/// fine label, then 3072 pixel bytes. Throws FormatError on a length that is
/// not a whole number of records (or differs from `expected_records`) and on
/// out-of-range labels, naming the offending byte offset.
Dataset parse_cifar100(std::span<const std::uint8_t> bytes, Source source,
                       std::optional<std::size_t> expected_records = std::nullopt);
Dataset load_cifar100(const std::string& path, Source source,
                      std::optional<std::size_t> expected_records = std::nullopt);
std::vector<std::uint8_t> serialize_cifar100(std::span<const Record> records);

enum class SynthTask : std::uint32_t { classify = 0, count = 1 };

/// Shape kinds used by the classification task.
enum class ShapeKind : std::uint8_t { filled_rect = 0, outlined_rect = 1, filled_disc = 2, ring = 3 };

inline constexpr std::size_t kMaxObjects = 6;

/// Scene geometry. The first object's bounding-box side is drawn from the
/// large range and the others from the small range; when the ranges do not
/// overlap the largest object is unique by construction, otherwise ties with
/// the first side are redrawn.
struct SceneParams {
    std::size_t large_min, large_max;
    std::size_t small_min, small_max;
    double rect_extent_min, rect_extent_max;  // short side / long side of rectangles
    std::size_t border_divisor;               // outline thickness = max(1, side / divisor)
};

/// The class task uses one dominant object; the count task uses comparable sizes.
SceneParams scene_params(SynthTask task);

struct SceneObject {
    ShapeKind kind;
    std::size_t top, left, side;  // square bounding box
    std::size_t rect_extent;      // short side of rectangles, equals side for discs
    bool tall;                    // rectangle orientation
    std::array<std::uint8_t, kChannels> color;
};

/// Random scene of 1..6 non-overlapping objects, the largest one first.
/// Deterministic in `seed`.
std::vector<SceneObject> sample_scene(std::uint64_t seed, const SceneParams& params);
Record render_scene(const std::vector<SceneObject>& objects, SynthTask task, std::size_t border_divisor);

/// n synthetic 32x32 scenes; task=classify labels the kind of the largest
/// object (4 classes), task=count labels object count - 1 (6 classes).
Dataset synth_shapes(std::size_t n, SynthTask task, std::uint64_t seed);

/// Cache format: "SJPD", u32 version, u32 n, u32 task id (little-endian),
/// then n records of 1 label byte + 3072 pixel bytes.
std::vector<std::uint8_t> encode_synth(const Dataset& d);
Dataset decode_synth(std::span<const std::uint8_t> bytes);
void save_synth(const std::string& path, const Dataset& d);
Dataset load_synth(const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

struct ImageBatch {
    std::vector<std::size_t> indices;
    std::vector<Tensor> images;  // normalized [3, 32, 32]
    std::vector<std::size_t> labels;
};

/// Seeded epoch-wise batching. Each epoch is a fresh permutation derived from
/// (seed, epoch); the final partial batch is kept.
class BatchIterator {
public:
    BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed);

    std::size_t batches_per_epoch() const;
    std::vector<std::vector<std::size_t>> epoch_plan(std::size_t epoch) const;
    ImageBatch batch(std::size_t epoch, std::size_t index) const;

private:
    const Dataset* data_;
    std::size_t batch_size_;
    std::uint64_t seed_;
};

}  // namespace sjepa::data
