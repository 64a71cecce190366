#include "sjepa/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "sjepa/errors.hpp"
#include "sjepa/rng.hpp"

namespace sjepa::data {

namespace {

constexpr std::size_t kPlane = kImageSide * kImageSide;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(bytes[at + static_cast<std::size_t>(i)]) << (8 * i);
    }
    return v;
}

std::size_t classes_of(Source s) {
    switch (s) {
        case Source::cifar100_train:
        case Source::cifar100_test:
            return 100;
        case Source::synth_class:
            return 4;
        case Source::synth_count:
            return kMaxObjects;
    }
    return 0;
}

}  // namespace

std::string to_string(Source s) {
    switch (s) {
        case Source::cifar100_train:
            return "cifar100-train";
        case Source::cifar100_test:
            return "cifar100-test";
        case Source::synth_class:
            return "synth-class";
        case Source::synth_count:
            return "synth-count";
    }
    return "unknown";
}

Tensor Dataset::raw_image(std::size_t i) const {
    const auto& px = records.at(i).pixels;
    std::vector<double> v(kPixelBytes);
    for (std::size_t k = 0; k < kPixelBytes; ++k) {
        v[k] = px[k] / 255.0;
    }
    return Tensor::from({kChannels, kImageSide, kImageSide}, std::move(v));
}

Tensor Dataset::image(std::size_t i) const {
    const auto& px = records.at(i).pixels;
    std::vector<double> v(kPixelBytes);
    for (std::size_t c = 0; c < kChannels; ++c) {
        for (std::size_t k = 0; k < kPlane; ++k) {
            v[c * kPlane + k] = (px[c * kPlane + k] / 255.0 - stats.mean[c]) / stats.std[c];
        }
    }
    return Tensor::from({kChannels, kImageSide, kImageSide}, std::move(v));
}

Normalization compute_stats(const Dataset& train) {
    if (train.records.empty()) {
        throw ContractError("compute_stats: empty dataset");
    }
    // Exact integer histograms per channel keep the statistics independent of record order.
    std::array<std::array<std::uint64_t, 256>, kChannels> hist{};
    for (const auto& r : train.records) {
        for (std::size_t c = 0; c < kChannels; ++c) {
            for (std::size_t k = 0; k < kPlane; ++k) {
                ++hist[c][r.pixels[c * kPlane + k]];
            }
        }
    }
    Normalization n;
    const double count = static_cast<double>(train.records.size() * kPlane);
    for (std::size_t c = 0; c < kChannels; ++c) {
        double mu = 0.0;
        for (std::size_t b = 0; b < 256; ++b) {
            mu += static_cast<double>(hist[c][b]) * (b / 255.0);
        }
        mu /= count;
        double var = 0.0;
        for (std::size_t b = 0; b < 256; ++b) {
            const double d = b / 255.0 - mu;
            var += static_cast<double>(hist[c][b]) * d * d;
        }
        var /= count;
        n.mean[c] = mu;
        n.std[c] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return n;
}

Dataset parse_cifar100(std::span<const std::uint8_t> bytes, Source source, std::optional<std::size_t> expected_records) {
    if (bytes.size() % kCifarRecordBytes != 0) {
        const std::size_t whole = bytes.size() / kCifarRecordBytes;
        throw FormatError("cifar100: truncated record at offset " + std::to_string(whole * kCifarRecordBytes) +
                          " (file length " + std::to_string(bytes.size()) + " is not a multiple of 3074)");
    }
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    if (expected_records && n != *expected_records) {
        throw FormatError("cifar100: expected " + std::to_string(*expected_records) + " records, found " +
                          std::to_string(n) + " (length " + std::to_string(bytes.size()) + ")");
    }
    if (n == 0) {
        throw FormatError("cifar100: empty file");
    }
    Dataset d;
    d.source = source;
    d.num_classes = classes_of(source);
    d.records.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = i * kCifarRecordBytes;
        auto& r = d.records[i];
        r.coarse = bytes[at];
        r.label = bytes[at + 1];
        if (r.coarse >= 20) {
            throw FormatError("cifar100: coarse label " + std::to_string(r.coarse) + " out of range at offset " +
                              std::to_string(at));
        }
        if (r.label >= 100) {
            throw FormatError("cifar100: fine label " + std::to_string(r.label) + " out of range at offset " +
                              std::to_string(at + 1));
        }
        std::memcpy(r.pixels.data(), bytes.data() + at + 2, kPixelBytes);
    }
    return d;
}

Dataset load_cifar100(const std::string& path, Source source, std::optional<std::size_t> expected_records) {
    auto bytes = read_file(path);
    return parse_cifar100(bytes, source, expected_records);
}

std::vector<std::uint8_t> serialize_cifar100(std::span<const Record> records) {
    std::vector<std::uint8_t> out;
    out.reserve(records.size() * kCifarRecordBytes);
    for (const auto& r : records) {
        out.push_back(r.coarse);
        out.push_back(r.label);
        out.insert(out.end(), r.pixels.begin(), r.pixels.end());
    }
    return out;
}

SceneParams scene_params(SynthTask task) {
    // Class scenes: one dominant object with a thin outline, so its kind still
    // shows after mean pooling. Count scenes keep comparable sizes.
    if (task == SynthTask::classify) {
        return SceneParams{18, 22, 3, 5, 0.5, 0.7, 8};
    }
    return SceneParams{5, 12, 5, 12, 0.5, 1.0, 5};
}

std::vector<SceneObject> sample_scene(std::uint64_t seed, const SceneParams& params) {
    constexpr std::size_t gap = 1;
    constexpr std::size_t placement_tries = 100;
    Rng rng(seed);
    // The count is fixed before any retry so that crowded scenes are not
    // thinned out by placement failures.
    const std::size_t count = 1 + uniform_index(rng, kMaxObjects);
    for (;;) {
        std::vector<std::size_t> sides(count);
        sides[0] = params.large_min + uniform_index(rng, params.large_max - params.large_min + 1);
        for (std::size_t i = 1; i < count; ++i) {
            sides[i] = params.small_min + uniform_index(rng, params.small_max - params.small_min + 1);
        }
        std::sort(sides.begin(), sides.end(), std::greater<>());
        if (count > 1 && sides[0] == sides[1]) {
            continue;  // the largest object must be unique
        }
        std::vector<SceneObject> objects;
        bool placed_all = true;
        for (std::size_t i = 0; i < count && placed_all; ++i) {
            SceneObject o{};
            o.kind = static_cast<ShapeKind>(uniform_index(rng, 4));
            o.side = sides[i];
            o.rect_extent = std::max<std::size_t>(
                3, static_cast<std::size_t>(std::lround(o.side * uniform(rng, params.rect_extent_min, params.rect_extent_max))));
            o.tall = uniform_index(rng, 2) == 1;
            if (o.kind == ShapeKind::filled_disc || o.kind == ShapeKind::ring) {
                o.rect_extent = o.side;
            }
            for (auto& c : o.color) {
                c = static_cast<std::uint8_t>(80 + uniform_index(rng, 176));
            }
            placed_all = false;
            for (std::size_t t = 0; t < placement_tries && !placed_all; ++t) {
                o.top = uniform_index(rng, kImageSide - o.side + 1);
                o.left = uniform_index(rng, kImageSide - o.side + 1);
                placed_all = std::none_of(objects.begin(), objects.end(), [&](const SceneObject& p) {
                    return o.top < p.top + p.side + gap && p.top < o.top + o.side + gap &&
                           o.left < p.left + p.side + gap && p.left < o.left + o.side + gap;
                });
            }
            if (placed_all) {
                objects.push_back(o);
            }
        }
        if (placed_all) {
            return objects;
        }
    }
}

Record render_scene(const std::vector<SceneObject>& objects, SynthTask task, std::size_t border_divisor) {
    Record r;
    auto paint = [&](std::size_t y, std::size_t x, const std::array<std::uint8_t, kChannels>& color) {
        for (std::size_t c = 0; c < kChannels; ++c) {
            r.pixels[c * kPlane + y * kImageSide + x] = color[c];
        }
    };
    for (const auto& o : objects) {
        const std::size_t thick = std::max<std::size_t>(1, o.side / border_divisor);
        if (o.kind == ShapeKind::filled_rect || o.kind == ShapeKind::outlined_rect) {
            const std::size_t h = o.tall ? o.side : o.rect_extent;
            const std::size_t w = o.tall ? o.rect_extent : o.side;
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    bool edge = y < thick || x < thick || y + thick >= h || x + thick >= w;
                    if (o.kind == ShapeKind::filled_rect || edge) {
                        paint(o.top + y, o.left + x, o.color);
                    }
                }
            }
        } else {
            const double radius = o.side / 2.0;
            const double inner = radius - static_cast<double>(thick);
            for (std::size_t y = 0; y < o.side; ++y) {
                for (std::size_t x = 0; x < o.side; ++x) {
                    const double dy = y + 0.5 - radius, dx = x + 0.5 - radius;
                    const double dist = std::sqrt(dy * dy + dx * dx);
                    if (dist <= radius && (o.kind == ShapeKind::filled_disc || dist > inner)) {
                        paint(o.top + y, o.left + x, o.color);
                    }
                }
            }
        }
    }
    if (task == SynthTask::count) {
        r.label = static_cast<std::uint8_t>(objects.size() - 1);
    } else {
        auto largest = std::max_element(objects.begin(), objects.end(),
                                        [](const SceneObject& a, const SceneObject& b) { return a.side < b.side; });
        r.label = static_cast<std::uint8_t>(largest->kind);
    }
    return r;
}

Dataset synth_shapes(std::size_t n, SynthTask task, std::uint64_t seed) {
    if (n == 0) {
        throw ContractError("synth_shapes: n must be at least 1");
    }
    Dataset d;
    d.source = task == SynthTask::classify ? Source::synth_class : Source::synth_count;
    d.num_classes = classes_of(d.source);
    d.records.resize(n);
    const SceneParams params = scene_params(task);
    for (std::size_t i = 0; i < n; ++i) {
        d.records[i] = render_scene(sample_scene(derive_seed(seed, {static_cast<std::uint64_t>(task), i}), params), task,
                                    params.border_divisor);
    }
    d.stats = compute_stats(d);
    return d;
}

std::vector<std::uint8_t> encode_synth(const Dataset& d) {
    if (d.source != Source::synth_class && d.source != Source::synth_count) {
        throw ContractError("encode_synth: not a synthetic dataset");
    }
    std::vector<std::uint8_t> out{'S', 'J', 'P', 'D'};
    put_u32(out, kSynthVersion);
    put_u32(out, static_cast<std::uint32_t>(d.records.size()));
    put_u32(out, d.source == Source::synth_class ? 0u : 1u);
    out.reserve(kSynthHeaderBytes + d.records.size() * (1 + kPixelBytes));
    for (const auto& r : d.records) {
        out.push_back(r.label);
        out.insert(out.end(), r.pixels.begin(), r.pixels.end());
    }
    return out;
}

Dataset decode_synth(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kSynthHeaderBytes || std::memcmp(bytes.data(), "SJPD", 4) != 0) {
        throw FormatError("synth cache: missing SJPD header");
    }
    const auto version = get_u32(bytes, 4);
    const auto n = get_u32(bytes, 8);
    const auto task = get_u32(bytes, 12);
    if (version != kSynthVersion) {
        throw FormatError("synth cache: unsupported version " + std::to_string(version));
    }
    if (task > 1) {
        throw FormatError("synth cache: unknown task id " + std::to_string(task) + " at offset 12");
    }
    const std::size_t expected = kSynthHeaderBytes + static_cast<std::size_t>(n) * (1 + kPixelBytes);
    if (bytes.size() != expected) {
        throw FormatError("synth cache: length " + std::to_string(bytes.size()) + " does not match " +
                          std::to_string(n) + " records (" + std::to_string(expected) + " bytes)");
    }
    Dataset d;
    d.source = task == 0 ? Source::synth_class : Source::synth_count;
    d.num_classes = classes_of(d.source);
    d.records.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = kSynthHeaderBytes + i * (1 + kPixelBytes);
        d.records[i].label = bytes[at];
        if (d.records[i].label >= d.num_classes) {
            throw FormatError("synth cache: label out of range at offset " + std::to_string(at));
        }
        std::memcpy(d.records[i].pixels.data(), bytes.data() + at + 1, kPixelBytes);
    }
    if (n > 0) {
        d.stats = compute_stats(d);
    }
    return d;
}

void save_synth(const std::string& path, const Dataset& d) { write_file(path, encode_synth(d)); }

Dataset load_synth(const std::string& path) { return decode_synth(read_file(path)); }

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open '" + path + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write '" + path + "'");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw FormatError("short write to '" + path + "'");
    }
}

BatchIterator::BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed)
    : data_(&data), batch_size_(batch_size), seed_(seed) {
    if (batch_size == 0) {
        throw ContractError("batch_iter: batch size must be at least 1");
    }
    if (data.records.empty()) {
        throw ContractError("batch_iter: empty dataset");
    }
}

std::size_t BatchIterator::batches_per_epoch() const {
    return (data_->size() + batch_size_ - 1) / batch_size_;
}

std::vector<std::vector<std::size_t>> BatchIterator::epoch_plan(std::size_t epoch) const {
    std::vector<std::size_t> order(data_->size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed_, {epoch}));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> plan;
    for (std::size_t start = 0; start < order.size(); start += batch_size_) {
        const std::size_t end = std::min(order.size(), start + batch_size_);
        plan.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                          order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return plan;
}

ImageBatch BatchIterator::batch(std::size_t epoch, std::size_t index) const {
    auto plan = epoch_plan(epoch);
    if (index >= plan.size()) {
        throw ContractError("batch_iter: batch index out of range");
    }
    ImageBatch b;
    b.indices = std::move(plan[index]);
    for (auto i : b.indices) {
        b.images.push_back(data_->image(i));
        b.labels.push_back(data_->label(i));
    }
    return b;
}

}  // namespace sjepa::data
