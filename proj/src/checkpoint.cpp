#include "sjepa/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "sjepa/config.hpp"
#include "sjepa/data.hpp"
#include "sjepa/errors.hpp"

namespace sjepa {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

    void bytes(void* p, std::size_t n) {
        if (n > b_.size() - at_) {
            throw FormatError("checkpoint: truncated at offset " + std::to_string(at_) + " (need " +
                              std::to_string(n) + " bytes, " + std::to_string(b_.size() - at_) + " left)");
        }
        std::memcpy(p, b_.data() + at_, n);
        at_ += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, 8);
        return v;
    }
    std::string str() {
        const std::size_t n = u32();
        if (n > b_.size() - at_) {
            throw FormatError("checkpoint: string length " + std::to_string(n) + " exceeds file at offset " +
                              std::to_string(at_));
        }
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    std::size_t offset() const { return at_; }
    std::size_t remaining() const { return b_.size() - at_; }

private:
    std::span<const std::uint8_t> b_;
    std::size_t at_ = 0;
};

}  // namespace

const Section* Checkpoint::find(const std::string& name) const {
    auto it = std::find_if(sections.begin(), sections.end(), [&](const Section& s) { return s.name == name; });
    return it == sections.end() ? nullptr : &*it;
}

const Section& Checkpoint::get(const std::string& name) const {
    if (const auto* s = find(name)) {
        return *s;
    }
    throw FormatError("checkpoint: missing section '" + name + "'");
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
    return std::any_of(sections.begin(), sections.end(),
                       [&](const Section& s) { return s.name.compare(0, prefix.size(), prefix) == 0; });
}

void Checkpoint::put(Section s) {
    for (auto& existing : sections) {
        if (existing.name == s.name) {
            existing = std::move(s);
            return;
        }
    }
    sections.push_back(std::move(s));
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.bytes("SJCK", 4);
    w.u32(kCheckpointVersion);
    w.u64(ckpt.config_hash);
    w.u64(ckpt.step);
    w.str(ckpt.config_json);
    w.u32(static_cast<std::uint32_t>(ckpt.sections.size()));
    for (const auto& s : ckpt.sections) {
        if (shape_numel(s.shape) != s.values.size()) {
            throw ContractError("checkpoint: section '" + s.name + "' holds " + std::to_string(s.values.size()) +
                                " values for shape " + shape_str(s.shape));
        }
        w.str(s.name);
        w.u32(static_cast<std::uint32_t>(s.shape.size()));
        for (auto dim : s.shape) {
            w.u64(dim);
        }
        w.bytes(s.values.data(), s.values.size() * sizeof(double));
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "SJCK", 4) != 0) {
        throw FormatError("checkpoint: bad magic");
    }
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint c;
    c.config_hash = r.u64();
    c.step = r.u64();
    c.config_json = r.str();
    const std::size_t count = r.u32();
    for (std::size_t i = 0; i < count; ++i) {
        Section s;
        s.name = r.str();
        const std::size_t rank = r.u32();
        if (rank > 8) {
            throw FormatError("checkpoint: section '" + s.name + "' has rank " + std::to_string(rank));
        }
        std::size_t numel = 1;
        for (std::size_t k = 0; k < rank; ++k) {
            s.shape.push_back(r.u64());
            if (s.shape.back() != 0 && numel > r.remaining() / s.shape.back()) {
                throw FormatError("checkpoint: section '" + s.name + "' larger than the file");
            }
            numel *= s.shape.back();
        }
        if (numel > r.remaining() / sizeof(double)) {
            throw FormatError("checkpoint: truncated payload of section '" + s.name + "' at offset " +
                              std::to_string(r.offset()));
        }
        s.values.resize(numel);
        r.bytes(s.values.data(), numel * sizeof(double));
        c.sections.push_back(std::move(s));
    }
    if (r.remaining() != 0) {
        throw FormatError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes at offset " +
                          std::to_string(r.offset()));
    }
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    // Write then rename so an interrupted save never clobbers the previous checkpoint.
    const std::string tmp = path + ".tmp";
    data::write_file(tmp, encode_checkpoint(ckpt));
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw FormatError("cannot move checkpoint into place at '" + path + "'");
    }
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(data::read_file(path)); }

void check_config_hash(const Checkpoint& ckpt, std::uint64_t expected, bool force) {
    if (ckpt.config_hash != expected && !force) {
        throw ConfigError("checkpoint config hash " + hex64(ckpt.config_hash) + " does not match config hash " +
                          hex64(expected) + " (use --force to load anyway)");
    }
}

void store_params(Checkpoint& ckpt, const std::string& prefix, const ParamSet& params) {
    for (const auto& p : params) {
        auto v = p.tensor.data();
        ckpt.put(Section{prefix + p.name, p.tensor.shape(), std::vector<double>(v.begin(), v.end())});
    }
}

void restore_params(const Checkpoint& ckpt, const std::string& prefix, const ParamSet& params) {
    for (const auto& p : params) {
        const auto& s = ckpt.get(prefix + p.name);
        if (s.shape != p.tensor.shape()) {
            throw FormatError("checkpoint: section '" + s.name + "' has shape " + shape_str(s.shape) + ", expected " +
                              shape_str(p.tensor.shape()));
        }
        Tensor target = p.tensor;
        auto dst = target.mutable_data();
        std::copy(s.values.begin(), s.values.end(), dst.begin());
    }
}

}  // namespace sjepa
