#include "qrel/quant/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "qrel/error.hpp"
#include "qrel/quant/packing.hpp"

namespace qrel::quant {

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'N', 'T'};

class Writer {
public:
    void bytes(const void* p, std::size_t n)
    {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v)
    {
        for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
    void f32s(const std::vector<float>& v)
    {
        for (float f : v) f32(f);
    }
    void align8()
    {
        while (out_.size() % 8 != 0) out_.push_back(0);
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

    std::span<const std::uint8_t> bytes(std::size_t n)
    {
        require(n <= b_.size() - pos_, "truncated checkpoint at byte " + std::to_string(pos_));
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8() { return bytes(1)[0]; }
    std::uint16_t u16()
    {
        auto s = bytes(2);
        return static_cast<std::uint16_t>(s[0] | (s[1] << 8));
    }
    std::uint32_t u32()
    {
        auto s = bytes(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[static_cast<std::size_t>(i)]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::vector<float> f32s(std::size_t n)
    {
        require(n <= (b_.size() - pos_) / 4, "truncated checkpoint at byte " + std::to_string(pos_));
        std::vector<float> v(n);
        for (auto& f : v) f = f32();
        return v;
    }
    void align8()
    {
        while (pos_ % 8 != 0) require(u8() == 0, "nonzero alignment padding");
    }
    bool done() const { return pos_ == b_.size(); }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

} // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const
{
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

const CheckpointTensor& Checkpoint::at(const std::string& name) const
{
    const auto* t = find(name);
    require(t != nullptr, "checkpoint has no tensor named '" + name + "'");
    return *t;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt)
{
    Writer w;
    w.bytes(kMagic, 4);
    w.u16(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
    w.align8();
    for (const auto& t : ckpt.tensors) {
        w.u32(static_cast<std::uint32_t>(t.name.size()));
        w.bytes(t.name.data(), t.name.size());
        if (const auto* fp = std::get_if<Fp32Tensor>(&t.data)) {
            require(fp->values.size() == static_cast<std::size_t>(fp->rows) * fp->cols,
                    "tensor '" + t.name + "' has inconsistent shape");
            w.u32(fp->rows);
            w.u32(fp->cols);
            w.u8(kFp32Tag);
            w.u32(0);
            w.f32s(fp->values);
        } else {
            const auto& qt = std::get<QuantizedTensor>(t.data);
            qt.validate();
            w.u32(static_cast<std::uint32_t>(qt.rows));
            w.u32(static_cast<std::uint32_t>(qt.cols));
            w.u8(static_cast<std::uint8_t>(qt.spec.bits));
            w.u32(static_cast<std::uint32_t>(qt.spec.group_size));
            w.f32s(qt.scales);
            w.f32s(qt.zero_points);
            w.bytes(qt.packed.data(), qt.packed.size());
        }
        w.u32(static_cast<std::uint32_t>(t.equalization.size()));
        w.f32s(t.equalization);
        w.align8();
    }
    return w.take();
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes)
{
    Reader r(bytes);
    const auto magic = r.bytes(4);
    require(std::memcmp(magic.data(), kMagic, 4) == 0, "not an SQNT checkpoint (bad magic)");
    const auto version = r.u16();
    require(version == kCheckpointVersion, "unsupported SQNT version " + std::to_string(version));
    const auto count = r.u32();
    r.align8();
    Checkpoint ckpt;
    for (std::uint32_t k = 0; k < count; ++k) {
        CheckpointTensor t;
        const auto name_len = r.u32();
        const auto name = r.bytes(name_len);
        t.name.assign(name.begin(), name.end());
        const auto rows = r.u32();
        const auto cols = r.u32();
        const auto bits = r.u8();
        const auto group = r.u32();
        const std::size_t n = static_cast<std::size_t>(rows) * cols;
        if (bits == kFp32Tag) {
            t.data = Fp32Tensor{rows, cols, r.f32s(n)};
        } else {
            QuantizedTensor qt;
            qt.rows = rows;
            qt.cols = cols;
            qt.spec.bits = bits;
            qt.spec.group_size = static_cast<int>(group);
            qt.spec.validate();
            const std::size_t groups = (n + group - 1) / group;
            qt.scales = r.f32s(groups);
            qt.zero_points = r.f32s(groups);
            const auto packed = r.bytes(packed_size(n, bits));
            qt.packed.assign(packed.begin(), packed.end());
            qt.validate();
            unpack_codes(qt.packed, bits, n);  // rejects dirty pad bits
            t.data = std::move(qt);
        }
        t.equalization = r.f32s(r.u32());
        r.align8();
        ckpt.tensors.push_back(std::move(t));
    }
    require(r.done(), "trailing bytes after last checkpoint tensor");
    return ckpt;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    const auto bytes = serialize(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), "cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path)
{
    return deserialize(read_file_bytes(path));
}

} // namespace qrel::quant
