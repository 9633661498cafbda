#include "tve/tensor_io.hpp"

#include <cstring>
#include <fstream>

namespace tve {
namespace {

constexpr unsigned char kMagic[4] = {0x54, 0x56, 0x45, 0x54};

void put_u64_le(std::vector<unsigned char>& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back((unsigned char)((v >> (8 * i)) & 0xFF));
}

void put_f32_le(std::vector<unsigned char>& buf, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    for (int i = 0; i < 4; ++i) buf.push_back((unsigned char)((v >> (8 * i)) & 0xFF));
}

uint64_t get_u64_le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
    return v;
}

float get_f32_le(const unsigned char* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p[i]) << (8 * i);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

} // namespace

void write_tvet(const std::filesystem::path& path, const Tensor& t) {
    if (!t.defined()) throw ValidationError("write_tvet: undefined tensor");
    if (t.dims().size() > 255) throw ValidationError("write_tvet: rank > 255");

    std::vector<unsigned char> buf;
    buf.reserve(8 + 8 * t.dims().size() + 4 * t.data().size());
    buf.insert(buf.end(), kMagic, kMagic + 4);
    buf.push_back(1); // version
    buf.push_back(1); // dtype f32
    buf.push_back((unsigned char)t.dims().size());
    buf.push_back(0); // pad
    for (int64_t d : t.dims()) put_u64_le(buf, uint64_t(d));
    for (float f : t.data()) put_f32_le(buf, f);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("write_tvet: cannot open " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!out) throw ValidationError("write_tvet: short write to " + path.string());
}

Tensor read_tvet(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("read_tvet: cannot open " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

    if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw ValidationError("read_tvet: bad magic in " + path.string());
    if (buf[4] != 1) throw ValidationError("read_tvet: unsupported version in " + path.string());
    if (buf[5] != 1) throw ValidationError("read_tvet: unsupported dtype in " + path.string());
    const size_t rank = buf[6];
    if (buf[7] != 0) throw ValidationError("read_tvet: nonzero pad byte in " + path.string());
    if (buf.size() < 8 + 8 * rank)
        throw ValidationError("read_tvet: truncated header in " + path.string());

    Shape dims(rank);
    uint64_t numel = 1;
    for (size_t i = 0; i < rank; ++i) {
        const uint64_t d = get_u64_le(buf.data() + 8 + 8 * i);
        if (d == 0 || d > (uint64_t(1) << 40))
            throw ValidationError("read_tvet: implausible dim in " + path.string());
        dims[i] = int64_t(d);
        numel *= d;
    }
    const size_t payload_off = 8 + 8 * rank;
    if (buf.size() != payload_off + 4 * numel)
        throw ValidationError("read_tvet: payload size mismatch in " + path.string());

    std::vector<float> data(static_cast<size_t>(numel));
    for (uint64_t i = 0; i < numel; ++i) data[size_t(i)] = get_f32_le(buf.data() + payload_off + 4 * i);
    return Tensor::from_data(std::move(dims), std::move(data));
}

} // namespace tve
