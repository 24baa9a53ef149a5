#include "peftlab/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "peftlab/errors.hpp"

namespace peftlab {

namespace {

constexpr std::array<char, 4> kMagic = {'P', 'T', 'N', 'S'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    std::array<unsigned char, 4> b{static_cast<unsigned char>(v & 0xFF),
                                   static_cast<unsigned char>((v >> 8) & 0xFF),
                                   static_cast<unsigned char>((v >> 16) & 0xFF),
                                   static_cast<unsigned char>((v >> 24) & 0xFF)};
    os.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t read_u32(std::istream& is) {
    std::array<unsigned char, 4> b{};
    is.read(reinterpret_cast<char*>(b.data()), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    std::array<unsigned char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b.data()), 8);
}

double read_f64(std::istream& is) {
    std::array<unsigned char, 8> b{};
    is.read(reinterpret_cast<char*>(b.data()), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open for writing: " + path.string());
    os.write(kMagic.data(), 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (const int e : t.shape()) write_u32(os, static_cast<std::uint32_t>(e));
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(t.values().data()),
                 static_cast<std::streamsize>(t.values().size() * sizeof(double)));
    } else {
        for (const double v : t.values()) write_f64(os, v);
    }
    if (!os) throw ValidationError("write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open for reading: " + path.string());
    std::array<char, 4> magic{};
    is.read(magic.data(), 4);
    if (!is || magic != kMagic) throw ValidationError("bad tensor file magic: " + path.string());
    const std::uint32_t version = read_u32(is);
    if (version != kVersion) {
        throw ValidationError("unsupported tensor file version " + std::to_string(version));
    }
    const std::uint32_t ndim = read_u32(is);
    std::vector<int> shape(ndim);
    for (auto& e : shape) e = static_cast<int>(read_u32(is));
    const std::int64_t n = shape_numel(shape);
    std::vector<double> data(static_cast<std::size_t>(n));
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
    } else {
        for (auto& v : data) v = read_f64(is);
    }
    if (!is) throw ValidationError("truncated tensor file: " + path.string());
    return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace peftlab
