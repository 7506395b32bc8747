#include "xbprune/npy.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include <zlib.h>

#include "xbprune/error.hpp"

namespace xbprune {

static_assert(std::endian::native == std::endian::little, "npy I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to '" + path.string() + "'");
}

template <typename T>
T read_le(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

template <typename T>
void append_le(std::vector<char>& out, T v) {
    const char* p = reinterpret_cast<const char*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

void check_finite(const Tensor& t, const std::string& origin) {
    for (double v : t.data)
        if (!std::isfinite(v)) throw FormatError(origin + ": tensor contains non-finite values");
}

std::vector<std::size_t> parse_shape(const std::string& text, const std::string& origin) {
    std::vector<std::size_t> shape;
    std::string digits;
    for (char c : text) {
        if (c >= '0' && c <= '9') {
            digits.push_back(c);
        } else if (c == ',' || c == ' ' || c == 'L') {
            if (!digits.empty()) {
                shape.push_back(std::stoull(digits));
                digits.clear();
            }
        } else {
            throw FormatError(origin + ": malformed shape '(" + text + ")'");
        }
    }
    if (!digits.empty()) shape.push_back(std::stoull(digits));
    return shape;
}

}  // namespace

Tensor parse_npy(const std::vector<char>& bytes, const std::string& origin) {
    if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0)
        throw FormatError(origin + ": bad npy magic");
    const auto major = static_cast<unsigned char>(bytes[6]);
    const auto minor = static_cast<unsigned char>(bytes[7]);
    std::size_t header_len = 0;
    std::size_t offset = 0;
    if (major == 1 && minor == 0) {
        header_len = read_le<std::uint16_t>(bytes.data() + 8);
        offset = 10;
    } else if (major == 2 && minor == 0) {
        if (bytes.size() < 12) throw FormatError(origin + ": truncated npy header");
        header_len = read_le<std::uint32_t>(bytes.data() + 8);
        offset = 12;
    } else {
        throw FormatError(origin + ": unsupported npy version " + std::to_string(major) + "." +
                          std::to_string(minor));
    }
    if (bytes.size() < offset + header_len) throw FormatError(origin + ": truncated npy header");
    const std::string header(bytes.data() + offset, header_len);
    offset += header_len;

    static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
    static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
    static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
    std::smatch m;
    if (!std::regex_search(header, m, descr_re)) throw FormatError(origin + ": npy header lacks 'descr'");
    const std::string descr = m[1];
    if (!std::regex_search(header, m, order_re))
        throw FormatError(origin + ": npy header lacks 'fortran_order'");
    if (m[1] == "True") throw FormatError(origin + ": fortran_order arrays are not supported");
    if (!std::regex_search(header, m, shape_re)) throw FormatError(origin + ": npy header lacks 'shape'");

    Tensor t;
    t.shape = parse_shape(m[1], origin);
    std::size_t item = 0;
    if (descr == "<f4") {
        t.dtype = Dtype::Float32;
        item = 4;
    } else if (descr == "<f8") {
        t.dtype = Dtype::Float64;
        item = 8;
    } else {
        throw FormatError(origin + ": unsupported dtype '" + descr + "' (expected <f4 or <f8)");
    }

    const std::size_t count = Tensor::element_count(t.shape);
    if (bytes.size() - offset != count * item)
        throw FormatError(origin + ": payload holds " + std::to_string(bytes.size() - offset) +
                          " bytes, shape requires " + std::to_string(count * item));
    t.data.resize(count);
    const char* p = bytes.data() + offset;
    if (t.dtype == Dtype::Float32) {
        for (std::size_t k = 0; k < count; ++k) t.data[k] = read_le<float>(p + 4 * k);
    } else {
        for (std::size_t k = 0; k < count; ++k) t.data[k] = read_le<double>(p + 8 * k);
    }
    check_finite(t, origin);
    return t;
}

std::vector<char> serialize_npy(const Tensor& t) {
    if (Tensor::element_count(t.shape) != t.data.size())
        throw GeometryError("tensor element count does not match its shape");
    check_finite(t, "save_tensor");

    std::ostringstream dict;
    dict << "{'descr': '" << (t.dtype == Dtype::Float32 ? "<f4" : "<f8")
         << "', 'fortran_order': False, 'shape': (";
    for (std::size_t k = 0; k < t.shape.size(); ++k) {
        if (k) dict << ", ";
        dict << t.shape[k];
    }
    if (t.shape.size() == 1) dict << ",";
    dict << "), }";
    std::string header = dict.str();
    // Total preamble is padded to a multiple of 64 bytes and ends with '\n'.
    const std::size_t unpadded = kMagicLen + 4 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header.push_back('\n');

    std::vector<char> out(kMagic, kMagic + kMagicLen);
    out.push_back(1);
    out.push_back(0);
    append_le<std::uint16_t>(out, static_cast<std::uint16_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());
    out.reserve(out.size() + t.data.size() * 8);
    if (t.dtype == Dtype::Float32) {
        for (double v : t.data) append_le<float>(out, static_cast<float>(v));
    } else {
        for (double v : t.data) append_le<double>(out, v);
    }
    return out;
}

Tensor load_tensor(const std::filesystem::path& path) {
    return parse_npy(read_file(path), path.string());
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
    write_file(path, serialize_npy(t));
}

namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;

std::vector<char> inflate_raw(const char* data, std::size_t size, std::size_t expected, const std::string& origin) {
    std::vector<char> out(expected);
    z_stream zs{};
    if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw FormatError(origin + ": zlib init failed");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data));
    zs.avail_in = static_cast<uInt>(size);
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || zs.total_out != expected) throw FormatError(origin + ": corrupt deflate stream");
    return out;
}

}  // namespace

std::map<std::string, Tensor> load_npz(const std::filesystem::path& path) {
    const std::vector<char> bytes = read_file(path);
    const std::string origin = path.string();
    if (bytes.size() < 22) throw FormatError(origin + ": not a zip archive");

    std::size_t eocd = bytes.size() - 22;
    while (read_le<std::uint32_t>(bytes.data() + eocd) != kEndSig) {
        if (eocd == 0 || bytes.size() - eocd > 22 + 65535) throw FormatError(origin + ": zip end record not found");
        --eocd;
    }
    const std::size_t entries = read_le<std::uint16_t>(bytes.data() + eocd + 10);
    std::size_t cd = read_le<std::uint32_t>(bytes.data() + eocd + 16);

    std::map<std::string, Tensor> arrays;
    for (std::size_t e = 0; e < entries; ++e) {
        if (cd + 46 > bytes.size() || read_le<std::uint32_t>(bytes.data() + cd) != kCentralSig)
            throw FormatError(origin + ": corrupt zip central directory");
        const char* h = bytes.data() + cd;
        const std::uint16_t method = read_le<std::uint16_t>(h + 10);
        std::uint64_t comp_size = read_le<std::uint32_t>(h + 20);
        std::uint64_t raw_size = read_le<std::uint32_t>(h + 24);
        const std::size_t name_len = read_le<std::uint16_t>(h + 28);
        const std::size_t extra_len = read_le<std::uint16_t>(h + 30);
        const std::size_t comment_len = read_le<std::uint16_t>(h + 32);
        std::uint64_t local = read_le<std::uint32_t>(h + 42);
        std::string name(h + 46, name_len);

        // Zip64 extended information: present fields appear in a fixed order.
        const char* extra = h + 46 + name_len;
        for (std::size_t k = 0; k + 4 <= extra_len;) {
            const std::uint16_t id = read_le<std::uint16_t>(extra + k);
            const std::uint16_t len = read_le<std::uint16_t>(extra + k + 2);
            if (id == 0x0001) {
                std::size_t f = k + 4;
                if (raw_size == 0xffffffffu) { raw_size = read_le<std::uint64_t>(extra + f); f += 8; }
                if (comp_size == 0xffffffffu) { comp_size = read_le<std::uint64_t>(extra + f); f += 8; }
                if (local == 0xffffffffu) { local = read_le<std::uint64_t>(extra + f); }
            }
            k += 4 + len;
        }
        cd += 46 + name_len + extra_len + comment_len;

        if (local + 30 > bytes.size() || read_le<std::uint32_t>(bytes.data() + local) != kLocalSig)
            throw FormatError(origin + ": corrupt zip local header for '" + name + "'");
        const std::size_t data_at = local + 30 + read_le<std::uint16_t>(bytes.data() + local + 26) +
                                    read_le<std::uint16_t>(bytes.data() + local + 28);
        if (data_at + comp_size > bytes.size()) throw FormatError(origin + ": truncated member '" + name + "'");

        std::vector<char> member;
        if (method == 0) {
            member.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_at),
                          bytes.begin() + static_cast<std::ptrdiff_t>(data_at + comp_size));
        } else if (method == 8) {
            member = inflate_raw(bytes.data() + data_at, comp_size, raw_size, origin);
        } else {
            throw FormatError(origin + ": unsupported zip compression method " + std::to_string(method));
        }
        if (name.size() > 4 && name.ends_with(".npy")) name.resize(name.size() - 4);
        arrays.emplace(name, parse_npy(member, origin + ":" + name));
    }
    return arrays;
}

void save_npz(const std::map<std::string, Tensor>& arrays, const std::filesystem::path& path) {
    std::vector<char> out;
    std::vector<char> central;
    for (const auto& [key, tensor] : arrays) {
        const std::string name = key + ".npy";
        const std::vector<char> member = serialize_npy(tensor);
        const auto crc = static_cast<std::uint32_t>(
            crc32(0L, reinterpret_cast<const Bytef*>(member.data()), static_cast<uInt>(member.size())));
        const auto size = static_cast<std::uint32_t>(member.size());
        const auto offset = static_cast<std::uint32_t>(out.size());

        append_le<std::uint32_t>(out, kLocalSig);
        append_le<std::uint16_t>(out, 20);  // version needed
        append_le<std::uint16_t>(out, 0);   // flags
        append_le<std::uint16_t>(out, 0);   // stored
        append_le<std::uint16_t>(out, 0);   // mod time
        append_le<std::uint16_t>(out, 0x21);  // mod date 1980-01-01
        append_le<std::uint32_t>(out, crc);
        append_le<std::uint32_t>(out, size);
        append_le<std::uint32_t>(out, size);
        append_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        append_le<std::uint16_t>(out, 0);
        out.insert(out.end(), name.begin(), name.end());
        out.insert(out.end(), member.begin(), member.end());

        append_le<std::uint32_t>(central, kCentralSig);
        append_le<std::uint16_t>(central, 20);  // version made by
        append_le<std::uint16_t>(central, 20);
        append_le<std::uint16_t>(central, 0);
        append_le<std::uint16_t>(central, 0);
        append_le<std::uint16_t>(central, 0);
        append_le<std::uint16_t>(central, 0x21);
        append_le<std::uint32_t>(central, crc);
        append_le<std::uint32_t>(central, size);
        append_le<std::uint32_t>(central, size);
        append_le<std::uint16_t>(central, static_cast<std::uint16_t>(name.size()));
        append_le<std::uint16_t>(central, 0);  // extra
        append_le<std::uint16_t>(central, 0);  // comment
        append_le<std::uint16_t>(central, 0);  // disk
        append_le<std::uint16_t>(central, 0);  // internal attrs
        append_le<std::uint32_t>(central, 0);  // external attrs
        append_le<std::uint32_t>(central, offset);
        central.insert(central.end(), name.begin(), name.end());
    }
    const auto cd_offset = static_cast<std::uint32_t>(out.size());
    out.insert(out.end(), central.begin(), central.end());
    append_le<std::uint32_t>(out, kEndSig);
    append_le<std::uint16_t>(out, 0);
    append_le<std::uint16_t>(out, 0);
    append_le<std::uint16_t>(out, static_cast<std::uint16_t>(arrays.size()));
    append_le<std::uint16_t>(out, static_cast<std::uint16_t>(arrays.size()));
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(central.size()));
    append_le<std::uint32_t>(out, cd_offset);
    append_le<std::uint16_t>(out, 0);
    write_file(path, out);
}

}  // namespace xbprune
