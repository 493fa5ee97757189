#include "cmdse/numcore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cmdse::num {

namespace {

template <class T>
void put_le(std::string& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
    }
}

template <class T>
T get_le(const std::string& in, std::size_t pos) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    return static_cast<T>(v);
}

void put_f64(std::string& out, double x) { put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x)); }

double get_f64(const std::string& in, std::size_t pos) {
    return std::bit_cast<double>(get_le<std::uint64_t>(in, pos));
}

constexpr std::size_t kHeaderSize = 24;

}  // namespace

const NamedArray& ArrayContainer::get(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return a;
    throw NotFoundError("container has no array named '" + name + "'");
}

bool ArrayContainer::contains(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return true;
    return false;
}

std::string encode_container(const ArrayContainer& c) {
    nlohmann::json manifest;
    manifest["meta"] = c.meta;
    manifest["arrays"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& a : c.arrays) {
        if (numel_of(a.shape) != a.values.size()) {
            throw ShapeError("array '" + a.name + "' has shape " + shape_str(a.shape) + " but " +
                             std::to_string(a.values.size()) + " values");
        }
        manifest["arrays"].push_back(
            {{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.values.size()}});
        offset += 8 * a.values.size();
    }
    const std::string text = manifest.dump();

    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, 0);
    put_le<std::uint64_t>(out, text.size());
    out += text;
    while (out.size() % 8 != 0) out.push_back('\0');
    for (const auto& a : c.arrays)
        for (double x : a.values) put_f64(out, x);
    return out;
}

ArrayContainer decode_container(const std::string& bytes) {
    if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
        throw ParseError("not a checkpoint container (bad magic)");
    }
    const auto version = get_le<std::uint32_t>(bytes, 8);
    if (version != kCheckpointVersion) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto len = get_le<std::uint64_t>(bytes, 16);
    if (kHeaderSize + len > bytes.size()) {
        throw ParseError("checkpoint manifest truncated at byte " + std::to_string(bytes.size()));
    }
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(kHeaderSize, len));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint manifest: ") + e.what());
    }
    std::size_t data_start = kHeaderSize + len;
    data_start = (data_start + 7) / 8 * 8;

    ArrayContainer c;
    c.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& entry : manifest.at("arrays")) {
        NamedArray a;
        a.name = entry.at("name").get<std::string>();
        a.shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const auto count = entry.at("count").get<std::uint64_t>();
        if (count != numel_of(a.shape)) {
            throw ParseError("array '" + a.name + "': count does not match shape " + shape_str(a.shape));
        }
        const std::size_t begin = data_start + offset;
        if (begin + 8 * count > bytes.size()) {
            throw ParseError("array '" + a.name + "' truncated: needs bytes up to " +
                             std::to_string(begin + 8 * count) + ", file has " + std::to_string(bytes.size()));
        }
        a.values.resize(count);
        for (std::size_t i = 0; i < count; ++i) a.values[i] = get_f64(bytes, begin + 8 * i);
        c.arrays.push_back(std::move(a));
    }
    return c;
}

void write_container(const std::filesystem::path& path, const ArrayContainer& c) {
    const std::string bytes = encode_container(c);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

ArrayContainer read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_container(ss.str());
}

}  // namespace cmdse::num
