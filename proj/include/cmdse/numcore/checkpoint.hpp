#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "cmdse/numcore/tensor.hpp"

namespace cmdse::num {

// Named-array container. Byte layout (all integers little-endian):
//
//   [0, 8)    magic "CMDSECKP"
//   [8, 12)   u32 format version (1)
//   [12, 16)  u32 reserved, zero
//   [16, 24)  u64 manifest length L in bytes
//   [24, 24+L) UTF-8 JSON manifest:
//             {"meta": <object>, "arrays": [{"name", "shape", "offset", "count"}, ...]}
//   zero padding up to the next multiple of 8
//   data section: IEEE-754 binary64 values, little-endian; each array's
//             "offset" is its byte offset from the start of the data section.
//
// Arrays are stored in the order given; readers must not assume sorting.
struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct ArrayContainer {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    const NamedArray& get(const std::string& name) const;
    bool contains(const std::string& name) const;
};

inline constexpr char kCheckpointMagic[8] = {'C', 'M', 'D', 'S', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_container(const ArrayContainer& c);
ArrayContainer decode_container(const std::string& bytes);

void write_container(const std::filesystem::path& path, const ArrayContainer& c);
ArrayContainer read_container(const std::filesystem::path& path);

}  // namespace cmdse::num
