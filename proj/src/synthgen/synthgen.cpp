#include "cmdse/synthgen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cmdse/numcore/random.hpp"

namespace cmdse::synth {

namespace {

constexpr std::uint64_t kTestStream = 1ull << 32;
constexpr int kLayoutAttempts = 64;
constexpr int kShrinkRounds = 6;

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open '" + path.string() + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NotFoundError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw Error("failed writing '" + path.string() + "'");
}

std::array<double, 3> hsv(double h, double s, double v) {
    const double k[3] = {5.0, 3.0, 1.0};
    std::array<double, 3> rgb{};
    for (int c = 0; c < 3; ++c) {
        const double t = std::fmod(k[c] + h * 6.0, 6.0);
        rgb[c] = v - v * s * std::max(0.0, std::min({t, 4.0 - t, 1.0}));
    }
    return rgb;
}

double golden_hue(double offset, int id) {
    const double h = offset + static_cast<double>(id) * (std::numbers::phi - 1.0);
    return h - std::floor(h);
}

std::size_t to_pixels(double fraction, std::size_t size) {
    return std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(size))));
}

struct Rect {
    long x0 = 0, y0 = 0, w = 0, h = 0;
};

// Corner offset between the two rectangles whose centre offset best matches
// the requested one.
long corner_offset(double centre_offset, long size_from, long size_to) {
    return std::lround(centre_offset - 0.5 * static_cast<double>(size_to - size_from));
}

// Range of valid starts for the first rectangle on one axis, given the second
// sits `offset` pixels further along.
bool axis_range(long s, long w_a, long w_b, long offset, long& lo, long& hi) {
    lo = std::max(0L, -offset);
    hi = std::min(s - w_a, s - w_b - offset);
    return lo <= hi;
}

bool place(num::Rng& rng, long s, double g, double theta, Rect& hum, Rect& obj) {
    const double gx = g * static_cast<double>(s) * std::cos(theta), gy = g * static_cast<double>(s) * std::sin(theta);
    const long dx = corner_offset(gx, hum.w, obj.w), dy = corner_offset(gy, hum.h, obj.h);
    long xlo, xhi, ylo, yhi;
    if (!axis_range(s, hum.w, obj.w, dx, xlo, xhi) || !axis_range(s, hum.h, obj.h, dy, ylo, yhi)) return false;
    hum.x0 = xlo + static_cast<long>(rng.below(static_cast<std::uint64_t>(xhi - xlo + 1)));
    hum.y0 = ylo + static_cast<long>(rng.below(static_cast<std::uint64_t>(yhi - ylo + 1)));
    obj.x0 = hum.x0 + dx;
    obj.y0 = hum.y0 + dy;
    return true;
}

Box to_box(const Rect& r, std::size_t size) {
    const double s = static_cast<double>(size);
    return Box::from_corners(static_cast<double>(r.x0) / s, static_cast<double>(r.y0) / s,
                             static_cast<double>(r.x0 + r.w) / s, static_cast<double>(r.y0 + r.h) / s);
}

// Pixels sit on a 1/4096 grid, which float32 represents exactly, so the
// image container round-trips bit for bit.
double quantize(double v) { return std::round(v * 4096.0) / 4096.0; }

// Horizontal bands whose height depends on the action.
void paint_human(enc::Image& img, const Rect& r, int action) {
    const auto colour = action_colour(action);
    const long band = 1 + action % 3;
    for (long y = r.y0; y < r.y0 + r.h; ++y) {
        const double shade = ((y - r.y0) / band) % 2 == 0 ? 1.0 : 0.55;
        for (long x = r.x0; x < r.x0 + r.w; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = quantize(colour[c] * shade);
    }
}

// Checkerboard whose cell size depends on the object.
void paint_object(enc::Image& img, const Rect& r, int object) {
    const auto colour = object_colour(object);
    const long cell = 1 + object % 2;
    for (long y = r.y0; y < r.y0 + r.h; ++y)
        for (long x = r.x0; x < r.x0 + r.w; ++x) {
            const double shade = (((y - r.y0) / cell) + ((x - r.x0) / cell)) % 2 == 0 ? 1.0 : 0.7;
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = quantize(colour[c] * shade);
        }
}

nlohmann::json hoi_to_json(const match::GroundTruthHoi& gt, double drawn) {
    return {{"b_h", eval::box_to_json(gt.b_h)},
            {"b_o", eval::box_to_json(gt.b_o)},
            {"action", gt.action},
            {"object", gt.object},
            {"interaction", gt.interaction},
            {"g_drawn", drawn}};
}

void check_range(double lo, double hi, const char* what) {
    if (!(lo >= 0.0 && lo <= hi)) {
        throw ValidationError(std::string(what) + " range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                              "] is empty or negative");
    }
}

}  // namespace

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
    GeneratorSpec s;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "image_size") s.image_size = value.get<std::size_t>();
            else if (key == "train_scenes") s.train_scenes = value.get<std::size_t>();
            else if (key == "test_scenes") s.test_scenes = value.get<std::size_t>();
            else if (key == "min_hois") s.min_hois = value.get<std::size_t>();
            else if (key == "max_hois") s.max_hois = value.get<std::size_t>();
            else if (key == "near_low") s.near_low = value.get<double>();
            else if (key == "near_high") s.near_high = value.get<double>();
            else if (key == "far_low") s.far_low = value.get<double>();
            else if (key == "far_high") s.far_high = value.get<double>();
            else if (key == "near_weight") s.near_weight = value.get<double>();
            else if (key == "unseen_fraction") s.unseen_fraction = value.get<double>();
            else throw ValidationError("unknown generator spec field '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("generator spec: ") + e.what());
    }
    s.validate();
    return s;
}

nlohmann::json GeneratorSpec::to_json() const {
    return {{"image_size", image_size}, {"train_scenes", train_scenes}, {"test_scenes", test_scenes},
            {"min_hois", min_hois},     {"max_hois", max_hois},         {"near_low", near_low},
            {"near_high", near_high},   {"far_low", far_low},           {"far_high", far_high},
            {"near_weight", near_weight}, {"unseen_fraction", unseen_fraction}};
}

void GeneratorSpec::validate() const {
    if (image_size < 16) throw ValidationError("image_size must be at least 16");
    if (min_hois == 0 || max_hois < min_hois) throw ValidationError("need 1 <= min_hois <= max_hois");
    check_range(near_low, near_high, "near distance");
    check_range(far_low, far_high, "far distance");
    if (far_high > 1.0) throw ValidationError("far_high above 1.0 cannot be placed inside the image");
    if (!(near_weight >= 0.0 && near_weight <= 1.0)) throw ValidationError("near_weight must lie in [0, 1]");
    if (!(unseen_fraction >= 0.0 && unseen_fraction < 1.0)) {
        throw ValidationError("unseen_fraction must lie in [0, 1), got " + std::to_string(unseen_fraction));
    }
}

std::vector<eval::ImageAnnotations> Split::annotations() const {
    std::vector<eval::ImageAnnotations> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back({s.image_id, s.hois});
    return out;
}

std::vector<std::size_t> Split::interaction_counts(std::size_t num_interactions) const {
    std::vector<std::size_t> counts(num_interactions, 0);
    for (const auto& s : scenes)
        for (const auto& h : s.hois) ++counts.at(static_cast<std::size_t>(h.interaction));
    return counts;
}

std::array<double, 3> action_colour(int action) { return hsv(golden_hue(0.0, action), 0.85, 0.95); }

std::array<double, 3> object_colour(int object) { return hsv(golden_hue(0.3, object), 0.6, 0.6); }

std::vector<int> choose_unseen(std::size_t num_interactions, double unseen_fraction, std::uint64_t seed) {
    const auto count = static_cast<std::size_t>(std::llround(unseen_fraction * static_cast<double>(num_interactions)));
    std::vector<int> ids(num_interactions);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    num::Rng rng({seed, 0x5EE7ull});
    rng.shuffle(ids);
    ids.resize(count);
    std::sort(ids.begin(), ids.end());
    return ids;
}

SceneRecord generate_scene(const GeneratorSpec& spec, const sem::Vocabulary& vocab, const std::vector<int>& allowed,
                           std::uint64_t seed, std::uint64_t image_id, std::uint64_t stream) {
    if (allowed.empty()) throw ValidationError("no interactions available to render");
    num::Rng rng({seed, stream});
    const std::size_t size = spec.image_size;
    const long s = static_cast<long>(size);
    SceneRecord scene;
    scene.image_id = image_id;
    scene.seed = seed;
    scene.image = enc::Image::blank(size, size);
    for (auto& p : scene.image.pixels) p = quantize(0.1 * rng.uniform());

    const std::size_t count = spec.min_hois + rng.below(spec.max_hois - spec.min_hois + 1);
    for (std::size_t i = 0; i < count; ++i) {
        const int id = allowed[rng.below(allowed.size())];
        const auto& inter = vocab.interaction(id);
        const bool near = rng.uniform() < spec.near_weight;
        const double g = near ? rng.uniform(spec.near_low, spec.near_high) : rng.uniform(spec.far_low, spec.far_high);

        Rect hum{0, 0, static_cast<long>(to_pixels(rng.uniform(0.25, 0.4), size)),
                 static_cast<long>(to_pixels(rng.uniform(0.3, 0.45), size))};
        Rect obj{0, 0, static_cast<long>(to_pixels(rng.uniform(0.2, 0.35), size)),
                 static_cast<long>(to_pixels(rng.uniform(0.2, 0.35), size))};
        bool placed = false;
        // Rectangles shrink by a quarter after each round of failed attempts
        // so long distances still fit.
        for (int round = 0; round < kShrinkRounds && !placed; ++round) {
            if (round > 0) {
                for (Rect* r : {&hum, &obj}) {
                    r->w = std::max(2L, (3 * r->w) / 4);
                    r->h = std::max(2L, (3 * r->h) / 4);
                }
            }
            for (int attempt = 0; attempt < kLayoutAttempts && !placed; ++attempt) {
                placed = place(rng, s, g, rng.uniform(0.0, 2.0 * std::numbers::pi), hum, obj);
            }
        }
        // Long distances only fit along a diagonal; fall back to the smallest
        // rectangles there.
        for (int corner = 0; corner < 4 && !placed; ++corner) {
            hum.w = hum.h = obj.w = obj.h = 2;
            placed = place(rng, s, g, std::numbers::pi * (0.25 + 0.5 * corner), hum, obj);
        }
        if (!placed) throw ValidationError("cannot place distance " + std::to_string(g) + " in the image");

        paint_human(scene.image, hum, inter.action);
        paint_object(scene.image, obj, inter.object);
        match::GroundTruthHoi gt;
        gt.b_h = to_box(hum, size);
        gt.b_o = to_box(obj, size);
        gt.action = inter.action;
        gt.object = inter.object;
        gt.interaction = id;
        scene.hois.push_back(gt);
        scene.drawn_distance.push_back(g);
    }
    return scene;
}

Dataset generate(const GeneratorSpec& spec, const sem::Vocabulary& vocab, std::uint64_t seed) {
    spec.validate();
    if (vocab.num_interactions() == 0) throw ValidationError("vocabulary has no interactions");
    Dataset data;
    data.spec = spec;
    data.seed = seed;
    data.vocab = vocab;
    for (std::size_t i = 0; i < vocab.num_interactions(); ++i) data.vocab.set_seen(static_cast<int>(i), true);
    for (int id : choose_unseen(vocab.num_interactions(), spec.unseen_fraction, seed)) data.vocab.set_seen(id, false);

    const auto seen = data.vocab.seen_ids();
    std::vector<int> all(vocab.num_interactions());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    // Scenes are independent streams, so any evaluation order gives the same result.
    for (std::size_t i = 0; i < spec.train_scenes; ++i) {
        data.train.scenes.push_back(generate_scene(spec, data.vocab, seen, seed, i, i));
    }
    for (std::size_t i = 0; i < spec.test_scenes; ++i) {
        data.test.scenes.push_back(
            generate_scene(spec, data.vocab, all, seed, spec.train_scenes + i, kTestStream + i));
    }
    return data;
}

void export_split(const Split& split, const std::filesystem::path& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    std::size_t height = 0, width = 0;
    if (!split.scenes.empty()) {
        height = split.scenes.front().image.height;
        width = split.scenes.front().image.width;
    }
    std::ostringstream lines;
    std::vector<char> bytes;
    for (const auto& scene : split.scenes) {
        if (scene.image.height != height || scene.image.width != width) {
            throw ShapeError("split mixes image sizes; the container needs one size");
        }
        nlohmann::json j = {{"image_id", scene.image_id}, {"seed", scene.seed}, {"hois", nlohmann::json::array()}};
        for (std::size_t h = 0; h < scene.hois.size(); ++h) {
            j["hois"].push_back(hoi_to_json(scene.hois[h], h < scene.drawn_distance.size() ? scene.drawn_distance[h] : -1.0));
        }
        lines << j.dump() << '\n';
        for (double p : scene.image.pixels) {
            float f = static_cast<float>(p);
            std::uint32_t u;
            std::memcpy(&u, &f, 4);
            if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
            char b[4];
            std::memcpy(b, &u, 4);
            bytes.insert(bytes.end(), b, b + 4);
        }
    }
    write_text(dir / (name + ".jsonl"), lines.str());
    write_text(dir / (name + ".bin"), std::string(bytes.begin(), bytes.end()));
    const nlohmann::json manifest = {{"dtype", "float32"},       {"byte_order", "little"}, {"layout", "HWC"},
                                     {"height", height},         {"width", width},         {"channels", 3},
                                     {"count", split.scenes.size()}, {"annotations", name + ".jsonl"},
                                     {"images", name + ".bin"}};
    write_text(dir / (name + ".manifest.json"), manifest.dump(2) + "\n");
}

Split import_split(const std::filesystem::path& dir, const std::string& name, const sem::Vocabulary& vocab) {
    const auto manifest = read_json_file(dir / (name + ".manifest.json"));
    std::size_t height = 0, width = 0, count = 0;
    try {
        if (manifest.at("dtype") != "float32" || manifest.at("byte_order") != "little" || manifest.at("channels") != 3) {
            throw ParseError(name + ".manifest.json: unsupported image container format");
        }
        height = manifest.at("height").get<std::size_t>();
        width = manifest.at("width").get<std::size_t>();
        count = manifest.at("count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(name + ".manifest.json: " + e.what());
    }

    const auto ann_path = dir / (name + ".jsonl");
    std::ifstream ann(ann_path, std::ios::binary);
    if (!ann) throw NotFoundError("cannot open '" + ann_path.string() + "'");
    Split split;
    std::string line;
    std::size_t number = 0, offset = 0;
    while (std::getline(ann, line)) {
        ++number;
        const std::size_t line_start = offset;
        offset += line.size() + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto fail = [&](std::size_t at, const std::string& why) {
            throw ParseError(ann_path.string() + ":" + std::to_string(number) + " (byte " + std::to_string(at) +
                             "): " + why);
        };
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(line_start + (e.byte > 0 ? e.byte - 1 : 0), e.what());
        }
        try {
            SceneRecord scene;
            scene.image_id = j.at("image_id").get<std::uint64_t>();
            scene.seed = j.value("seed", std::uint64_t{0});
            for (const auto& h : j.at("hois")) {
                match::GroundTruthHoi gt;
                gt.b_h = eval::box_from_json(h.at("b_h"));
                gt.b_o = eval::box_from_json(h.at("b_o"));
                gt.action = h.at("action").get<int>();
                gt.object = h.at("object").get<int>();
                const auto id = vocab.find_interaction(gt.action, gt.object);
                if (!id) fail(line_start, "(action, object) pair is not in the vocabulary");
                if (h.contains("interaction") && h.at("interaction").get<int>() != *id) {
                    fail(line_start, "interaction id disagrees with the vocabulary");
                }
                gt.interaction = *id;
                scene.hois.push_back(gt);
                scene.drawn_distance.push_back(h.value("g_drawn", -1.0));
            }
            split.scenes.push_back(std::move(scene));
        } catch (const nlohmann::json::exception& e) {
            fail(line_start, e.what());
        } catch (const ParseError& e) {
            if (std::string(e.what()).rfind(ann_path.string(), 0) == 0) throw;
            fail(line_start, e.what());
        }
    }
    if (split.scenes.size() != count) {
        throw ParseError(ann_path.string() + ": " + std::to_string(split.scenes.size()) +
                         " records but the manifest declares " + std::to_string(count));
    }

    const auto bin_path = dir / (name + ".bin");
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw NotFoundError("cannot open '" + bin_path.string() + "'");
    const std::size_t per_image = height * width * 3;
    std::vector<char> buf(per_image * 4);
    std::size_t consumed = 0;
    for (auto& scene : split.scenes) {
        bin.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto got = static_cast<std::size_t>(bin.gcount());
        if (got != buf.size()) {
            throw ParseError(bin_path.string() + ": truncated at byte offset " + std::to_string(consumed + got) +
                             ", image " + std::to_string(scene.image_id) + " needs bytes up to " +
                             std::to_string(consumed + buf.size()));
        }
        consumed += got;
        scene.image = enc::Image::blank(height, width);
        for (std::size_t i = 0; i < per_image; ++i) {
            std::uint32_t u;
            std::memcpy(&u, buf.data() + 4 * i, 4);
            if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
            float f;
            std::memcpy(&f, &u, 4);
            scene.image.pixels[i] = static_cast<double>(f);
        }
    }
    if (bin.peek() != std::char_traits<char>::eof()) {
        throw ParseError(bin_path.string() + ": unexpected data after byte offset " + std::to_string(consumed));
    }
    return split;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text(dir / "vocab.json", data.vocab.to_json().dump(2) + "\n");
    nlohmann::json spec = data.spec.to_json();
    write_text(dir / "generator.json", nlohmann::json{{"spec", spec}, {"seed", data.seed}}.dump(2) + "\n");
    export_split(data.train, dir, "train");
    export_split(data.test, dir, "test");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset data;
    data.vocab = sem::Vocabulary::load(dir / "vocab.json");
    const auto gen = read_json_file(dir / "generator.json");
    try {
        data.spec = GeneratorSpec::from_json(gen.at("spec"));
        data.seed = gen.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("generator.json: " + std::string(e.what()));
    }
    data.train = import_split(dir, "train", data.vocab);
    data.test = import_split(dir, "test", data.vocab);
    return data;
}

}  // namespace cmdse::synth
