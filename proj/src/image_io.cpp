#include "franca/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace franca {

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Header {
    std::string magic;
    std::size_t width = 0, height = 0, maxval = 0;
    std::size_t offset = 0;
};

// Whitespace-separated header fields with '#' comments; exactly one
// whitespace byte separates maxval from the payload.
Header parse_header(const std::string& bytes, const std::string& origin) {
    Header h;
    std::size_t pos = 0;
    auto skip = [&] {
        while (pos < bytes.size()) {
            if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&](const char* what) {
        skip();
        const std::size_t start = pos;
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (v > (1u << 24)) throw FormatError(origin + ": " + what + " out of range");
            ++pos;
        }
        if (pos == start) throw FormatError(origin + ": malformed header, expected " + what);
        return v;
    };
    if (bytes.size() < 2) throw FormatError(origin + ": file too short for a header");
    h.magic = bytes.substr(0, 2);
    pos = 2;
    h.width = number("width");
    h.height = number("height");
    h.maxval = number("maxval");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw FormatError(origin + ": malformed header after maxval");
    h.offset = pos + 1;
    if (h.width == 0 || h.height == 0) throw FormatError(origin + ": zero image dimension");
    if (h.maxval != 255) throw FormatError(origin + ": maxval " + std::to_string(h.maxval) + " unsupported (need 255)");
    return h;
}

void write_bytes(const fs::path& path, const std::string& header, const std::vector<std::uint8_t>& payload) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out << header;
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!out) throw FormatError("write failed: " + path.string());
}

}  // namespace

Tensor decode_ppm(const std::string& bytes, const std::string& origin) {
    if (bytes.rfind("P3", 0) == 0) throw FormatError(origin + ": ASCII PPM (P3) is unsupported, need binary P6");
    if (bytes.rfind("P6", 0) != 0) throw FormatError(origin + ": not a binary PPM (P6) file");
    const Header h = parse_header(bytes, origin);
    const std::size_t n = h.width * h.height;
    if (bytes.size() - h.offset < 3 * n) throw FormatError(origin + ": truncated pixel payload");
    std::vector<double> v(3 * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            v[c * n + i] = static_cast<unsigned char>(bytes[h.offset + 3 * i + c]) / 255.0;
    round_to_precision(v);
    return Tensor({3, h.height, h.width}, std::move(v));
}

Tensor read_ppm(const fs::path& path) { return decode_ppm(slurp(path), path.string()); }

void write_ppm(const fs::path& path, const Tensor& chw) {
    if (chw.ndim() != 3 || chw.dim(0) != 3) throw ShapeError("write_ppm: expected [3, H, W], got " + shape_str(chw.shape()));
    const std::size_t hgt = chw.dim(1), wid = chw.dim(2), n = hgt * wid;
    std::vector<std::uint8_t> payload(3 * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            payload[3 * i + c] =
                static_cast<std::uint8_t>(std::lround(std::clamp(chw[c * n + i], 0.0, 1.0) * 255.0));
    write_bytes(path, "P6\n" + std::to_string(wid) + " " + std::to_string(hgt) + "\n255\n", payload);
}

ByteMap read_pgm(const fs::path& path) {
    const std::string bytes = slurp(path);
    if (bytes.rfind("P5", 0) != 0) throw FormatError(path.string() + ": not a binary PGM (P5) file");
    const Header h = parse_header(bytes, path.string());
    ByteMap map{h.height, h.width, {}};
    if (bytes.size() - h.offset < h.width * h.height) throw FormatError(path.string() + ": truncated pixel payload");
    map.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.offset),
                      bytes.begin() + static_cast<std::ptrdiff_t>(h.offset + h.width * h.height));
    return map;
}

void write_pgm(const fs::path& path, const ByteMap& map) {
    if (map.values.size() != map.height * map.width) throw ShapeError("write_pgm: value count does not match size");
    write_bytes(path, "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n", map.values);
}

ImageSet load_ppm_dir(const fs::path& root) {
    if (!fs::is_directory(root)) throw FormatError("not a directory: " + root.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
    if (files.empty()) throw FormatError("no .ppm images under " + root.string());
    std::sort(files.begin(), files.end());

    ImageSet set;
    std::map<std::string, int> classes;
    std::vector<std::string> first_component;
    for (const auto& f : files) {
        const fs::path rel = fs::relative(f, root);
        const bool nested = std::distance(rel.begin(), rel.end()) > 1;
        first_component.push_back(nested ? rel.begin()->string() : std::string());
        if (nested) classes.emplace(first_component.back(), 0);
        set.paths.push_back(rel.generic_string());
    }
    for (auto& [name, idx] : classes) {
        idx = static_cast<int>(set.class_names.size());
        set.class_names.push_back(name);
    }
    for (std::size_t i = 0; i < files.size(); ++i) {
        Tensor img = read_ppm(files[i]);
        if (!set.images.empty() && img.shape() != set.images.front().shape())
            throw FormatError(files[i].string() + ": dimensions " + shape_str(img.shape()) + " differ from " +
                              shape_str(set.images.front().shape()));
        set.images.push_back(std::move(img));
        set.labels.push_back(first_component[i].empty() ? -1 : classes.at(first_component[i]));
    }
    return set;
}

}  // namespace franca
