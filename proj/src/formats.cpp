#include "franca/formats.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace franca {

namespace fs = std::filesystem;

namespace {

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_tensor_body(std::string& out, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) {
        if (d > UINT32_MAX) throw FormatError("dimension too large for the on-disk format");
        put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (double v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class Reader {
public:
    Reader(std::string bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) throw FormatError(origin_ + ": truncated file while reading " + what);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        const auto v = static_cast<std::uint16_t>(static_cast<unsigned char>(bytes_[pos_]) |
                                                  (static_cast<unsigned char>(bytes_[pos_ + 1]) << 8));
        pos_ += 2;
        return v;
    }
    std::string raw(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Tensor tensor_body(const std::string& name) {
        const std::uint32_t nd = u32("ndims");
        if (nd > 16) throw FormatError(origin_ + ": implausible rank " + std::to_string(nd) + " for " + name);
        Shape shape(nd);
        std::size_t count = 1;
        for (auto& d : shape) {
            d = u32("dims");
            if (d == 0) throw FormatError(origin_ + ": zero dimension in " + name);
            count *= d;
        }
        need(4 * count, "payload");
        std::vector<double> v(count);
        for (auto& x : v) x = static_cast<double>(std::bit_cast<float>(u32("payload")));
        return Tensor(std::move(shape), std::move(v));
    }
    bool done() const { return pos_ == bytes_.size(); }
    const std::string& origin() const { return origin_; }

private:
    std::string bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

Reader open_reader(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return Reader(ss.str(), path.string());
}

void expect_header(Reader& r, const char* magic, std::uint32_t version) {
    const std::string m = r.raw(4, "magic");
    if (m != magic) throw FormatError(r.origin() + ": bad magic, expected " + magic);
    const std::uint32_t v = r.u32("version");
    if (v != version)
        throw FormatError(r.origin() + ": unsupported version " + std::to_string(v) + " (expected " +
                          std::to_string(version) + ")");
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw FormatError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_feature_file(const fs::path& path, const Tensor& t) {
    std::string out = "FRNK";
    put_u32(out, kFeatureFileVersion);
    put_tensor_body(out, t);
    write_file_atomic(path, out);
}

Tensor read_feature_file(const fs::path& path) {
    Reader r = open_reader(path);
    expect_header(r, "FRNK", kFeatureFileVersion);
    Tensor t = r.tensor_body("features");
    if (!r.done()) throw FormatError(path.string() + ": trailing bytes after payload");
    return t;
}

void write_checkpoint(const fs::path& path, const NamedTensors& tensors) {
    std::string out = "FRCK";
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.empty() || name.size() > UINT16_MAX) throw FormatError("invalid tensor name length: '" + name + "'");
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        put_tensor_body(out, t);
    }
    write_file_atomic(path, out);
}

NamedTensors read_checkpoint(const fs::path& path) {
    Reader r = open_reader(path);
    expect_header(r, "FRCK", kCheckpointVersion);
    const std::uint32_t count = r.u32("tensor count");
    NamedTensors out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t len = r.u16("name length");
        std::string name = r.raw(len, "name");
        Tensor t = r.tensor_body(name);
        if (!out.emplace(name, std::move(t)).second) throw FormatError(path.string() + ": duplicate tensor '" + name + "'");
    }
    if (!r.done()) throw FormatError(path.string() + ": trailing bytes after the last tensor");
    return out;
}

}  // namespace franca
