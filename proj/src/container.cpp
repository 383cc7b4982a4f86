#include "mpibench/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace mpibench {

namespace fs = std::filesystem;

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256: digest failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
}

namespace {

std::string read_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw MissingArrayError("cannot open " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& file, const std::string& bytes) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + file.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + file.string());
}

}  // namespace

std::string sha256_file(const fs::path& file) { return sha256_hex(read_file(file)); }

ContainerWriter::ContainerWriter(fs::path dir, std::string kind) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw DataError("cannot create " + dir_.string() + ": " + ec.message());
    manifest_["format"] = kContainerFormat;
    manifest_["version"] = kContainerVersion;
    manifest_["kind"] = std::move(kind);
    manifest_["arrays"] = json::object();
    manifest_["metadata"] = json::object();
}

void ContainerWriter::add(const std::string& name, const std::vector<double>& v, std::vector<std::size_t> shape) {
    std::size_t count = 1;
    for (auto s : shape) count *= s;
    if (count != v.size()) throw DimensionError("container array '" + name + "': shape does not match data length");
    std::string bytes(v.size() * sizeof(double), '\0');
    if (!v.empty()) std::memcpy(bytes.data(), v.data(), bytes.size());
    const std::string file = name + ".f64";
    write_file(dir_ / file, bytes);
    manifest_["arrays"][name] = {{"file", file}, {"shape", shape}, {"dtype", "<f8"}, {"sha256", sha256_hex(bytes)}};
}

void ContainerWriter::add(const std::string& name, const Matrix& m) {
    std::vector<double> data(m.data(), m.data() + m.size());
    add(name, data, {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
}

void ContainerWriter::add(const std::string& name, const Vector& v) {
    std::vector<double> data(v.data(), v.data() + v.size());
    add(name, data, {static_cast<std::size_t>(v.size())});
}

std::string ContainerWriter::finish() {
    const std::string text = manifest_.dump(2) + "\n";
    write_file(dir_ / "manifest.json", text);
    return sha256_hex(text);
}

ContainerReader::ContainerReader(fs::path dir) : dir_(std::move(dir)) {
    const fs::path mpath = dir_ / "manifest.json";
    if (!fs::exists(mpath)) throw DataError("no manifest.json in " + dir_.string());
    try {
        manifest_ = json::parse(read_file(mpath));
    } catch (const json::exception& e) {
        throw DataError("malformed manifest " + mpath.string() + ": " + e.what());
    }
    if (manifest_.value("format", std::string{}) != kContainerFormat) {
        throw DataError(mpath.string() + ": not an mpibench container");
    }
    const int version = manifest_.value("version", -1);
    if (version != kContainerVersion) {
        throw VersionError(mpath.string() + ": unsupported container version " + std::to_string(version) +
                           " (expected " + std::to_string(kContainerVersion) + ")");
    }
    kind_ = manifest_.value("kind", std::string{});
    if (!manifest_.contains("arrays") || !manifest_["arrays"].is_object()) {
        throw DataError(mpath.string() + ": manifest lists no arrays");
    }
    if (!manifest_.contains("metadata")) manifest_["metadata"] = json::object();
}

bool ContainerReader::has(const std::string& name) const { return manifest_["arrays"].contains(name); }

std::vector<std::size_t> ContainerReader::shape(const std::string& name) const {
    if (!has(name)) throw MissingArrayError("container " + dir_.string() + " has no array '" + name + "'");
    return manifest_["arrays"][name]["shape"].get<std::vector<std::size_t>>();
}

std::vector<double> ContainerReader::raw(const std::string& name) const {
    if (!has(name)) throw MissingArrayError("container " + dir_.string() + " has no array '" + name + "'");
    const json& entry = manifest_["arrays"][name];
    const fs::path file = dir_ / entry.at("file").get<std::string>();
    if (!fs::exists(file)) throw MissingArrayError("array file missing: " + file.string());
    const std::string bytes = read_file(file);
    if (sha256_hex(bytes) != entry.at("sha256").get<std::string>()) {
        throw ChecksumError("checksum mismatch in " + file.string());
    }
    if (entry.value("dtype", std::string{}) != "<f8") throw DataError(file.string() + ": unsupported dtype");
    std::size_t count = 1;
    for (auto s : shape(name)) count *= s;
    if (bytes.size() != count * sizeof(double)) throw DataError(file.string() + ": size does not match shape");
    std::vector<double> out(count);
    if (count) std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

Matrix ContainerReader::matrix(const std::string& name) const {
    const auto s = shape(name);
    if (s.size() != 2) throw DataError("array '" + name + "' is not two-dimensional");
    const auto data = raw(name);
    Matrix m(static_cast<Eigen::Index>(s[0]), static_cast<Eigen::Index>(s[1]));
    if (!data.empty()) std::memcpy(m.data(), data.data(), data.size() * sizeof(double));
    return m;
}

Vector ContainerReader::vector(const std::string& name) const {
    const auto data = raw(name);
    Vector v(static_cast<Eigen::Index>(data.size()));
    if (!data.empty()) std::memcpy(v.data(), data.data(), data.size() * sizeof(double));
    return v;
}

}  // namespace mpibench
