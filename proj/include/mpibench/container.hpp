#pragma once

// On-disk container: a `manifest.json` next to one little-endian float64
// file per array. The manifest records format name, version, array shapes,
// dtype and the SHA-256 of every array file.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpibench/linalg.hpp"

namespace mpibench {

using json = nlohmann::json;

inline constexpr const char* kContainerFormat = "mpibench";
inline constexpr int kContainerVersion = 1;

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& file);

class ContainerWriter {
public:
    ContainerWriter(std::filesystem::path dir, std::string kind);

    void add(const std::string& name, const Matrix& m);
    void add(const std::string& name, const Vector& v);
    void add(const std::string& name, const std::vector<double>& v, std::vector<std::size_t> shape);
    json& metadata() { return manifest_["metadata"]; }

    /// Writes the manifest; returns its SHA-256.
    std::string finish();

private:
    std::filesystem::path dir_;
    json manifest_;
};

class ContainerReader {
public:
    /// Parses and validates the manifest. Array checksums are verified lazily on read.
    explicit ContainerReader(std::filesystem::path dir);

    const std::string& kind() const { return kind_; }
    bool has(const std::string& name) const;
    std::vector<std::size_t> shape(const std::string& name) const;
    std::vector<double> raw(const std::string& name) const;
    Matrix matrix(const std::string& name) const;
    Vector vector(const std::string& name) const;
    const json& metadata() const { return manifest_.at("metadata"); }

private:
    std::filesystem::path dir_;
    json manifest_;
    std::string kind_;
};

}  // namespace mpibench
