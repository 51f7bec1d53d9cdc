#pragma once

// Named-tensor container used for base checkpoints and inversion artifacts:
//
//   "HOIEARC1" | u64 LE manifest length | manifest JSON | float32 LE blobs
//
// The manifest lists entries (name, shape, byte offset into the blob region)
// plus free-form metadata. Keys are serialized sorted and tensors in insertion
// order, so save -> load -> save reproduces the same bytes.

#include "hoiedit/common.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hoiedit {

class Denoiser;

inline constexpr int kArchiveFormatVersion = 1;

class TensorArchive {
public:
    nlohmann::json meta = nlohmann::json::object();

    void put(const std::string& name, const Matrix& m);
    const Matrix& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    const std::vector<std::pair<std::string, Matrix>>& tensors() const { return tensors_; }
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;

    std::vector<std::uint8_t> serialize() const;
    static TensorArchive deserialize(std::span<const std::uint8_t> bytes);

    void save(const std::filesystem::path& path) const;
    static TensorArchive load(const std::filesystem::path& path);

private:
    std::vector<std::pair<std::string, Matrix>> tensors_;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// Hash of the canonical (sorted-key, compact) JSON dump.
std::string config_hash(const nlohmann::json& config);

// Checksum over names and float32 bytes of every base tensor of a denoiser.
std::string base_checksum(Denoiser& model);

void save_checkpoint(Denoiser& model, const std::filesystem::path& path, const nlohmann::json& extra_meta = {});
TensorArchive checkpoint_archive(Denoiser& model, const nlohmann::json& extra_meta = {});
Denoiser load_checkpoint(const std::filesystem::path& path);
Denoiser denoiser_from_archive(const TensorArchive& archive);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace hoiedit
