#include "hoiedit/archive.hpp"

#include "hoiedit/backbone.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace hoiedit {

namespace {

constexpr char kMagic[8] = {'H', 'O', 'I', 'E', 'A', 'R', 'C', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[at + static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

void append_f32(std::vector<std::uint8_t>& out, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[i])));
    }
}

}  // namespace

void TensorArchive::put(const std::string& name, const Matrix& m) {
    for (auto& [n, t] : tensors_) {
        if (n == name) {
            t = m;
            snap_to_f32(t);
            return;
        }
    }
    tensors_.emplace_back(name, m);
    snap_to_f32(tensors_.back().second);
}

const Matrix& TensorArchive::get(const std::string& name) const {
    for (const auto& [n, t] : tensors_) {
        if (n == name) return t;
    }
    throw LookupError("archive has no tensor named '" + name + "'");
}

bool TensorArchive::contains(const std::string& name) const {
    for (const auto& [n, t] : tensors_) {
        if (n == name) return true;
    }
    return false;
}

std::vector<std::string> TensorArchive::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [n, t] : tensors_) {
        if (n.starts_with(prefix)) out.push_back(n);
    }
    return out;
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
    nlohmann::json manifest;
    manifest["format_version"] = kArchiveFormatVersion;
    manifest["meta"] = meta;
    nlohmann::json entries = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, m] : tensors_) {
        const std::uint64_t len = static_cast<std::uint64_t>(m.size()) * 4;
        entries.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}, {"length", len}});
        offset += len;
    }
    manifest["entries"] = std::move(entries);
    const std::string text = manifest.dump();

    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    out.reserve(out.size() + offset);
    for (const auto& [name, m] : tensors_) append_f32(out, m);
    return out;
}

TensorArchive TensorArchive::deserialize(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw FormatError("not a tensor archive (bad magic)");
    }
    const std::uint64_t mlen = get_u64(bytes, 8);
    if (16 + mlen > bytes.size()) throw FormatError("tensor archive manifest is truncated");
    const std::string text(reinterpret_cast<const char*>(bytes.data()) + 16, static_cast<std::size_t>(mlen));
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("tensor archive manifest is not JSON: ") + e.what());
    }
    if (manifest.value("format_version", 0) != kArchiveFormatVersion) {
        throw FormatError("unsupported tensor archive format version");
    }
    TensorArchive a;
    a.meta = manifest.at("meta");
    const std::size_t blob0 = 16 + static_cast<std::size_t>(mlen);
    for (const nlohmann::json& e : manifest.at("entries")) {
        const auto rows = e.at("shape").at(0).get<Eigen::Index>();
        const auto cols = e.at("shape").at(1).get<Eigen::Index>();
        const auto off = e.at("offset").get<std::uint64_t>();
        const auto len = e.at("length").get<std::uint64_t>();
        if (len != static_cast<std::uint64_t>(rows * cols) * 4 || blob0 + off + len > bytes.size()) {
            throw FormatError("tensor archive entry '" + e.at("name").get<std::string>() + "' is truncated");
        }
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = std::bit_cast<float>(get_u32(bytes, blob0 + off + static_cast<std::size_t>(i) * 4));
        }
        a.tensors_.emplace_back(e.at("name").get<std::string>(), std::move(m));
    }
    return a;
}

void TensorArchive::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

TensorArchive TensorArchive::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h) {
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

std::string config_hash(const nlohmann::json& config) {
    const std::string text = config.dump();
    return hex64(fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
}

std::string base_checksum(Denoiser& model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::vector<std::uint8_t> buf;
    for (const ParamRef& p : model.base_parameters()) {
        buf.assign(p.name.begin(), p.name.end());
        append_f32(buf, *p.value);
        h = fnv1a64(buf, h);
    }
    return hex64(h);
}

TensorArchive checkpoint_archive(Denoiser& model, const nlohmann::json& extra_meta) {
    TensorArchive a;
    a.meta = {{"kind", "base_checkpoint"}, {"denoiser", to_json(model.config())}};
    if (!extra_meta.is_null()) a.meta["info"] = extra_meta;
    for (const ParamRef& p : model.base_parameters()) a.put(p.name, *p.value);
    a.meta["checksum"] = base_checksum(model);
    return a;
}

void save_checkpoint(Denoiser& model, const std::filesystem::path& path, const nlohmann::json& extra_meta) {
    checkpoint_archive(model, extra_meta).save(path);
}

Denoiser denoiser_from_archive(const TensorArchive& archive) {
    if (archive.meta.value("kind", "") != "base_checkpoint") throw FormatError("archive is not a base checkpoint");
    Denoiser d = Denoiser::initialize(denoiser_config_from_json(archive.meta.at("denoiser")), 0);
    for (const ParamRef& p : d.base_parameters()) {
        const Matrix& m = archive.get(p.name);
        if (m.rows() != p.value->rows() || m.cols() != p.value->cols()) {
            throw FormatError("checkpoint tensor '" + p.name + "' has shape " + shape_str(m) + ", expected " +
                              shape_str(*p.value));
        }
        *p.value = m;
    }
    return d;
}

Denoiser load_checkpoint(const std::filesystem::path& path) { return denoiser_from_archive(TensorArchive::load(path)); }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LookupError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LookupError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace hoiedit
