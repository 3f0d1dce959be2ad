#include "tadsr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tadsr/error.hpp"

namespace tadsr {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "weights.bin is written in host byte order");

nlohmann::json arch_to_json(const ArchDescriptor& a) {
    return {{"image_channels", a.image_channels},   {"image_size", a.image_size},
            {"latent_channels", a.latent_channels}, {"encoder_channels", a.encoder_channels},
            {"unet_channels", a.unet_channels},     {"time_freq_dim", a.time_freq_dim},
            {"time_embed_dim", a.time_embed_dim},   {"probe_channels", a.probe_channels}};
}

ArchDescriptor arch_from_json(const nlohmann::json& j) {
    ArchDescriptor a;
    try {
        a.image_channels = j.at("image_channels").get<int>();
        a.image_size = j.at("image_size").get<int>();
        a.latent_channels = j.at("latent_channels").get<int>();
        a.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
        a.unet_channels = j.at("unet_channels").get<std::vector<int>>();
        a.time_freq_dim = j.at("time_freq_dim").get<int>();
        a.time_embed_dim = j.at("time_embed_dim").get<int>();
        a.probe_channels = j.at("probe_channels").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid architecture descriptor: ") + e.what());
    }
    a.validate();
    return a;
}

namespace {

void write_file(const fs::path& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size))) {
        throw IoError("cannot write " + path.string());
    }
}

void write_text(const fs::path& path, const std::string& text) { write_file(path, text.data(), text.size()); }

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed " + path.string() + ": " + e.what());
    }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ParamStore& store, nlohmann::json config) {
    const fs::path parent = dir.parent_path().empty() ? fs::path(".") : dir.parent_path();
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) throw IoError("cannot create " + parent.string() + ": " + ec.message());
    const fs::path tmp = parent / (dir.filename().string() + ".tmp");
    const fs::path old = parent / (dir.filename().string() + ".old");
    fs::remove_all(tmp);
    fs::create_directory(tmp, ec);
    if (ec) throw IoError("cannot create " + tmp.string() + ": " + ec.message());

    nlohmann::json manifest = nlohmann::json::array();
    std::vector<char> blob;
    blob.reserve(store.total_numel() * sizeof(float));
    for (const auto& e : store.entries()) {
        const std::size_t bytes = e.tensor.numel() * sizeof(float);
        manifest.push_back({{"name", e.name},
                            {"dtype", "f32"},
                            {"shape", e.tensor.shape()},
                            {"offset", blob.size()},
                            {"length", bytes}});
        const char* p = reinterpret_cast<const char*>(e.tensor.data());
        blob.insert(blob.end(), p, p + bytes);
    }
    config["arch"] = arch_to_json(store.arch());
    write_text(tmp / "manifest.json", manifest.dump(1));
    write_file(tmp / "weights.bin", blob.data(), blob.size());
    write_text(tmp / "config.json", config.dump(1));

    fs::remove_all(old);
    if (fs::exists(dir)) fs::rename(dir, old);
    fs::rename(tmp, dir);
    fs::remove_all(old);
}

bool checkpoint_exists(const fs::path& dir) {
    return fs::exists(dir / "manifest.json") && fs::exists(dir / "weights.bin") && fs::exists(dir / "config.json");
}

Checkpoint load_checkpoint(const fs::path& dir) {
    if (!checkpoint_exists(dir)) throw IoError("no checkpoint at " + dir.string());
    Checkpoint ck;
    ck.config = read_json(dir / "config.json");
    const nlohmann::json manifest = read_json(dir / "manifest.json");

    std::ifstream in(dir / "weights.bin", std::ios::binary);
    std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    ck.store = ParamStore(arch_from_json(ck.config.at("arch")));
    for (const auto& row : manifest) {
        if (row.at("dtype") != "f32") throw IoError("unsupported dtype in " + dir.string());
        const auto shape = row.at("shape").get<std::vector<int>>();
        const auto offset = row.at("offset").get<std::size_t>();
        const auto length = row.at("length").get<std::size_t>();
        if (length != shape_numel(shape) * sizeof(float) || offset + length > blob.size()) {
            throw IoError("corrupt manifest entry " + row.at("name").get<std::string>());
        }
        Tensor t(shape);
        std::memcpy(t.data(), blob.data() + offset, length);
        ck.store.add(row.at("name").get<std::string>(), std::move(t));
    }
    return ck;
}

}  // namespace tadsr
