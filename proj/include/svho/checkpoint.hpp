#pragma once

// Checkpoint directory layout: manifest.json describing the model kind and
// hyperparameters, plus one raw little-endian f32 blob per named parameter
// under params/, and the codebook blob when the model carries one.

#include <filesystem>

#include <nlohmann/json.hpp>

#include "svho/codebook.hpp"
#include "svho/core.hpp"
#include "svho/nn.hpp"

namespace svho {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr int kCheckpointFormatVersion = 1;

// Parameter names become file names; keep them path-safe.
inline std::string param_file_name(const std::string& name) {
    std::string out = name;
    for (char& c : out)
        if (c == '/' || c == '\\') c = '_';
    return out + ".f32";
}

inline void save_param_blobs(const std::vector<nn::Param*>& params, const fs::path& dir,
                             json& manifest_params) {
    fs::create_directories(dir);
    for (const nn::Param* p : params) {
        write_f32_le(dir / param_file_name(p->name), p->value);
        manifest_params.push_back({{"name", p->name}, {"shape", p->shape}});
    }
}

inline void load_param_blobs(const std::vector<nn::Param*>& params, const fs::path& dir,
                             const json& manifest_params) {
    std::unordered_map<std::string, std::vector<int>> declared;
    for (const auto& entry : manifest_params)
        declared[entry.at("name").get<std::string>()] = entry.at("shape").get<std::vector<int>>();
    for (nn::Param* p : params) {
        auto it = declared.find(p->name);
        if (it == declared.end())
            throw std::runtime_error("checkpoint is missing parameter: " + p->name);
        if (it->second != p->shape)
            throw std::runtime_error("checkpoint shape mismatch for parameter: " + p->name);
        std::vector<float> blob = read_f32_le(dir / param_file_name(p->name));
        if (blob.size() != p->size())
            throw std::runtime_error("checkpoint blob size mismatch for parameter: " + p->name);
        p->value = std::move(blob);
    }
}

inline void save_codebook_blob(const Codebook& book, const fs::path& dir, json& manifest) {
    write_f32_le(dir / "codebook.f32", book.raw_entries());
    manifest["codebook"] = {{"size", book.size()},
                            {"dim", book.dim()},
                            {"restart_interval", book.restart_interval()},
                            {"batches_since_restart", book.batches_since_restart()},
                            {"file", "codebook.f32"}};
}

inline Codebook load_codebook_blob(const fs::path& dir, const json& manifest) {
    const json& cb = manifest.at("codebook");
    Codebook book(cb.at("size").get<int>(), cb.at("dim").get<int>(), 0,
                  cb.at("restart_interval").get<long>());
    std::vector<float> blob = read_f32_le(dir / cb.at("file").get<std::string>());
    if (blob.size() != book.raw_entries().size())
        throw std::runtime_error("codebook blob size mismatch");
    book.raw_entries() = std::move(blob);
    book.set_state(cb.at("restart_interval").get<long>(),
                   cb.at("batches_since_restart").get<long>());
    return book;
}

inline void write_manifest(const fs::path& dir, const json& manifest) {
    fs::create_directories(dir);
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline json read_manifest(const fs::path& dir) {
    fs::path p = dir / "manifest.json";
    if (!fs::exists(p)) throw std::runtime_error("no checkpoint manifest at " + p.string());
    json manifest = json::parse(read_text_file(p));
    int version = manifest.value("format_version", -1);
    if (version != kCheckpointFormatVersion)
        throw std::runtime_error("unsupported checkpoint format version");
    return manifest;
}

}  // namespace svho
