#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace bdrseg {

/// One sample of a dataset or prediction set. Paths are relative to the
/// directory holding the manifest; empty means "not present".
struct ManifestRecord {
    std::string id;
    std::string image_path;
    std::string mask_path;
    std::string dmap_path;
    std::string split; ///< "train" or "test"

    friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct Manifest {
    std::filesystem::path root;
    std::vector<ManifestRecord> records;

    std::filesystem::path resolve(const std::string& relative) const { return root / relative; }

    std::vector<ManifestRecord> split(const std::string& name) const
    {
        std::vector<ManifestRecord> out;
        for (const auto& r : records)
            if (r.split == name)
                out.push_back(r);
        return out;
    }

    const ManifestRecord* find(const std::string& id) const
    {
        for (const auto& r : records)
            if (r.id == id)
                return &r;
        return nullptr;
    }
};

inline constexpr const char* kManifestName = "manifest.jsonl";

/// One JSON object per line with keys id, image_path, mask_path, dmap_path, split.
inline std::string format_manifest(const std::vector<ManifestRecord>& records)
{
    std::string out;
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["image_path"] = r.image_path;
        j["mask_path"] = r.mask_path;
        j["dmap_path"] = r.dmap_path;
        j["split"] = r.split;
        out += j.dump() + "\n";
    }
    return out;
}

inline std::vector<ManifestRecord> parse_manifest(const std::string& text)
{
    std::vector<ManifestRecord> records;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ManifestRecord r;
            r.id = j.at("id").get<std::string>();
            r.image_path = j.value("image_path", "");
            r.mask_path = j.value("mask_path", "");
            r.dmap_path = j.value("dmap_path", "");
            r.split = j.value("split", "");
            records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::MalformedHeader, "manifest line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return records;
}

inline void write_manifest(const std::filesystem::path& dir, const std::vector<ManifestRecord>& records)
{
    std::ofstream out(dir / kManifestName, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorKind::IoFailure, "cannot write manifest in " + dir.string());
    out << format_manifest(records);
    if (!out)
        fail(ErrorKind::IoFailure, "write error on manifest in " + dir.string());
}

/// Accepts either a manifest file or a directory containing manifest.jsonl.
inline Manifest read_manifest(const std::filesystem::path& path)
{
    const auto file = std::filesystem::is_directory(path) ? path / kManifestName : path;
    std::ifstream in(file, std::ios::binary);
    if (!in)
        fail(ErrorKind::IoFailure, "cannot open manifest " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return Manifest{file.parent_path(), parse_manifest(ss.str())};
}

} // namespace bdrseg
