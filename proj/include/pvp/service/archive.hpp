#pragma once

// Single-file avatar archive ("PVPA"):
//   magic, version u16, source record (u32 length + JSON), count u32,
//   then per entry {relative path (u32 length + UTF-8), size u64, bytes}.
// Holds manifold/, bundle/ and, when present, directions.pvpd and driving/.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pvp::service {

inline constexpr std::uint16_t kArchiveVersion = 1;

struct ArchiveEntry {
    std::string path;  // relative, '/'-separated
    std::string bytes;
};

struct Archive {
    std::string record_json;
    std::vector<ArchiveEntry> entries;
};

std::string write_archive(const Archive& a);
// Validates magic, version and entry paths. Version errors name expected and found versions.
Archive read_archive(const std::string& bytes);

// Collects the exportable files of an avatar directory.
Archive collect_archive(const std::filesystem::path& avatar_dir, const std::string& record_json);
void extract_archive(const Archive& a, const std::filesystem::path& avatar_dir);

}  // namespace pvp::service
