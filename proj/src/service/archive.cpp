#include "pvp/service/archive.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "pvp/binio.hpp"

namespace pvp::service {

namespace fs = std::filesystem;

namespace {

bool safe_path(const std::string& p) {
    if (p.empty() || p.front() == '/' || p.find('\\') != std::string::npos) return false;
    for (const auto& part : fs::path(p))
        if (part == ".." || part == ".") return false;
    return true;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw Error(ErrorKind::NotFound, "cannot read " + p.string());
    return {std::istreambuf_iterator<char>(is), {}};
}

void add_tree(Archive& a, const fs::path& root, const std::string& sub) {
    const auto dir = root / sub;
    if (!fs::exists(dir)) return;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) a.entries.push_back({fs::relative(f, root).generic_string(), slurp(f)});
}

}  // namespace

std::string write_archive(const Archive& a) {
    std::ostringstream os(std::ios::binary);
    binio::put_magic(os, "PVPA");
    binio::put<std::uint16_t>(os, kArchiveVersion);
    binio::put_string(os, a.record_json);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.entries.size()));
    for (const auto& e : a.entries) {
        if (!safe_path(e.path)) throw Error(ErrorKind::InvalidArgument, "archive entry path not relative: " + e.path);
        binio::put_string(os, e.path);
        binio::put<std::uint64_t>(os, e.bytes.size());
        os.write(e.bytes.data(), static_cast<std::streamsize>(e.bytes.size()));
    }
    return os.str();
}

Archive read_archive(const std::string& bytes) {
    std::istringstream is(bytes, std::ios::binary);
    binio::expect_magic(is, "PVPA");
    const auto v = binio::get<std::uint16_t>(is);
    if (v != kArchiveVersion)
        throw Error(ErrorKind::Format, "archive version mismatch: expected " + std::to_string(kArchiveVersion) + ", found " +
                                           std::to_string(v));
    Archive a;
    a.record_json = binio::get_string(is);
    const auto n = binio::get<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        ArchiveEntry e;
        e.path = binio::get_string(is, 4096);
        if (!safe_path(e.path)) throw Error(ErrorKind::Format, "archive entry path rejected: " + e.path);
        const auto size = binio::get<std::uint64_t>(is);
        if (size > bytes.size()) throw Error(ErrorKind::Format, "archive entry larger than the archive");
        e.bytes.resize(size);
        is.read(e.bytes.data(), static_cast<std::streamsize>(size));
        if (!is) throw Error(ErrorKind::Format, "truncated archive entry: " + e.path);
        a.entries.push_back(std::move(e));
    }
    if (is.peek() != std::char_traits<char>::eof()) throw Error(ErrorKind::Format, "trailing bytes after archive");
    return a;
}

Archive collect_archive(const fs::path& avatar_dir, const std::string& record_json) {
    Archive a;
    a.record_json = record_json;
    add_tree(a, avatar_dir, "manifold");
    add_tree(a, avatar_dir, "bundle");
    add_tree(a, avatar_dir, "driving");
    if (fs::exists(avatar_dir / "directions.pvpd")) a.entries.push_back({"directions.pvpd", slurp(avatar_dir / "directions.pvpd")});
    return a;
}

void extract_archive(const Archive& a, const fs::path& avatar_dir) {
    for (const auto& e : a.entries) {
        const auto p = avatar_dir / fs::path(e.path);
        fs::create_directories(p.parent_path());
        std::ofstream os(p, std::ios::binary);
        if (!os) throw Error(ErrorKind::Unavailable, "cannot write " + p.string());
        os.write(e.bytes.data(), static_cast<std::streamsize>(e.bytes.size()));
    }
}

}  // namespace pvp::service
