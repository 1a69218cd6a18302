#include "pvp/generator.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <mutex>

#include "pvp/binio.hpp"
#include "pvp/toy_generator.hpp"

namespace pvp {

namespace {

constexpr std::uint16_t kCheckpointVersion = 1;

struct Registry {
    std::mutex mu;
    std::map<std::string, BackendFactory> factories;
};

Registry& registry() {
    static Registry r;
    return r;
}

BackendFactory find_factory(const std::string& kind) {
    if (kind == ToyGenerator::kKind) {
        return [](const GeneratorProfile& profile) -> std::unique_ptr<GeneratorBackend> {
            return std::make_unique<ToyGenerator>(ToyGeneratorSpec::from_profile(profile));
        };
    }
    auto& r = registry();
    std::lock_guard lock(r.mu);
    auto it = r.factories.find(kind);
    if (it == r.factories.end()) throw Error(ErrorKind::Unavailable, "no generator backend registered for kind '" + kind + "'");
    return it->second;
}

}  // namespace

void GeneratorBackend::require_profile(const LatentCode& w) const {
    if (w.layers != profile().layers || w.dims != profile().dims)
        throw Error(ErrorKind::ShapeMismatch, "latent shape mismatch");
}

std::unique_ptr<GeneratorBackend> clone_backend(const GeneratorBackend& backend) { return backend.clone(); }

std::uint64_t parameter_checksum(const GeneratorBackend& backend) {
    std::uint64_t h = 1469598103934665603ull;
    for (double v : backend.parameters()) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 1099511628211ull;
        }
    }
    return h;
}

void save_checkpoint(const std::filesystem::path& path, const GeneratorBackend& backend) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::NotFound, "cannot write " + path.string());
    const auto& p = backend.profile();
    binio::put_magic(os, "PVPG");
    binio::put<std::uint16_t>(os, kCheckpointVersion);
    binio::put_string(os, backend.kind());
    for (int v : {p.layers, p.dims, p.height, p.width, p.geometry_layers}) binio::put<std::uint16_t>(os, static_cast<std::uint16_t>(v));
    const auto params = backend.parameters();
    binio::put<std::uint64_t>(os, params.size());
    binio::put_f32(os, params);
}

std::unique_ptr<GeneratorBackend> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::NotFound, "cannot read " + path.string());
    binio::expect_magic(is, "PVPG");
    const auto version = binio::get<std::uint16_t>(is);
    if (version != kCheckpointVersion)
        throw Error(ErrorKind::Format, "PVPG version mismatch: expected " + std::to_string(kCheckpointVersion) + ", found " +
                                           std::to_string(version));
    const std::string kind = binio::get_string(is, 256);
    GeneratorProfile p;
    p.layers = binio::get<std::uint16_t>(is);
    p.dims = binio::get<std::uint16_t>(is);
    p.height = binio::get<std::uint16_t>(is);
    p.width = binio::get<std::uint16_t>(is);
    p.geometry_layers = binio::get<std::uint16_t>(is);
    const auto count = binio::get<std::uint64_t>(is);
    auto backend = find_factory(kind)(p);
    auto dst = backend->mutable_parameters();
    if (dst.size() != count) throw Error(ErrorKind::Format, "checkpoint parameter count does not match backend profile");
    const auto values = binio::get_f32(is, count);
    std::copy(values.begin(), values.end(), dst.begin());
    return backend;
}

void register_backend(const std::string& kind, BackendFactory factory) {
    auto& r = registry();
    std::lock_guard lock(r.mu);
    r.factories[kind] = std::move(factory);
}

}  // namespace pvp
