#include "pvp/animation.hpp"

#include <cmath>
#include <fstream>

#include "pvp/binio.hpp"

namespace pvp {

std::vector<double> renormalize_driving(std::span<const double> x, const NormStats& driving, const NormStats& source) {
    if (driving.mean.size() != x.size() || driving.stddev.size() != x.size() || source.mean.size() != x.size() ||
        source.stddev.size() != x.size())
        throw Error(ErrorKind::ShapeMismatch, "renormalization stats size mismatch");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = (x[i] - driving.mean[i]) / std::max(driving.stddev[i], 1e-6) * source.stddev[i] + source.mean[i];
    return out;
}

DrivingSequence DrivingSequence::from_params(std::vector<FaceParams> frames) {
    DrivingSequence d;
    d.frames = std::move(frames);
    if (!d.frames.empty()) {
        d.driving_stats = jaw_expression_stats(d.frames);
        d.driving_pose_stats = pose_stats(d.frames);
    }
    return d;
}

std::vector<FaceParams> reenactment_params(const MapperBundle& bundle, const DrivingSequence& driving,
                                           const ReenactConfig& cfg) {
    if (driving.frames.empty()) return {};
    if (cfg.renormalize_expression && (driving.driving_stats.empty() || bundle.source_stats.empty()))
        throw Error(ErrorKind::InvalidArgument, "stats required for cross-subject driving");
    if (cfg.renormalize_pose && (driving.driving_pose_stats.empty() || bundle.source_pose_stats.empty()))
        throw Error(ErrorKind::InvalidArgument, "stats required for cross-subject driving");
    std::vector<FaceParams> out;
    out.reserve(driving.frames.size());
    for (const auto& f : driving.frames) {
        FaceParams p = f;
        if (cfg.renormalize_expression) {
            const auto je = f.jaw_expression();
            p.set_jaw_expression(renormalize_driving(je, driving.driving_stats, bundle.source_stats));
        }
        if (cfg.renormalize_pose) {
            const double pose[2] = {f.pitch_deg, f.yaw_deg};
            const auto r = renormalize_driving(pose, driving.driving_pose_stats, bundle.source_pose_stats);
            p.pitch_deg = r[0];
            p.yaw_deg = r[1];
        }
        out.push_back(p);
    }
    return out;
}

std::vector<Image> reenact(const MapperBundle& bundle, const DrivingSequence& driving, const ReenactConfig& cfg) {
    const auto ps = reenactment_params(bundle, driving, cfg);
    std::vector<Image> frames(ps.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(ps.size()); ++i)
        frames[static_cast<std::size_t>(i)] = render(bundle, ps[static_cast<std::size_t>(i)]);
    return frames;
}

LatentCode apply_edit(const LatentCode& w, const EditDirection& edit, double strength) {
    require_same_shape(w, edit.offset);
    LatentCode out = w;
    out.add_scaled(edit.offset, strength);
    return out;
}

void write_directions(std::ostream& os, const std::vector<EditDirection>& dirs) {
    binio::put_magic(os, "PVPD");
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(dirs.size()));
    for (const auto& d : dirs) {
        binio::put_string(os, d.name);
        binio::put<std::uint16_t>(os, static_cast<std::uint16_t>(d.offset.layers));
        binio::put<std::uint16_t>(os, static_cast<std::uint16_t>(d.offset.dims));
        binio::put_f32(os, d.offset.values);
    }
}

std::vector<EditDirection> read_directions(std::istream& is) {
    // A zero-length file is an empty direction list.
    if (is.peek() == std::char_traits<char>::eof()) return {};
    binio::expect_magic(is, "PVPD");
    const auto n = binio::get<std::uint32_t>(is);
    std::vector<EditDirection> out;
    for (std::uint32_t i = 0; i < n; ++i) {
        EditDirection d;
        d.name = binio::get_string(is, 4096);
        const int l = binio::get<std::uint16_t>(is);
        const int dd = binio::get<std::uint16_t>(is);
        d.offset = LatentCode(l, dd);
        d.offset.values = binio::get_f32(is, static_cast<std::size_t>(l) * dd);
        out.push_back(std::move(d));
    }
    return out;
}

void save_directions(const std::filesystem::path& path, const std::vector<EditDirection>& dirs) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::NotFound, "cannot write " + path.string());
    write_directions(os, dirs);
}

std::vector<EditDirection> validate_directions(std::vector<EditDirection> dirs, int layers, int dims) {
    for (const auto& d : dirs) {
        if (d.offset.layers != layers || d.offset.dims != dims)
            throw Error(ErrorKind::ShapeMismatch, "direction '" + d.name + "' is " + std::to_string(d.offset.layers) + "x" +
                                                      std::to_string(d.offset.dims) + ", expected " + std::to_string(layers) +
                                                      "x" + std::to_string(dims));
        if (!d.offset.finite()) throw Error(ErrorKind::Numeric, "direction '" + d.name + "' has non-finite entries");
    }
    return dirs;
}

std::vector<EditDirection> load_directions(const std::filesystem::path& path, int layers, int dims) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::NotFound, "cannot read " + path.string());
    return validate_directions(read_directions(is), layers, dims);
}

}  // namespace pvp
