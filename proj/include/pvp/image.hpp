#pragma once

#include <cstddef>
#include <vector>

#include "pvp/error.hpp"

namespace pvp {

// H x W x 3 image, row-major with interleaved channels, values nominally in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int h, int w, double fill = 0.0)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3, fill) {
        if (h <= 0 || w <= 0) throw Error(ErrorKind::InvalidArgument, "image dimensions must be positive");
    }

    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3 +
               static_cast<std::size_t>(c);
    }
    double& at(int y, int x, int c) { return pixels[index(y, x, c)]; }
    double at(int y, int x, int c) const { return pixels[index(y, x, c)]; }
    std::size_t size() const { return pixels.size(); }
    bool same_dims(const Image& o) const { return height == o.height && width == o.width; }

    friend bool operator==(const Image&, const Image&) = default;
};

inline void require_same_dims(const Image& a, const Image& b) {
    if (!a.same_dims(b)) throw Error(ErrorKind::ShapeMismatch, "image dimension mismatch");
}

}  // namespace pvp
