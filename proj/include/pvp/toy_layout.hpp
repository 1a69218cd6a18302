#pragma once

// Face layout of the toy renderer, in a 64x64 reference frame. The same
// geometry drives the procedural sketch and the published eye/mouth
// rectangles, so masks line up with rendered features exactly.

#include <cmath>
#include <numbers>

#include "pvp/dual.hpp"
#include "pvp/faceparams.hpp"

namespace pvp::toy {

inline constexpr double kReferenceSize = 64.0;

// Sketch-driving parameters, in this order, are the dual slots of the renderer.
enum GeometrySlot { kYaw = 0, kPitch, kJawOpen, kBrowLeft, kBrowRight, kMouthWidth, kEyeOpen, kGeometrySlots };

// Index of each slot in the flattened 58-vector.
inline constexpr int kGeometryParamIndex[kGeometrySlots] = {0, 1, 5, 8, 9, 10, 11};

template <typename T>
struct FaceGeometry {
    T head_cx, head_cy, head_rx, head_ry;
    T eye_lx, eye_rx, eye_y, eye_radx, eye_rady;
    T brow_ly, brow_ry, brow_radx, brow_rady;
    T mouth_x, mouth_y, mouth_radx, mouth_rady;
};

// Arguments: yaw/pitch in degrees, then jaw0 (rad) and expression 0..3.
template <typename T>
FaceGeometry<T> face_geometry(const T& yaw_deg, const T& pitch_deg, const T& jaw_open, const T& brow_l, const T& brow_r,
                              const T& mouth_w, const T& eye_open) {
    using std::cos;
    using std::sin;
    using std::sqrt;
    using std::tanh;
    constexpr double to_rad = std::numbers::pi / 180.0;
    const T yaw = yaw_deg * to_rad;
    const T pitch = pitch_deg * to_rad;
    const T sy = sin(yaw);
    const T cy = cos(yaw);
    const T sp = sin(pitch);

    FaceGeometry<T> g;
    g.head_cx = 32.0 + 14.0 * sy;
    g.head_cy = 34.0 - 8.0 * sp;
    g.head_rx = 12.0 + 3.0 * cy;
    g.head_ry = T(17.0);
    const T feature_x = g.head_cx + 6.0 * sy;
    g.eye_lx = feature_x - 6.0 * cy;
    g.eye_rx = feature_x + 6.0 * cy;
    g.eye_y = g.head_cy - 4.0 - 2.0 * sp;
    g.eye_radx = 1.2 + 1.0 * cy;
    g.eye_rady = 0.6 + 1.4 * sigmoid(eye_open);
    g.brow_ly = g.eye_y - 3.5 - 1.2 * brow_l;
    g.brow_ry = g.eye_y - 3.5 - 1.2 * brow_r;
    g.brow_radx = 2.5 + 0.8 * cy;
    g.brow_rady = T(0.9);
    g.mouth_x = feature_x;
    g.mouth_y = g.head_cy + 8.0 - 2.0 * sp;
    g.mouth_radx = 4.5 + 1.5 * tanh(mouth_w);
    g.mouth_rady = 0.7 + 6.0 * sqrt(jaw_open * jaw_open + 1e-4);
    return g;
}

inline FaceGeometry<double> face_geometry(const FaceParams& p) {
    return face_geometry<double>(p.yaw_deg, p.pitch_deg, p.jaw[0], p.expression[0], p.expression[1], p.expression[2],
                                 p.expression[3]);
}

// Eye and mouth exclusion rectangles published by the toy layout.
class ToyFaceLayout : public FaceLayout {
public:
    struct Rects {
        PixelRect left_eye, right_eye, mouth;
    };
    static Rects rects(const FaceParams& params, int height, int width);
    std::vector<LabeledRegion> excluded_regions(const FaceParams& params, int height, int width) const override;
};

}  // namespace pvp::toy
