#pragma once

#include <cmath>
#include <istream>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "handover/errors.hpp"

namespace handover::geometry {

using Point3 = Eigen::Vector3d;

/// Pinhole intrinsics. Defaults match a 640x480 depth camera with the
/// principal point at the image center.
struct CameraIntrinsics {
    double fx = 600.0;
    double fy = 600.0;
    double uc = 320.0;
    double vc = 240.0;
    int width = 640;
    int height = 480;

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0)) throw DomainError("focal lengths must be positive");
        if (width <= 0 || height <= 0) throw DomainError("image dimensions must be positive");
        if (uc < 0.0 || uc >= width || vc < 0.0 || vc >= height)
            throw DomainError("principal point outside image");
    }
};

/// One pixel with its range along the optical axis.
struct PixelObservation {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0; // meters
};

namespace detail {

inline double rotation_drift(const Eigen::Matrix3d& r) {
    return (r.transpose() * r - Eigen::Matrix3d::Identity()).norm();
}

/// Nearest rotation in Frobenius norm (polar factor via SVD).
inline Eigen::Matrix3d polar_orthonormalize(const Eigen::Matrix3d& r) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
    return u * v.transpose();
}

} // namespace detail

/// Rotation + translation. The rotation is kept orthonormal: construction
/// re-projects onto SO(3) when drift exceeds 1e-7 and rejects matrices that
/// are not close to a proper rotation.
class RigidTransform {
public:
    RigidTransform() : rotation_(Eigen::Matrix3d::Identity()), translation_(Point3::Zero()) {}

    RigidTransform(const Eigen::Matrix3d& rotation, const Point3& translation)
        : rotation_(rotation), translation_(translation) {
        const double drift = detail::rotation_drift(rotation_);
        if (drift > 1e-3) throw DomainError("matrix is not a rotation (orthonormality drift too large)");
        if (rotation_.determinant() < 0.0) throw DomainError("rotation has negative determinant");
        if (drift > 1e-7) rotation_ = detail::polar_orthonormalize(rotation_);
        if (!translation_.allFinite()) throw DomainError("translation has non-finite components");
    }

    static RigidTransform identity() { return {}; }

    const Eigen::Matrix3d& rotation() const { return rotation_; }
    const Point3& translation() const { return translation_; }

private:
    Eigen::Matrix3d rotation_;
    Point3 translation_;
};

/// Pixel + depth to a 3D point in the camera frame. Depth is the coordinate
/// along the optical axis, so the returned z equals the depth itself.
inline Point3 deproject(const CameraIntrinsics& intr, const PixelObservation& obs) {
    intr.validate();
    if (obs.u < 0.0 || obs.u >= intr.width || obs.v < 0.0 || obs.v >= intr.height)
        throw DomainError("pixel outside image bounds");
    if (!(obs.depth > 0.0)) throw DomainError("depth must be positive");
    return {obs.depth * (obs.u - intr.uc) / intr.fx,
            obs.depth * (obs.v - intr.vc) / intr.fy,
            obs.depth};
}

/// Inverse of deproject. The point must lie in front of the camera; the
/// resulting pixel may fall outside the image (callers check bounds).
inline PixelObservation project(const CameraIntrinsics& intr, const Point3& p) {
    intr.validate();
    if (!(p.z() > 0.0)) throw DomainError("point is behind the camera");
    return {intr.fx * p.x() / p.z() + intr.uc,
            intr.fy * p.y() / p.z() + intr.vc,
            p.z()};
}

/// Transform applying b first, then a.
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

inline Point3 apply(const RigidTransform& t, const Point3& p) {
    return t.rotation() * p + t.translation();
}

inline RigidTransform invert(const RigidTransform& t) {
    const Eigen::Matrix3d rt = t.rotation().transpose();
    return {rt, -(rt * t.translation())};
}

/// Full chain from pixel observation to the robot base frame:
/// P_base = ee_to_base * eye_to_hand * deproject(obs).
inline Point3 pixel_to_base(const CameraIntrinsics& intr, const PixelObservation& obs,
                            const RigidTransform& eye_to_hand, const RigidTransform& ee_to_base) {
    return apply(compose(ee_to_base, eye_to_hand), deproject(intr, obs));
}

/// Calibration bundle loaded from config. ee_to_base here is the static
/// fallback used with a fixed camera; with a wrist-mounted camera the live
/// end-effector pose replaces it every tick.
struct Calibration {
    CameraIntrinsics intrinsics;
    RigidTransform eye_to_hand;
    RigidTransform ee_to_base;
};

namespace detail {

inline RigidTransform transform_from_json(const nlohmann::json& j, const std::string& key) {
    if (!j.contains(key)) throw ConfigError("calibration missing field '" + key + "'");
    const auto& t = j.at(key);
    const auto rot = t.at("rotation").get<std::vector<double>>();
    const auto tra = t.at("translation").get<std::vector<double>>();
    if (rot.size() != 9) throw ConfigError("'" + key + "' rotation must have 9 row-major entries");
    if (tra.size() != 3) throw ConfigError("'" + key + "' translation must have 3 entries");
    Eigen::Matrix3d r;
    r << rot[0], rot[1], rot[2], rot[3], rot[4], rot[5], rot[6], rot[7], rot[8];
    return {r, Point3(tra[0], tra[1], tra[2])};
}

inline nlohmann::json transform_to_json(const RigidTransform& t) {
    std::vector<double> rot(9);
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) rot[std::size_t(i * 3 + k)] = t.rotation()(i, k);
    return {{"rotation", rot},
            {"translation", {t.translation().x(), t.translation().y(), t.translation().z()}}};
}

} // namespace detail

inline Calibration calibration_from_json(const nlohmann::json& j) {
    Calibration cal;
    if (j.contains("intrinsics")) {
        const auto& in = j.at("intrinsics");
        cal.intrinsics.fx = in.value("fx", cal.intrinsics.fx);
        cal.intrinsics.fy = in.value("fy", cal.intrinsics.fy);
        cal.intrinsics.uc = in.value("uc", cal.intrinsics.uc);
        cal.intrinsics.vc = in.value("vc", cal.intrinsics.vc);
        cal.intrinsics.width = in.value("width", cal.intrinsics.width);
        cal.intrinsics.height = in.value("height", cal.intrinsics.height);
    }
    cal.intrinsics.validate();
    cal.eye_to_hand = detail::transform_from_json(j, "eye_to_hand");
    cal.ee_to_base = detail::transform_from_json(j, "ee_to_base");
    return cal;
}

inline nlohmann::json calibration_to_json(const Calibration& cal) {
    return {{"intrinsics",
             {{"fx", cal.intrinsics.fx},
              {"fy", cal.intrinsics.fy},
              {"uc", cal.intrinsics.uc},
              {"vc", cal.intrinsics.vc},
              {"width", cal.intrinsics.width},
              {"height", cal.intrinsics.height}}},
            {"eye_to_hand", detail::transform_to_json(cal.eye_to_hand)},
            {"ee_to_base", detail::transform_to_json(cal.ee_to_base)}};
}

inline Calibration load_calibration(std::istream& in) {
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("calibration file is not valid JSON: ") + e.what());
    }
    return calibration_from_json(j);
}

} // namespace handover::geometry
