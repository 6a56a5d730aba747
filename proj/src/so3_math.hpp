#ifndef MAGCAL_SO3_MATH_HPP
#define MAGCAL_SO3_MATH_HPP

#include <Eigen/Dense>

#include <utility>
#include <vector>

namespace magcal {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Direction-cosine matrix. Kept as a plain 3x3; functions returning a Dcm
// guarantee orthonormality (||D^T D - I||_F < 1e-9) and det = +1.
using Dcm = Mat3;

// Upper-triangular 3x3 with strictly positive diagonal.
using UpperTriangular3 = Mat3;

inline constexpr double kDegPerRad = 180.0 / 3.14159265358979323846;
inline constexpr double kRadPerDeg = 3.14159265358979323846 / 180.0;

inline double deg2rad(double deg) { return deg * kRadPerDeg; }
inline double rad2deg(double rad) { return rad * kDegPerRad; }
inline Vec3 deg2rad(const Vec3& v) { return v * kRadPerDeg; }
inline Vec3 rad2deg(const Vec3& v) { return v * kDegPerRad; }

namespace so3 {

/// Skew-symmetric matrix such that skew(v) * w == v.cross(w).
Mat3 skew(const Vec3& v);

/// Inverse of skew(); takes the antisymmetric part if the input drifted.
Vec3 unskew(const Mat3& m);

/// Rodrigues formula, exp of the rotation vector phi.
Dcm exp_map(const Vec3& phi);

/// Rotation vector of a DCM (principal log). Well conditioned for the small
/// angles this library encounters; handles angles up to pi - 1e-6.
Vec3 log_map(const Dcm& d);

/// QR factorisation A = Q * R with R forced to a positive diagonal.
/// Q is in SO(3) whenever det(A) > 0. Throws on numerically singular input
/// (smallest singular value below 1e-12 of the largest).
std::pair<Dcm, UpperTriangular3> qr_pos_diag(const Mat3& a);

/// Orthogonal Procrustes projection: the rotation closest to A in Frobenius
/// norm, with det = +1. Throws when two singular values of A vanish (the
/// projection is then not unique).
Dcm nearest_rotation(const Mat3& a);

/// Geodesic distance on SO(3) between two rotations, in radians.
double geodesic_angle(const Dcm& a, const Dcm& b);

/// True when ||D^T D - I||_F < tol and det(D) > 0.
bool is_rotation(const Mat3& d, double tol = 1e-9);

/// Euler angles (roll, pitch, yaw) in degrees, aerospace intrinsic Z-Y-X
/// convention: D = Rz(yaw) * Ry(pitch) * Rx(roll).
/// Throws a gimbal-lock error when |D(2,0)| > 1 - 1e-9.
Vec3 dcm_to_euler(const Dcm& d);

/// Inverse of dcm_to_euler; angles in degrees.
Dcm euler_to_dcm(const Vec3& rpy_deg);

enum class GyroIntegration {
    first_order, // C <- C * (I + dt * skew(w)), re-orthonormalised
    exponential, // C <- C * exp(dt * skew(w)); exact for interval-average rates
    rk4_spline,  // RK4 over a cubic-spline interpolation of the rate samples
};

/// Integrate body-to-reference attitude from sampled body rates, starting at
/// identity. omega[k] applies over (t[k-1], t[k]]; omega[0] is unused.
/// bias is subtracted from every sample before integration.
std::vector<Dcm> integrate_gyro(const std::vector<double>& t,
                                const std::vector<Vec3>& omega,
                                const Vec3& bias,
                                GyroIntegration method);

} // namespace so3

/// Magnetic dip angle in degrees: 90 - angle(m, g), m unit, g the local
/// gravity vector (any magnitude).
double magnetic_inclination_deg(const Vec3& m_unit, const Vec3& g_vec);

} // namespace magcal

#endif
