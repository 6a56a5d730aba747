#ifndef MAGCAL_BATCH_ORACLES_HPP
#define MAGCAL_BATCH_ORACLES_HPP

#include "observability.hpp"
#include "sensor_sim.hpp"
#include "so3_math.hpp"

#include <span>
#include <vector>

namespace magcal {
namespace batch {

/// Attitude-independent intrinsic parameters: ||R (y_m - h)|| = 1 on
/// calibration data in a homogeneous field.
struct IntrinsicParams {
    UpperTriangular3 r = Mat3::Identity();
    Vec3 h = Vec3::Zero();
};

/// Cross-sensor misalignment and gyro bias from the rotated-measurement rate
/// equation. eps comes from the unprojected linear solve; eps_projected uses
/// the SO(3)-projected misalignment instead.
struct AlignmentParams {
    Dcm c_b_m = Mat3::Identity();
    Vec3 eps = Vec3::Zero();            // rad/s
    Vec3 eps_projected = Vec3::Zero();  // rad/s
};

/// Finite-difference stencil for the measurement-rate terms.
enum class DiffScheme {
    central3, // (y[k+1] - y[k-1]) / 2dt, O(dt^2)
    central5, // 5-point stencil, O(dt^4)
};

struct BatchOptions {
    DiffScheme diff = DiffScheme::central3;
    int smooth_window = 0;  // odd boxcar width applied before differencing; 0 = off
    double null_tol = 1e-4; // near-zero eigenvalue threshold, relative to the largest
    double rank_tol = 1e-10; // full-rank requirement threshold for the normal matrices
    so3::GyroIntegration integration = so3::GyroIntegration::rk4_spline;
};

/// Ellipsoid fit from the null eigenvector of the quadric Gramian, de-scaled
/// into (R, h). Throws when the Gramian has more than one near-zero
/// eigenvalue or the recovered quadratic form is not positive definite.
IntrinsicParams fit_intrinsic(std::span<const Vec3> y_m, const BatchOptions& options = {});

/// Least-squares solve of d/dt y* = W eta over the stream; the first nine
/// unknowns are reshaped and projected to SO(3).
AlignmentParams solve_alignment(std::span<const Vec3> y_star,
                                std::span<const Vec3> omega,
                                double dt,
                                const BatchOptions& options = {});

/// Gyro bias from the accelerometer rate equation
/// d/dt y_a = -(omega - eps) x y_a, solved in the least-squares sense. The
/// stream must be free of linear acceleration. Throws when int ya ya' dt is
/// singular.
Vec3 solve_bias_from_accel(std::span<const Vec3> y_a,
                           std::span<const Vec3> omega,
                           double dt,
                           const BatchOptions& options = {});

/// Full batch recovery along the accelerometer route: bias from the accel
/// rates, attitude from the de-biased gyro (identity start), then S, h and
/// the magnetic vector from the null eigenvector of int M'M dt, de-scaled so
/// ||m_i|| = 1 and det(S^-1) > 0.
struct Thm22Result {
    Mat3 S = Mat3::Identity();
    Vec3 h = Vec3::Zero();
    Vec3 m_i = Vec3::Zero();
    Vec3 eps = Vec3::Zero(); // rad/s
    Vec3 g_i = Vec3::Zero(); // m/s^2
};

Thm22Result solve_full_thm22(std::span<const SensorSample> samples, const BatchOptions& options = {});

/// Series derivative with the configured stencil; output is aligned with the
/// input and valid on [lo, hi): indices outside the stencil support are zero.
struct DiffSeries {
    std::vector<Vec3> dot;
    std::size_t lo = 0;
    std::size_t hi = 0;
};

DiffSeries differentiate(std::span<const Vec3> y, double dt, DiffScheme scheme, int smooth_window = 0);

} // namespace batch
} // namespace magcal

#endif
