#ifndef MAGCAL_OBSERVABILITY_HPP
#define MAGCAL_OBSERVABILITY_HPP

#include "sensor_sim.hpp"
#include "so3_math.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace magcal {
namespace obsv {

using RowY = Eigen::Matrix<double, 1, 10>;
using MatW = Eigen::Matrix<double, 3, 12>;
using MatM = Eigen::Matrix<double, 3, 15>;

/// Quadric-constraint row for one magnetometer sample. Unknown vector
/// z* = [A11 A12 A13 A22 A23 A33, (A h)_xyz, h'A h - 1] with A = R'R; the
/// off-diagonal columns carry factor 2 from merging symmetric entries.
RowY row_Y(const Vec3& y_m);

/// z* built from intrinsic parameters, for residual checks and null-space
/// diagnostics. Same packing as row_Y.
Eigen::Matrix<double, 10, 1> make_z_star(const UpperTriangular3& r, const Vec3& h);

/// 3x12 regressor of the rotated-measurement rate equation:
/// d/dt y* = W * [vec(C_b^m); C_b^m eps], vec() column-major.
MatW row_W(const Vec3& y_m_star, const Vec3& omega);

/// 3x15 regressor of the attitude-resolved measurement equation:
/// 0 = M * [vec(S^-1); S^-1 h; m^i], vec() column-major.
MatM row_M(const Vec3& y_m, const Dcm& c_b_i);

/// Running accumulators for the four observability Gramians.
struct GramianSet {
    Eigen::Matrix<double, 10, 10> g_y = Eigen::Matrix<double, 10, 10>::Zero();
    Eigen::Matrix<double, 12, 12> g_w = Eigen::Matrix<double, 12, 12>::Zero();
    Mat3 g_a = Mat3::Zero();
    Eigen::Matrix<double, 15, 15> g_m = Eigen::Matrix<double, 15, 15>::Zero();
    double t_span = 0.0;

    // Per-sample history of the smallest/second-smallest eigenvalue ratio of
    // g_y, for plots; filled when accumulate() is called with track_ratio.
    std::vector<double> ratio_t;
    std::vector<double> ratio;
};

/// Per-sample inputs; absent pieces leave the matching Gramian untouched.
struct GramianRows {
    std::optional<RowY> y;
    std::optional<MatW> w;
    std::optional<Vec3> y_a;
    std::optional<MatM> m;
};

/// G += row' * row * dt for every present row; symmetry enforced.
void accumulate(GramianSet& g, const GramianRows& rows, double dt, bool track_ratio = false, double t = 0.0);

/// Sum of two accumulations; order-independent.
GramianSet merge(const GramianSet& a, const GramianSet& b);

enum class Verdict { observable, unobservable, marginal };

struct GramianDiag {
    std::string name;
    int dim = 0;
    double eig_min = 0.0;
    double eig_max = 0.0;
    double ratio = 1.0;     // smallest / second smallest, in [0,1]
    int rank = 0;           // eigenvalues >= tol * eig_max
    int near_zero = 0;      // eigenvalues < tol * eig_max
    Verdict verdict = Verdict::unobservable;
};

/// Singularity/eigenvalue diagnostics for a GramianSet.
struct ObsvReport {
    double tol = 1e-4;
    double t_span = 0.0;
    GramianDiag y;  // needs exactly one near-zero eigenvalue
    GramianDiag w;  // needs full rank
    GramianDiag a;  // needs full rank
    GramianDiag m;  // needs exactly one near-zero eigenvalue
    bool thm21_observable = false;  // g_w full rank and g_y has one null direction
    bool thm22_observable = false;  // g_a full rank and g_m has one null direction
    std::vector<double> ratio_t;
    std::vector<double> log10_ratio;
};

ObsvReport report(const GramianSet& g, double tol);

std::string report_text(const ObsvReport& r);
const char* verdict_name(Verdict v);

/// Convenience full-stream scan. Intrinsic parameters enable the g_w rows;
/// attitude (from the de-biased gyro) enables the g_m rows.
struct ScanOptions {
    std::optional<std::pair<UpperTriangular3, Vec3>> intrinsic; // (R, h) for y* rows
    std::optional<Vec3> gyro_bias;                              // rad/s, for attitude integration
    so3::GyroIntegration integration = so3::GyroIntegration::exponential;
    bool track_ratio = true;
};

GramianSet scan_stream(std::span<const SensorSample> samples, const ScanOptions& options);

} // namespace obsv
} // namespace magcal

#endif
