#ifndef MAGCAL_EKF_HPP
#define MAGCAL_EKF_HPP

#include "sensor_sim.hpp"
#include "so3_math.hpp"

#include <span>
#include <vector>

namespace magcal {
namespace ekf {

using Mat24 = Eigen::Matrix<double, 24, 24>;
using Vec24 = Eigen::Matrix<double, 24, 1>;

/// Filter tuning. Initial standard deviations follow the published settings;
/// the magnetometer matrix starts from s_init (identity, or a previous run's
/// re-scaled estimate in two-pass mode).
struct EkfConfig {
    NoiseConfig noise;
    double t_md = 0.03;     // m/s^2, accel magnitude-discrepancy gate
    double g_local = 9.8;   // m/s^2
    bool use_accel = true;
    double t_start = 0.0;   // estimation window, seconds
    double t_stop = 1e300;
    double init_std_bias = 5.0 * kRadPerDeg; // rad/s
    double init_std_s = 0.1;
    double init_std_h = 1.0;
    double init_std_m = 0.5;
    double init_std_g = 1.0; // m/s^2
    Mat3 s_init = Mat3::Identity();
};

/// Full estimator state. Error-state ordering is fixed:
/// [psi(3), d_eps(3), vec(dS)(9) column-major, dh(3), dm_i(3), dg_i(3)].
struct CalibState {
    Dcm c_b_i = Mat3::Identity(); // body-to-inertial, i-frame = b(0)
    Vec3 eps = Vec3::Zero();      // rad/s
    Mat3 S = Mat3::Identity();
    Vec3 h = Vec3::Zero();
    Vec3 m_i = Vec3::Zero();
    Vec3 g_i = Vec3::Zero();
    Mat24 p = Mat24::Zero();
    double t = 0.0;
};

struct MagUpdate {
    Vec3 innovation = Vec3::Zero();
    Mat3 s_inn = Mat3::Zero(); // innovation covariance at prediction time
};

/// Per-step history collected by run(); also the innovation record consumed
/// by finalize() for the ANIS statistic.
struct RunDiagnostics {
    std::vector<double> t;
    std::vector<Vec3> innovation;
    std::vector<Vec3> sigma3;          // 3 sqrt(diag(s_inn))
    std::vector<int> accel_accepted;   // -1 not attempted, 0 gated out, 1 used
    std::vector<Vec3> eps;             // rad/s
    std::vector<Mat3> s;
    std::vector<Vec3> h;
    std::vector<Vec3> m_i;
    std::vector<Vec3> g_i;
    std::vector<Dcm> attitude;         // c_b_i after the updates of each step
    double anis_sum = 0.0;
    long anis_count = 0;
    long accel_attempted = 0;
    long accel_used = 0;
    // Covariance health, sampled periodically.
    double min_p_eig_over_trace = 0.0;
    double max_p_asymmetry = 0.0;
};

/// Decomposed calibration outputs in reporting units.
struct CalibResult {
    Mat3 s_rs = Mat3::Identity();       // ||m_i|| S
    Vec3 m_rs = Vec3::Zero();           // unit magnetic vector
    UpperTriangular3 r = Mat3::Identity();
    Vec3 h = Vec3::Zero();
    Dcm c_b_m = Mat3::Identity();
    Vec3 c_b_m_euler_deg = Vec3::Zero();
    Vec3 eps_deg = Vec3::Zero();        // deg/s
    Vec3 g_i = Vec3::Zero();            // m/s^2
    double inclination_deg = 0.0;
    double anis_mag = 0.0;
    double accel_accept_ratio = -1.0;   // negative when no accel update was attempted
    std::vector<double> att_t;
    std::vector<Dcm> attitude;
};

/// State at the first sample: identity attitude with exactly zero attitude
/// covariance, zero bias/h, S = s_init, reference vectors from the first
/// measurements (g_i = -first_accel).
CalibState init(const EkfConfig& config, const Vec3& first_mag, const Vec3& first_accel, double t0 = 0.0);

/// First-order mean propagation with re-orthonormalisation, covariance via
/// Phi = I + F dt and the lumped process noise.
void propagate(CalibState& state, const Vec3& gyro, double dt, const EkfConfig& config);

/// Magnetometer EKF update (Joseph form). Returns the innovation and its
/// covariance at prediction time.
MagUpdate update_mag(CalibState& state, const Vec3& y_m, const EkfConfig& config);

/// Gated accelerometer update: rejected outright unless
/// | ||y_a|| - g_local | < t_md. Returns whether the sample was used.
bool update_accel(CalibState& state, const Vec3& y_a, const EkfConfig& config);

/// Re-scale the scale-ambiguous pair into (s_rs, m_rs), decompose into
/// intrinsic and cross-sensor parameters and attach the ANIS statistic.
CalibResult finalize(const CalibState& state, const RunDiagnostics& history);

/// init -> propagate -> mag update -> gated accel update over the configured
/// window. diag, when given, receives the full per-step history.
CalibResult run(std::span<const SensorSample> samples, const EkfConfig& config,
                RunDiagnostics* diag = nullptr);

struct TwoPassResult {
    CalibResult pass1;
    CalibResult pass2;
};

/// Second pass re-seeded with the first pass's re-scaled magnetometer matrix;
/// all other initial settings unchanged.
TwoPassResult run_two_pass(std::span<const SensorSample> samples, const EkfConfig& config,
                           RunDiagnostics* diag_pass2 = nullptr);

/// Measurement models (prediction part), shared with the Jacobian tests.
Vec3 predict_mag(const CalibState& state);
Vec3 predict_accel(const CalibState& state);
Eigen::Matrix<double, 3, 24> jacobian_mag(const CalibState& state);
Eigen::Matrix<double, 3, 24> jacobian_accel(const CalibState& state);

} // namespace ekf
} // namespace magcal

#endif
