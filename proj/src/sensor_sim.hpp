#ifndef MAGCAL_SENSOR_SIM_HPP
#define MAGCAL_SENSOR_SIM_HPP

#include "so3_math.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace magcal {

/// One timestamped triple of gyro/accel/mag readings.
struct SensorSample {
    double t = 0.0;  // seconds
    Vec3 gyro = Vec3::Zero();   // rad/s
    Vec3 accel = Vec3::Zero();  // m/s^2
    Vec3 mag = Vec3::Zero();    // raw magnetometer units
};

/// Noise densities shared between the simulator and the filter.
/// sigma_g, sigma_eps are continuous-time densities (rad/sqrt(s), rad/sqrt(s^3));
/// sigma_m, sigma_a are per-sample measurement standard deviations;
/// sigma_mi, sigma_gi are random-walk densities for the reference vectors.
struct NoiseConfig {
    double sigma_g = 0.01 * kRadPerDeg;      // rad/sqrt(s)
    double sigma_eps = 1e-4 * kRadPerDeg;    // rad/sqrt(s^3)
    double sigma_m = 0.005;                  // unitless
    double sigma_a = 0.09;                   // m/s^2 (3 * gate threshold)
    double sigma_mi = 7.3e-5;                // unitless/sqrt(s)
    double sigma_gi = 9.8 * 7.3e-5;          // m/sqrt(s^5)
};

namespace sim {

/// How gyro samples are reported.
///  - increment: sample k is the average rate over (t[k-1], t[k]], i.e. the
///    equivalent rotation vector of the step divided by dt (delta-angle
///    output of a strapdown IMU).
///  - instantaneous: sample k is the rate at t[k].
enum class GyroModel { increment, instantaneous };

/// Ground-truth parameters for the simulator.
struct SimTruth {
    Mat3 S = Mat3::Identity();       // magnetometer calibration matrix
    Vec3 h = Vec3::Zero();           // magnetometer bias
    Vec3 eps = Vec3::Zero();         // gyro bias, rad/s
    Vec3 m_e = Vec3(0.7296850836416588, 0.0, -0.6837833565617587); // unit, 43.14 deg dip
    Vec3 g_e = Vec3(0.0, 0.0, -9.8); // m/s^2
    Dcm c0 = Mat3::Identity();       // e-frame to initial body frame
    NoiseConfig noise;
    double sample_rate = 100.0;      // Hz
    GyroModel gyro_model = GyroModel::increment;

    // Reference vectors in the inertial frame (initial body frame).
    Vec3 m_i() const { return c0 * m_e; }
    Vec3 g_i() const { return c0 * g_e; }
};

/// Requested motion: a leading still period followed by tumbling segments.
/// Each segment excites the axes with the given peak rates (rad/s); a zero
/// vector makes the segment stationary.
struct TrajectoryProfile {
    struct Segment {
        double duration = 0.0;        // seconds
        Vec3 peak_rate = Vec3::Zero(); // rad/s per axis, 0 disables the axis
    };
    double sample_rate = 100.0;
    double still_seconds = 0.0;
    std::vector<Segment> segments;
    int harmonics = 3;
    double freq_lo = 0.05;  // Hz
    double freq_hi = 0.35;  // Hz
    double ramp_seconds = 1.0;
};

/// Piecewise-smooth body-rate history, analytic plus a uniformly sampled view.
struct Trajectory {
    struct Wave {
        double amplitude = 0.0;
        double freq = 0.0;   // Hz
        double phase = 0.0;  // rad
    };
    struct Segment {
        double t0 = 0.0;
        double t1 = 0.0;
        bool stationary = true;
        double ramp = 1.0;
        std::array<std::vector<Wave>, 3> waves;
    };

    double sample_rate = 100.0;
    std::vector<Segment> segments;
    std::vector<double> t;        // uniform, strictly increasing
    std::vector<Vec3> omega;      // true body rate at t
    std::vector<bool> tumbling;   // per-sample segment tag

    Vec3 rate_at(double time) const;
    double duration() const { return t.empty() ? 0.0 : t.back(); }
};

Trajectory gen_trajectory(const TrajectoryProfile& profile, std::uint64_t seed);

/// Simulator output: the sample stream plus the reference attitude
/// (body-to-inertial DCM) at every sample time.
struct SimStream {
    std::vector<SensorSample> samples;
    std::vector<Dcm> attitude; // C_b^i at samples[k].t
};

/// Generate gyro/accel/mag streams from truth over the trajectory. The
/// attitude is integrated with an RK4 oracle on the analytic rate profile and
/// re-orthonormalised every step; Earth rotation is neglected.
SimStream simulate(const SimTruth& truth, const Trajectory& traj, std::uint64_t seed);

/// Add a sinusoidal linear-acceleration disturbance of the given magnitude
/// (m/s^2) to the accel channel inside the listed [t0, t1] windows. Gyro and
/// mag are untouched. Throws when a window lies outside the stream.
void inject_acceleration(SimStream& stream,
                         const std::vector<std::pair<double, double>>& windows,
                         double magnitude,
                         double freq_hz = 1.5,
                         std::uint64_t seed = 1);

} // namespace sim
} // namespace magcal

#endif
