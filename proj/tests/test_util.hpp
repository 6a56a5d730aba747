// Shared builders for the test suites: paper-scale truths and tumble profiles.
#ifndef MAGCAL_TEST_UTIL_HPP
#define MAGCAL_TEST_UTIL_HPP

#include "sensor_sim.hpp"
#include "so3_math.hpp"

#include <random>

namespace magcal::test {

inline Mat3 mild_r_upper() {
    Mat3 r;
    r << 1.0021, -0.0039, 0.0011,
         0.0, 0.9969, 0.0019,
         0.0, 0.0, 1.0058;
    return r;
}

inline Mat3 strong_r_upper() {
    Mat3 r;
    r << 1.2668, 0.3130, -0.4191,
         0.0, 1.5174, 0.3419,
         0.0, 0.0, 0.8240;
    return r;
}

// S from the intrinsic/cross-sensor decomposition: S^-1 = C_m^b R.
inline Mat3 truth_s(const Mat3& r_upper, const Vec3& euler_bm_deg) {
    const Dcm c_b_m = so3::euler_to_dcm(euler_bm_deg);
    return (c_b_m.transpose() * r_upper).inverse();
}

inline sim::SimTruth mild_truth() {
    sim::SimTruth t;
    t.S = truth_s(mild_r_upper(), Vec3(0.005, 0.014, -0.120));
    t.h = Vec3(-0.5018, 0.0421, 0.2379);
    t.eps = deg2rad(Vec3(-0.221, 0.171, 0.250));
    return t;
}

inline sim::SimTruth strong_truth() {
    sim::SimTruth t;
    t.S = truth_s(strong_r_upper(), Vec3(16.272, 23.944, 10.069));
    t.h = Vec3(-0.6288, -0.1026, -0.2513);
    t.eps = deg2rad(Vec3(-0.247, 0.144, 0.245));
    return t;
}

inline NoiseConfig zero_noise() {
    NoiseConfig n;
    n.sigma_g = 0.0;
    n.sigma_eps = 0.0;
    n.sigma_m = 0.0;
    n.sigma_a = 0.0;
    n.sigma_mi = 0.0;
    n.sigma_gi = 0.0;
    return n;
}

// Single three-axis tumbling segment after an optional still period.
inline sim::TrajectoryProfile tumble_profile(double still_s, double tumble_s, double peak,
                                             double rate_hz = 100.0) {
    sim::TrajectoryProfile p;
    p.sample_rate = rate_hz;
    p.still_seconds = still_s;
    p.segments.push_back({tumble_s, Vec3(peak, peak, peak)});
    return p;
}

inline Dcm random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Vec3 axis(n01(rng), n01(rng), n01(rng));
    if (axis.norm() < 1e-9) axis = Vec3::UnitZ();
    axis.normalize();
    std::uniform_real_distribution<double> u(-3.1, 3.1);
    return so3::exp_map(u(rng) * axis);
}

inline Vec3 random_vec3(std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n01(0.0, 1.0);
    return scale * Vec3(n01(rng), n01(rng), n01(rng));
}

} // namespace magcal::test

#endif
