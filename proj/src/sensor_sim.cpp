#include "sensor_sim.hpp"

#include "error.hpp"

#include <cmath>
#include <random>

namespace magcal {
namespace sim {

namespace {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

double ramp01(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x * x * (3.0 - 2.0 * x);
}

double segment_envelope(double t, double t0, double t1, double ramp) {
    const double up = ramp > 0.0 ? ramp01((t - t0) / ramp) : 1.0;
    const double down = ramp > 0.0 ? ramp01((t1 - t) / ramp) : 1.0;
    return std::min(up, down);
}

Vec3 gauss3(std::mt19937_64& rng, std::normal_distribution<double>& n01) {
    return Vec3(n01(rng), n01(rng), n01(rng));
}

} // namespace

Vec3 Trajectory::rate_at(double time) const {
    Vec3 w = Vec3::Zero();
    for (const auto& seg : segments) {
        if (time < seg.t0 || time > seg.t1 || seg.stationary) continue;
        const double env = segment_envelope(time, seg.t0, seg.t1, seg.ramp);
        const double tau = time - seg.t0;
        for (int a = 0; a < 3; ++a) {
            double s = 0.0;
            for (const auto& wave : seg.waves[a]) {
                s += wave.amplitude * std::sin(kTwoPi * wave.freq * tau + wave.phase);
            }
            w(a) += env * s;
        }
    }
    return w;
}

Trajectory gen_trajectory(const TrajectoryProfile& profile, std::uint64_t seed) {
    if (profile.segments.empty() && profile.still_seconds <= 0.0) {
        throw_error(ErrorCode::invalid_argument, "gen_trajectory: empty profile");
    }
    for (const auto& s : profile.segments) {
        if (s.duration <= 0.0) {
            throw_error(ErrorCode::invalid_argument, "gen_trajectory: segment duration must be > 0");
        }
    }
    if (profile.sample_rate <= 0.0) {
        throw_error(ErrorCode::invalid_argument, "gen_trajectory: sample rate must be > 0");
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    Trajectory traj;
    traj.sample_rate = profile.sample_rate;

    double cursor = 0.0;
    if (profile.still_seconds > 0.0) {
        Trajectory::Segment still;
        still.t0 = 0.0;
        still.t1 = profile.still_seconds;
        still.stationary = true;
        traj.segments.push_back(still);
        cursor = profile.still_seconds;
    }
    for (const auto& ps : profile.segments) {
        Trajectory::Segment seg;
        seg.t0 = cursor;
        seg.t1 = cursor + ps.duration;
        seg.ramp = profile.ramp_seconds;
        seg.stationary = ps.peak_rate.isZero(0.0);
        if (!seg.stationary) {
            for (int a = 0; a < 3; ++a) {
                const double peak = ps.peak_rate(a);
                if (peak == 0.0) continue;
                double total = 0.0;
                std::vector<Trajectory::Wave> waves(static_cast<std::size_t>(profile.harmonics));
                for (auto& w : waves) {
                    w.amplitude = 0.5 + 0.5 * u01(rng);
                    w.freq = profile.freq_lo + (profile.freq_hi - profile.freq_lo) * u01(rng);
                    w.phase = kTwoPi * u01(rng);
                    total += w.amplitude;
                }
                for (auto& w : waves) w.amplitude *= peak / total;
                seg.waves[a] = std::move(waves);
            }
        }
        traj.segments.push_back(seg);
        cursor = seg.t1;
    }

    const double dt = 1.0 / profile.sample_rate;
    const auto n = static_cast<std::size_t>(std::llround(cursor * profile.sample_rate));
    traj.t.reserve(n + 1);
    traj.omega.reserve(n + 1);
    traj.tumbling.reserve(n + 1);
    for (std::size_t k = 0; k <= n; ++k) {
        const double time = static_cast<double>(k) * dt;
        traj.t.push_back(time);
        traj.omega.push_back(traj.rate_at(time));
        bool tum = false;
        for (const auto& seg : traj.segments) {
            if (!seg.stationary && time >= seg.t0 && time <= seg.t1) tum = true;
        }
        traj.tumbling.push_back(tum);
    }
    return traj;
}

SimStream simulate(const SimTruth& truth, const Trajectory& traj, std::uint64_t seed) {
    if (traj.t.empty()) {
        throw_error(ErrorCode::invalid_argument, "simulate: empty trajectory");
    }
    if (std::abs(truth.m_e.norm() - 1.0) > 1e-12) {
        throw_error(ErrorCode::invalid_argument, "simulate: m_e must have unit norm");
    }
    if (std::abs(truth.S.determinant()) < 1e-12) {
        throw_error(ErrorCode::invalid_argument, "simulate: S must be invertible");
    }

    const double dt = 1.0 / truth.sample_rate;
    const Vec3 m_i = truth.m_i();
    const Vec3 g_i = truth.g_i();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    const double gyro_noise_std = truth.noise.sigma_g * std::sqrt(truth.sample_rate);

    SimStream out;
    out.samples.reserve(traj.t.size());
    out.attitude.reserve(traj.t.size());

    // Oracle-grade attitude: RK4 on dC/dt = C * skew(w(t)) with the analytic
    // rate profile, re-orthonormalised each step.
    Dcm c = Mat3::Identity();
    Dcm c_prev = c;
    for (std::size_t k = 0; k < traj.t.size(); ++k) {
        const double tk = traj.t[k];
        if (k > 0) {
            auto deriv = [&](const Mat3& ci, double tau) { return Mat3(ci * so3::skew(traj.rate_at(tau))); };
            const double t0 = traj.t[k - 1];
            const int nsub = 2;
            const double h = (tk - t0) / nsub;
            for (int s = 0; s < nsub; ++s) {
                const double ts = t0 + s * h;
                const Mat3 k1 = deriv(c, ts);
                const Mat3 k2 = deriv(c + 0.5 * h * k1, ts + 0.5 * h);
                const Mat3 k3 = deriv(c + 0.5 * h * k2, ts + 0.5 * h);
                const Mat3 k4 = deriv(c + h * k3, ts + h);
                c = c + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            c = so3::nearest_rotation(c);
        }
        out.attitude.push_back(c);

        SensorSample s;
        s.t = tk;
        Vec3 rate;
        if (truth.gyro_model == GyroModel::increment && k > 0) {
            rate = so3::log_map(c_prev.transpose() * c) / dt;
        } else {
            rate = traj.rate_at(tk);
        }
        s.gyro = rate + truth.eps + gyro_noise_std * gauss3(rng, n01);
        const Mat3 c_i_b = c.transpose();
        s.mag = truth.S * (c_i_b * m_i) + truth.h + truth.noise.sigma_m * gauss3(rng, n01);
        s.accel = -(c_i_b * g_i) + truth.noise.sigma_a * gauss3(rng, n01);
        out.samples.push_back(s);
        c_prev = c;
    }
    return out;
}

void inject_acceleration(SimStream& stream,
                         const std::vector<std::pair<double, double>>& windows,
                         double magnitude,
                         double freq_hz,
                         std::uint64_t seed) {
    if (stream.samples.empty()) {
        throw_error(ErrorCode::invalid_argument, "inject_acceleration: empty stream");
    }
    const double t_begin = stream.samples.front().t;
    const double t_end = stream.samples.back().t;
    for (const auto& [w0, w1] : windows) {
        if (w0 > w1 || w0 < t_begin - 1e-9 || w1 > t_end + 1e-9) {
            throw_error(ErrorCode::invalid_argument, "inject_acceleration: window outside stream time range");
        }
    }
    if (magnitude == 0.0) return;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (const auto& [w0, w1] : windows) {
        Vec3 dir = Vec3(n01(rng), n01(rng), n01(rng));
        if (dir.norm() < 1e-12) dir = Vec3::UnitX();
        dir.normalize();
        const double phase = kTwoPi * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        for (auto& s : stream.samples) {
            if (s.t < w0 || s.t > w1) continue;
            s.accel += magnitude * std::sin(kTwoPi * freq_hz * (s.t - w0) + phase) * dir;
        }
    }
}

} // namespace sim
} // namespace magcal
