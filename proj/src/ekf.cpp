#include "ekf.hpp"

#include "error.hpp"

#include <cmath>

namespace magcal {
namespace ekf {

namespace {

// Error-state block offsets.
constexpr int kPsi = 0;
constexpr int kEps = 3;
constexpr int kS = 6;
constexpr int kH = 15;
constexpr int kM = 18;
constexpr int kG = 21;

void apply_correction(CalibState& state, const Vec24& c) {
    // Attitude error is multiplicative: C <- (I - skew(psi)) C, then psi is
    // reset to zero by construction. Remaining states are additive.
    const Vec3 psi = c.segment<3>(kPsi);
    state.c_b_i = (Mat3::Identity() - so3::skew(psi)) * state.c_b_i;
    state.c_b_i = so3::nearest_rotation(state.c_b_i);
    state.eps += c.segment<3>(kEps);
    for (int col = 0; col < 3; ++col) {
        state.S.col(col) += c.segment<3>(kS + 3 * col); // vec(dS) column-major
    }
    state.h += c.segment<3>(kH);
    state.m_i += c.segment<3>(kM);
    state.g_i += c.segment<3>(kG);
}

void joseph_update(CalibState& state, const Eigen::Matrix<double, 3, 24>& h_jac,
                   const Mat3& r_meas, const Vec3& innovation, const Mat3& s_inn) {
    Eigen::LDLT<Mat3> ldlt(s_inn);
    if (ldlt.info() != Eigen::Success || ldlt.isNegative()) {
        throw_error(ErrorCode::numeric, "ekf update: innovation covariance is not positive definite");
    }
    const Eigen::Matrix<double, 24, 3> k = ldlt.solve(h_jac * state.p).transpose();
    apply_correction(state, k * innovation);
    const Mat24 ikh = Mat24::Identity() - k * h_jac;
    state.p = ikh * state.p * ikh.transpose() + k * r_meas * k.transpose();
    state.p = 0.5 * (state.p + state.p.transpose()).eval();
}

} // namespace

Vec3 predict_mag(const CalibState& state) {
    return state.S * (state.c_b_i.transpose() * state.m_i) + state.h;
}

Vec3 predict_accel(const CalibState& state) {
    return -(state.c_b_i.transpose() * state.g_i);
}

Eigen::Matrix<double, 3, 24> jacobian_mag(const CalibState& state) {
    const Mat3 c_i_b = state.c_b_i.transpose();
    const Vec3 b = c_i_b * state.m_i;
    Eigen::Matrix<double, 3, 24> h = Eigen::Matrix<double, 3, 24>::Zero();
    h.block<3, 3>(0, kPsi) = -state.S * c_i_b * so3::skew(state.m_i);
    for (int col = 0; col < 3; ++col) {
        h.block<3, 3>(0, kS + 3 * col) = b(col) * Mat3::Identity();
    }
    h.block<3, 3>(0, kH) = Mat3::Identity();
    h.block<3, 3>(0, kM) = state.S * c_i_b;
    return h;
}

Eigen::Matrix<double, 3, 24> jacobian_accel(const CalibState& state) {
    const Mat3 c_i_b = state.c_b_i.transpose();
    Eigen::Matrix<double, 3, 24> h = Eigen::Matrix<double, 3, 24>::Zero();
    h.block<3, 3>(0, kPsi) = c_i_b * so3::skew(state.g_i);
    h.block<3, 3>(0, kG) = -c_i_b;
    return h;
}

CalibState init(const EkfConfig& config, const Vec3& first_mag, const Vec3& first_accel, double t0) {
    if (!first_mag.allFinite() || !first_accel.allFinite()) {
        throw_error(ErrorCode::invalid_argument, "ekf init: non-finite first measurement");
    }
    if (first_mag.norm() < 1e-12) {
        throw_error(ErrorCode::invalid_argument, "ekf init: first magnetometer measurement has zero norm");
    }
    CalibState s;
    s.c_b_i = Mat3::Identity();
    s.eps = Vec3::Zero();
    s.S = config.s_init;
    s.h = Vec3::Zero();
    // First measurement mapped through the assumed calibration; with the
    // default S = I this is the raw first magnetometer reading.
    s.m_i = config.s_init.inverse() * first_mag;
    s.g_i = -first_accel;
    s.t = t0;
    s.p = Mat24::Zero(); // attitude block stays exactly zero at t = 0
    s.p.block<3, 3>(kEps, kEps) = config.init_std_bias * config.init_std_bias * Mat3::Identity();
    s.p.block<9, 9>(kS, kS) =
        config.init_std_s * config.init_std_s * Eigen::Matrix<double, 9, 9>::Identity();
    s.p.block<3, 3>(kH, kH) = config.init_std_h * config.init_std_h * Mat3::Identity();
    s.p.block<3, 3>(kM, kM) = config.init_std_m * config.init_std_m * Mat3::Identity();
    s.p.block<3, 3>(kG, kG) = config.init_std_g * config.init_std_g * Mat3::Identity();
    return s;
}

void propagate(CalibState& state, const Vec3& gyro, double dt, const EkfConfig& config) {
    if (!(dt > 0.0) || !gyro.allFinite()) {
        throw_error(ErrorCode::invalid_argument, "ekf propagate: invalid step");
    }
    const Vec3 w = gyro - state.eps;
    state.c_b_i = state.c_b_i * (Mat3::Identity() + dt * so3::skew(w));
    state.c_b_i = so3::nearest_rotation(state.c_b_i);
    state.t += dt;

    // Phi = I + F dt. The only mean coupling is between the attitude error and
    // the bias error: psi_dot = C_b^i d_eps (consistent with the measurement
    // Jacobians and the d_x = estimate - truth convention).
    Mat24 phi = Mat24::Identity();
    phi.block<3, 3>(kPsi, kEps) = state.c_b_i * dt;

    // Noise input: w = [n_g, n_eps, n_mi, n_gi], Qd = G diag(sigma^2) G' dt.
    Eigen::Matrix<double, 24, 12> g = Eigen::Matrix<double, 24, 12>::Zero();
    g.block<3, 3>(kPsi, 0) = -state.c_b_i;
    g.block<3, 3>(kEps, 3) = Mat3::Identity();
    g.block<3, 3>(kM, 6) = Mat3::Identity();
    g.block<3, 3>(kG, 9) = Mat3::Identity();
    Eigen::Matrix<double, 12, 12> q = Eigen::Matrix<double, 12, 12>::Zero();
    const NoiseConfig& n = config.noise;
    q.block<3, 3>(0, 0) = n.sigma_g * n.sigma_g * Mat3::Identity();
    q.block<3, 3>(3, 3) = n.sigma_eps * n.sigma_eps * Mat3::Identity();
    q.block<3, 3>(6, 6) = n.sigma_mi * n.sigma_mi * Mat3::Identity();
    q.block<3, 3>(9, 9) = n.sigma_gi * n.sigma_gi * Mat3::Identity();

    state.p = phi * state.p * phi.transpose() + g * q * g.transpose() * dt;
    state.p = 0.5 * (state.p + state.p.transpose()).eval();
}

MagUpdate update_mag(CalibState& state, const Vec3& y_m, const EkfConfig& config) {
    if (!y_m.allFinite()) {
        throw_error(ErrorCode::invalid_argument, "update_mag: non-finite measurement");
    }
    const Eigen::Matrix<double, 3, 24> h_jac = jacobian_mag(state);
    const Mat3 r_meas = config.noise.sigma_m * config.noise.sigma_m * Mat3::Identity();
    MagUpdate out;
    out.innovation = y_m - predict_mag(state);
    out.s_inn = h_jac * state.p * h_jac.transpose() + r_meas;
    joseph_update(state, h_jac, r_meas, out.innovation, out.s_inn);
    return out;
}

bool update_accel(CalibState& state, const Vec3& y_a, const EkfConfig& config) {
    if (!y_a.allFinite()) {
        throw_error(ErrorCode::invalid_argument, "update_accel: non-finite measurement");
    }
    if (!(std::abs(y_a.norm() - config.g_local) < config.t_md)) {
        return false; // magnitude discrepancy gate
    }
    const Eigen::Matrix<double, 3, 24> h_jac = jacobian_accel(state);
    const Mat3 r_meas = config.noise.sigma_a * config.noise.sigma_a * Mat3::Identity();
    const Vec3 innovation = y_a - predict_accel(state);
    const Mat3 s_inn = h_jac * state.p * h_jac.transpose() + r_meas;
    joseph_update(state, h_jac, r_meas, innovation, s_inn);
    return true;
}

CalibResult finalize(const CalibState& state, const RunDiagnostics& history) {
    if (history.anis_count < 1) {
        throw_error(ErrorCode::state, "finalize: no measurement update was performed");
    }
    const double m_norm = state.m_i.norm();
    if (m_norm < 1e-6) {
        throw_error(ErrorCode::numeric, "finalize: degenerate magnetic-vector estimate");
    }
    CalibResult out;
    out.s_rs = m_norm * state.S;
    out.m_rs = state.m_i / m_norm;
    auto [c_m_b, r_upper] = so3::qr_pos_diag(out.s_rs.inverse());
    out.r = r_upper;
    out.c_b_m = c_m_b.transpose();
    out.c_b_m_euler_deg = so3::dcm_to_euler(out.c_b_m);
    out.h = state.h;
    out.eps_deg = rad2deg(state.eps);
    out.g_i = state.g_i;
    out.inclination_deg = magnetic_inclination_deg(out.m_rs, state.g_i);
    out.anis_mag = history.anis_sum / static_cast<double>(history.anis_count);
    if (history.accel_attempted > 0) {
        out.accel_accept_ratio =
            static_cast<double>(history.accel_used) / static_cast<double>(history.accel_attempted);
    }
    return out;
}

CalibResult run(std::span<const SensorSample> samples, const EkfConfig& config, RunDiagnostics* diag) {
    RunDiagnostics local;
    RunDiagnostics& d = diag ? *diag : local;
    d = RunDiagnostics{};

    CalibState state;
    bool started = false;
    double t_prev = 0.0;
    long step = 0;
    for (const SensorSample& s : samples) {
        if (s.t < config.t_start || s.t > config.t_stop) continue;
        if (!started) {
            state = init(config, s.mag, s.accel, s.t);
            t_prev = s.t;
            started = true;
            continue;
        }
        const double dt = s.t - t_prev;
        t_prev = s.t;
        propagate(state, s.gyro, dt, config);

        const MagUpdate mu = update_mag(state, s.mag, config);
        const Vec3 nis = mu.s_inn.ldlt().solve(mu.innovation);
        d.anis_sum += mu.innovation.dot(nis);
        d.anis_count += 1;

        int accel_flag = -1;
        if (config.use_accel) {
            d.accel_attempted += 1;
            const bool used = update_accel(state, s.accel, config);
            if (used) d.accel_used += 1;
            accel_flag = used ? 1 : 0;
        }

        d.t.push_back(s.t);
        d.innovation.push_back(mu.innovation);
        d.sigma3.push_back(3.0 * mu.s_inn.diagonal().cwiseSqrt());
        d.accel_accepted.push_back(accel_flag);
        d.eps.push_back(state.eps);
        d.s.push_back(state.S);
        d.h.push_back(state.h);
        d.m_i.push_back(state.m_i);
        d.g_i.push_back(state.g_i);
        d.attitude.push_back(state.c_b_i);

        if (step % 500 == 0) {
            Eigen::SelfAdjointEigenSolver<Mat24> es(state.p);
            const double rel = es.eigenvalues()(0) / std::max(state.p.trace(), 1e-300);
            if (step == 0 || rel < d.min_p_eig_over_trace) d.min_p_eig_over_trace = rel;
            const double asym = (state.p - state.p.transpose()).norm() / std::max(state.p.norm(), 1e-300);
            d.max_p_asymmetry = std::max(d.max_p_asymmetry, asym);
        }
        ++step;
    }
    if (!started || d.anis_count < 1) {
        throw_error(ErrorCode::invalid_argument, "ekf run: estimation window contains no usable samples");
    }

    CalibResult out = finalize(state, d);
    out.att_t = d.t;
    out.attitude = d.attitude;
    return out;
}

TwoPassResult run_two_pass(std::span<const SensorSample> samples, const EkfConfig& config,
                           RunDiagnostics* diag_pass2) {
    TwoPassResult out;
    out.pass1 = run(samples, config);
    EkfConfig second = config;
    second.s_init = out.pass1.s_rs;
    out.pass2 = run(samples, second, diag_pass2);
    return out;
}

} // namespace ekf
} // namespace magcal
