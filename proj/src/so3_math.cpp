#include "so3_math.hpp"

#include "error.hpp"

#include <cmath>

namespace magcal {
namespace so3 {

Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
        -v.y(), v.x(), 0.0;
    return m;
}

Vec3 unskew(const Mat3& m) {
    Mat3 a = 0.5 * (m - m.transpose());
    return Vec3(a(2, 1), a(0, 2), a(1, 0));
}

Dcm exp_map(const Vec3& phi) {
    const double angle = phi.norm();
    if (angle < 1e-12) {
        Mat3 k = skew(phi);
        return Mat3::Identity() + k + 0.5 * k * k;
    }
    const Vec3 axis = phi / angle;
    const Mat3 k = skew(axis);
    return Mat3::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * k * k;
}

Vec3 log_map(const Dcm& d) {
    const double c = std::clamp(0.5 * (d.trace() - 1.0), -1.0, 1.0);
    const double angle = std::acos(c);
    const Vec3 v = unskew(d);
    if (angle < 1e-7) {
        // v = sin(angle) * axis; sin(x)/x ~ 1 - x^2/6
        return v * (1.0 + angle * angle / 6.0);
    }
    if (angle > 3.14159265358979323846 - 1e-6) {
        throw_error(ErrorCode::numeric, "log_map: rotation too close to pi");
    }
    return v * (angle / std::sin(angle));
}

std::pair<Dcm, UpperTriangular3> qr_pos_diag(const Mat3& a) {
    Eigen::JacobiSVD<Mat3> svd(a);
    const auto& sv = svd.singularValues();
    if (sv(2) < 1e-12 * sv(0)) {
        throw_error(ErrorCode::numeric, "qr_pos_diag: singular input matrix");
    }
    Eigen::HouseholderQR<Mat3> qr(a);
    Mat3 q = qr.householderQ();
    Mat3 r = qr.matrixQR().triangularView<Eigen::Upper>();
    // Fix signs so diag(R) > 0; Q absorbs the flips.
    Vec3 signs;
    for (int i = 0; i < 3; ++i) signs(i) = r(i, i) < 0.0 ? -1.0 : 1.0;
    q = q * signs.asDiagonal();
    r = signs.asDiagonal() * r;
    // Scrub the strict lower triangle (Householder leaves reflector data there).
    r(1, 0) = r(2, 0) = r(2, 1) = 0.0;
    return {q, r};
}

Dcm nearest_rotation(const Mat3& a) {
    Eigen::JacobiSVD<Mat3> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(1) < 1e-12 * std::max(sv(0), 1e-300)) {
        throw_error(ErrorCode::numeric, "nearest_rotation: rank-deficient input (two singular values vanish)");
    }
    Mat3 u = svd.matrixU();
    Mat3 v = svd.matrixV();
    Vec3 d(1.0, 1.0, (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
    return u * d.asDiagonal() * v.transpose();
}

double geodesic_angle(const Dcm& a, const Dcm& b) {
    const Mat3 rel = a.transpose() * b;
    const double c = std::clamp(0.5 * (rel.trace() - 1.0), -1.0, 1.0);
    return std::acos(c);
}

bool is_rotation(const Mat3& d, double tol) {
    if ((d.transpose() * d - Mat3::Identity()).norm() >= tol) return false;
    return std::abs(d.determinant() - 1.0) < tol;
}

Vec3 dcm_to_euler(const Dcm& d) {
    if (std::abs(d(2, 0)) > 1.0 - 1e-9) {
        throw_error(ErrorCode::numeric, "dcm_to_euler: gimbal lock (|pitch| at 90 deg)");
    }
    const double pitch = std::asin(-d(2, 0));
    const double roll = std::atan2(d(2, 1), d(2, 2));
    const double yaw = std::atan2(d(1, 0), d(0, 0));
    return Vec3(rad2deg(roll), rad2deg(pitch), rad2deg(yaw));
}

Dcm euler_to_dcm(const Vec3& rpy_deg) {
    const double r = deg2rad(rpy_deg(0));
    const double p = deg2rad(rpy_deg(1));
    const double y = deg2rad(rpy_deg(2));
    Mat3 rx, ry, rz;
    rx << 1, 0, 0,
          0, std::cos(r), -std::sin(r),
          0, std::sin(r), std::cos(r);
    ry << std::cos(p), 0, std::sin(p),
          0, 1, 0,
          -std::sin(p), 0, std::cos(p);
    rz << std::cos(y), -std::sin(y), 0,
          std::sin(y), std::cos(y), 0,
          0, 0, 1;
    return rz * ry * rx;
}

namespace {

// Natural cubic spline coefficients (second derivatives at the nodes) for a
// uniformly sampled series; classic tridiagonal solve.
std::vector<double> spline_second_derivs(const std::vector<double>& y, double h) {
    const std::size_t n = y.size();
    std::vector<double> m(n, 0.0);
    if (n < 3) return m;
    std::vector<double> c(n, 0.0), rhs(n, 0.0);
    // Interior equations: m[i-1] + 4 m[i] + m[i+1] = 6 (y[i-1] - 2 y[i] + y[i+1]) / h^2
    c[1] = 4.0;
    rhs[1] = 6.0 * (y[0] - 2.0 * y[1] + y[2]) / (h * h);
    for (std::size_t i = 2; i + 1 < n; ++i) {
        const double w = 1.0 / c[i - 1];
        c[i] = 4.0 - w;
        rhs[i] = 6.0 * (y[i - 1] - 2.0 * y[i] + y[i + 1]) / (h * h) - w * rhs[i - 1];
    }
    for (std::size_t i = n - 2; i >= 1; --i) {
        m[i] = (rhs[i] - (i + 2 < n ? m[i + 1] : 0.0)) / c[i];
        if (i == 1) break;
    }
    return m;
}

class RateSpline {
public:
    RateSpline(const std::vector<double>& t, const std::vector<Vec3>& omega) : t0_(t.front()), h_(0.01) {
        if (t.size() >= 2) h_ = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
        const std::size_t n = omega.size();
        for (int a = 0; a < 3; ++a) {
            std::vector<double> y(n);
            for (std::size_t k = 0; k < n; ++k) y[k] = omega[k](a);
            ys_[a] = std::move(y);
            ms_[a] = spline_second_derivs(ys_[a], h_);
        }
        n_ = n;
    }

    Vec3 eval(double time) const {
        double s = (time - t0_) / h_;
        auto i = static_cast<std::ptrdiff_t>(std::floor(s));
        i = std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n_) - 2);
        const double u = s - static_cast<double>(i); // in [0,1]
        Vec3 out;
        for (int a = 0; a < 3; ++a) {
            const double ya = ys_[a][i], yb = ys_[a][i + 1];
            const double ma = ms_[a][i], mb = ms_[a][i + 1];
            const double b = 1.0 - u;
            out(a) = b * ya + u * yb +
                     (h_ * h_ / 6.0) * ((b * b * b - b) * ma + (u * u * u - u) * mb);
        }
        return out;
    }

private:
    double t0_;
    double h_;
    std::size_t n_ = 0;
    std::array<std::vector<double>, 3> ys_;
    std::array<std::vector<double>, 3> ms_;
};

Dcm rk4_step(const Dcm& c0, const RateSpline& rate, double t, double h) {
    auto deriv = [&](const Mat3& c, double tau) { return Mat3(c * skew(rate.eval(tau))); };
    const Mat3 k1 = deriv(c0, t);
    const Mat3 k2 = deriv(c0 + 0.5 * h * k1, t + 0.5 * h);
    const Mat3 k3 = deriv(c0 + 0.5 * h * k2, t + 0.5 * h);
    const Mat3 k4 = deriv(c0 + h * k3, t + h);
    return c0 + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

} // namespace

std::vector<Dcm> integrate_gyro(const std::vector<double>& t,
                                const std::vector<Vec3>& omega,
                                const Vec3& bias,
                                GyroIntegration method) {
    if (t.size() != omega.size()) {
        throw_error(ErrorCode::invalid_argument, "integrate_gyro: time/rate size mismatch");
    }
    std::vector<Dcm> out;
    out.reserve(t.size());
    if (t.empty()) return out;
    Dcm c = Mat3::Identity();
    out.push_back(c);
    if (method == GyroIntegration::rk4_spline) {
        std::vector<Vec3> debiased(omega.size());
        for (std::size_t k = 0; k < omega.size(); ++k) debiased[k] = omega[k] - bias;
        RateSpline spline(t, debiased);
        for (std::size_t k = 1; k < t.size(); ++k) {
            const double dt = t[k] - t[k - 1];
            const int nsub = 2;
            const double h = dt / nsub;
            for (int s = 0; s < nsub; ++s) c = rk4_step(c, spline, t[k - 1] + s * h, h);
            c = nearest_rotation(c);
            out.push_back(c);
        }
        return out;
    }
    for (std::size_t k = 1; k < t.size(); ++k) {
        const double dt = t[k] - t[k - 1];
        const Vec3 w = omega[k] - bias;
        if (method == GyroIntegration::first_order) {
            c = c * (Mat3::Identity() + dt * skew(w));
            c = nearest_rotation(c);
        } else {
            c = c * exp_map(dt * w);
        }
        out.push_back(c);
    }
    return out;
}

} // namespace so3

double magnetic_inclination_deg(const Vec3& m_unit, const Vec3& g_vec) {
    const double gn = g_vec.norm();
    if (gn < 1e-12) {
        throw_error(ErrorCode::invalid_argument, "magnetic_inclination_deg: zero gravity vector");
    }
    const double c = std::clamp(m_unit.dot(g_vec) / gn, -1.0, 1.0);
    return 90.0 - rad2deg(std::acos(c));
}

} // namespace magcal
