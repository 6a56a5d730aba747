#include "batch_oracles.hpp"

#include "error.hpp"

#include <cmath>

namespace magcal {
namespace batch {

namespace {

std::vector<Vec3> boxcar(std::span<const Vec3> y, int window) {
    if (window <= 1) return {y.begin(), y.end()};
    if (window % 2 == 0) {
        throw_error(ErrorCode::invalid_argument, "differentiate: smoothing window must be odd");
    }
    const int half = window / 2;
    const auto n = static_cast<std::ptrdiff_t>(y.size());
    std::vector<Vec3> out(y.size());
    for (std::ptrdiff_t k = 0; k < n; ++k) {
        Vec3 acc = Vec3::Zero();
        int cnt = 0;
        for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, k - half);
             j <= std::min<std::ptrdiff_t>(n - 1, k + half); ++j) {
            acc += y[j];
            ++cnt;
        }
        out[k] = acc / cnt;
    }
    return out;
}

Mat3 reshape_col_major(const Eigen::Matrix<double, 9, 1>& v) {
    Mat3 m;
    m << v(0), v(3), v(6),
         v(1), v(4), v(7),
         v(2), v(5), v(8);
    return m;
}

} // namespace

DiffSeries differentiate(std::span<const Vec3> y, double dt, DiffScheme scheme, int smooth_window) {
    if (dt <= 0.0) {
        throw_error(ErrorCode::invalid_argument, "differentiate: dt must be > 0");
    }
    const std::vector<Vec3> ys = boxcar(y, smooth_window);
    DiffSeries d;
    d.dot.assign(ys.size(), Vec3::Zero());
    const std::size_t n = ys.size();
    if (scheme == DiffScheme::central3) {
        if (n < 3) return d;
        d.lo = 1;
        d.hi = n - 1;
        for (std::size_t k = 1; k + 1 < n; ++k) {
            d.dot[k] = (ys[k + 1] - ys[k - 1]) / (2.0 * dt);
        }
    } else {
        if (n < 5) return d;
        d.lo = 2;
        d.hi = n - 2;
        for (std::size_t k = 2; k + 2 < n; ++k) {
            d.dot[k] = (-ys[k + 2] + 8.0 * ys[k + 1] - 8.0 * ys[k - 1] + ys[k - 2]) / (12.0 * dt);
        }
    }
    return d;
}

IntrinsicParams fit_intrinsic(std::span<const Vec3> y_m, const BatchOptions& options) {
    if (y_m.size() < 10) {
        throw_error(ErrorCode::invalid_argument, "fit_intrinsic: need at least 10 samples");
    }
    Eigen::Matrix<double, 10, 10> g = Eigen::Matrix<double, 10, 10>::Zero();
    for (const Vec3& y : y_m) {
        const obsv::RowY row = obsv::row_Y(y);
        g += row.transpose() * row;
    }
    g = 0.5 * (g + g.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 10, 10>> es(g);
    const auto& ev = es.eigenvalues();
    if (ev(9) <= 0.0) {
        throw_error(ErrorCode::unobservable, "fit_intrinsic: degenerate data (zero Gramian)");
    }
    if (ev(1) < options.null_tol * ev(9)) {
        throw_error(ErrorCode::unobservable,
                    "fit_intrinsic: quadric Gramian has more than one near-zero eigenvalue "
                    "(insufficient orientation coverage)");
    }
    Eigen::Matrix<double, 10, 1> z = es.eigenvectors().col(0);

    Mat3 a_raw;
    a_raw << z(0), z(1), z(2),
             z(1), z(3), z(4),
             z(2), z(4), z(5);
    const Vec3 b_raw = z.segment<3>(6);
    const double c_raw = z(9);

    const Vec3 h = a_raw.fullPivLu().solve(b_raw);
    double alpha = b_raw.dot(h) - c_raw;
    Mat3 a = a_raw;
    if (alpha < 0.0) { // eigenvector sign flip
        a = -a;
        alpha = -alpha;
    }
    if (alpha <= 0.0) {
        throw_error(ErrorCode::numeric, "fit_intrinsic: degenerate quadric scale");
    }
    a /= alpha;

    Eigen::LLT<Mat3> llt(a);
    if (llt.info() != Eigen::Success) {
        throw_error(ErrorCode::numeric,
                    "fit_intrinsic: recovered quadratic form is not positive definite "
                    "(insufficient excitation)");
    }
    IntrinsicParams out;
    out.r = llt.matrixU();
    out.h = h;
    return out;
}

AlignmentParams solve_alignment(std::span<const Vec3> y_star,
                                std::span<const Vec3> omega,
                                double dt,
                                const BatchOptions& options) {
    if (y_star.size() != omega.size()) {
        throw_error(ErrorCode::invalid_argument, "solve_alignment: series size mismatch");
    }
    const DiffSeries dy = differentiate(y_star, dt, options.diff, options.smooth_window);
    if (dy.hi <= dy.lo) {
        throw_error(ErrorCode::invalid_argument, "solve_alignment: stream too short");
    }

    Eigen::Matrix<double, 12, 12> g = Eigen::Matrix<double, 12, 12>::Zero();
    Eigen::Matrix<double, 12, 1> b = Eigen::Matrix<double, 12, 1>::Zero();
    for (std::size_t k = dy.lo; k < dy.hi; ++k) {
        const obsv::MatW w = obsv::row_W(y_star[k], omega[k]);
        g += w.transpose() * w * dt;
        b += w.transpose() * dy.dot[k] * dt;
    }
    g = 0.5 * (g + g.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 12, 12>> es(g);
    if (es.eigenvalues()(0) < options.rank_tol * es.eigenvalues()(11)) {
        throw_error(ErrorCode::unobservable,
                    "solve_alignment: rate Gramian is singular (rotation not rich enough)");
    }
    const Eigen::Matrix<double, 12, 1> eta = g.ldlt().solve(b);

    const Mat3 x = reshape_col_major(eta.head<9>());
    AlignmentParams out;
    out.c_b_m = so3::nearest_rotation(x);
    if (std::abs(x.determinant()) < 1e-9) {
        throw_error(ErrorCode::numeric, "solve_alignment: unprojected misalignment estimate is singular");
    }
    out.eps = x.inverse() * eta.tail<3>();
    out.eps_projected = out.c_b_m.transpose() * eta.tail<3>();
    return out;
}

Vec3 solve_bias_from_accel(std::span<const Vec3> y_a,
                           std::span<const Vec3> omega,
                           double dt,
                           const BatchOptions& options) {
    if (y_a.size() != omega.size()) {
        throw_error(ErrorCode::invalid_argument, "solve_bias_from_accel: series size mismatch");
    }
    const DiffSeries dy = differentiate(y_a, dt, options.diff, options.smooth_window);
    if (dy.hi <= dy.lo) {
        throw_error(ErrorCode::invalid_argument, "solve_bias_from_accel: stream too short");
    }

    Mat3 g_a = Mat3::Zero();      // int ya ya' dt, the observability condition
    Mat3 normal = Mat3::Zero();   // int (||ya||^2 I - ya ya') dt, the LSQ normal matrix
    Vec3 rhs = Vec3::Zero();
    for (std::size_t k = dy.lo; k < dy.hi; ++k) {
        const Vec3& y = y_a[k];
        g_a += y * y.transpose() * dt;
        normal += (y.squaredNorm() * Mat3::Identity() - y * y.transpose()) * dt;
        rhs += y.cross(dy.dot[k] + omega[k].cross(y)) * dt;
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (g_a + g_a.transpose()));
    if (es.eigenvalues()(0) < options.rank_tol * std::max(es.eigenvalues()(2), 1e-300)) {
        throw_error(ErrorCode::unobservable,
                    "solve_bias_from_accel: int ya ya' dt is singular (attitude not diverse enough)");
    }
    return normal.ldlt().solve(rhs);
}

Thm22Result solve_full_thm22(std::span<const SensorSample> samples, const BatchOptions& options) {
    if (samples.size() < 10) {
        throw_error(ErrorCode::invalid_argument, "solve_full_thm22: stream too short");
    }
    std::vector<double> t(samples.size());
    std::vector<Vec3> gyro(samples.size()), accel(samples.size());
    for (std::size_t k = 0; k < samples.size(); ++k) {
        t[k] = samples[k].t;
        gyro[k] = samples[k].gyro;
        accel[k] = samples[k].accel;
    }
    const double dt = (t.back() - t.front()) / static_cast<double>(t.size() - 1);

    Thm22Result out;
    out.eps = solve_bias_from_accel(accel, gyro, dt, options);

    const std::vector<Dcm> attitude = so3::integrate_gyro(t, gyro, out.eps, options.integration);

    Eigen::Matrix<double, 15, 15> g = Eigen::Matrix<double, 15, 15>::Zero();
    for (std::size_t k = 1; k < samples.size(); ++k) {
        const obsv::MatM m = obsv::row_M(samples[k].mag, attitude[k]);
        g += m.transpose() * m * dt;
    }
    g = 0.5 * (g + g.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 15, 15>> es(g);
    const auto& ev = es.eigenvalues();
    if (ev(14) <= 0.0 || ev(1) < options.null_tol * ev(14)) {
        throw_error(ErrorCode::unobservable,
                    "solve_full_thm22: int M'M dt does not have a unique null direction");
    }
    Eigen::Matrix<double, 15, 1> kappa = es.eigenvectors().col(0);

    const double m_norm = kappa.tail<3>().norm();
    if (m_norm < 1e-12) {
        throw_error(ErrorCode::numeric, "solve_full_thm22: degenerate magnetic-vector block");
    }
    kappa /= m_norm; // enforce unit magnetic vector
    Mat3 s_inv = reshape_col_major(kappa.head<9>());
    if (s_inv.determinant() < 0.0) { // eigenvector sign ambiguity
        kappa = -kappa;
        s_inv = -s_inv;
    }
    if (std::abs(s_inv.determinant()) < 1e-12) {
        throw_error(ErrorCode::numeric, "solve_full_thm22: recovered S^-1 is singular");
    }

    out.S = s_inv.inverse();
    out.h = out.S * kappa.segment<3>(9);
    out.m_i = kappa.tail<3>();

    Vec3 g_acc = Vec3::Zero();
    for (std::size_t k = 0; k < samples.size(); ++k) {
        g_acc += -(attitude[k] * accel[k]);
    }
    out.g_i = g_acc / static_cast<double>(samples.size());
    return out;
}

} // namespace batch
} // namespace magcal
