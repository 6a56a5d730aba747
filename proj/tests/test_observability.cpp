#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "error.hpp"
#include "observability.hpp"
#include "sensor_sim.hpp"
#include "test_util.hpp"

#include <random>

using namespace magcal;

TEST_CASE("row_Y: basis vector and unique-entry ordering") {
    const obsv::RowY row = obsv::row_Y(Vec3(1, 0, 0));
    Eigen::Matrix<double, 1, 10> want;
    want << 1, 0, 0, 0, 0, 0, -2, 0, 0, 1;
    CHECK((row - want).norm() == 0.0);
}

TEST_CASE("row_Y: identity-parameter residual is the squared-norm defect") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
        const Vec3 y = test::random_vec3(rng, 1.3);
        const auto z = obsv::make_z_star(Mat3::Identity(), Vec3::Zero());
        const double resid = (obsv::row_Y(y) * z)(0, 0);
        CHECK(resid == doctest::Approx(y.squaredNorm() - 1.0).epsilon(1e-12));
    }
    // zero exactly on the unit sphere
    const Vec3 u = Vec3(1, 2, -2).normalized();
    const auto z = obsv::make_z_star(Mat3::Identity(), Vec3::Zero());
    CHECK(std::abs((obsv::row_Y(u) * z)(0, 0)) < 1e-14);
}

TEST_CASE("row_Y: vanishes on the true ellipsoid for random parameters") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        Mat3 r = Mat3::Zero();
        r(0, 0) = std::max(1.0 + 0.3 * n01(rng), 0.3);
        r(1, 1) = std::max(1.0 + 0.3 * n01(rng), 0.3);
        r(2, 2) = std::max(1.0 + 0.3 * n01(rng), 0.3);
        r(0, 1) = 0.2 * n01(rng);
        r(0, 2) = 0.2 * n01(rng);
        r(1, 2) = 0.2 * n01(rng);
        const Vec3 h = test::random_vec3(rng, 0.5);
        Vec3 u = test::random_vec3(rng);
        if (u.norm() < 1e-6) u = Vec3::UnitX();
        u.normalize();
        // sample on the ellipsoid: y = R^-1 u + h, so ||R(y - h)|| = 1
        const Vec3 y = r.inverse() * u + h;
        const double resid = (obsv::row_Y(y) * obsv::make_z_star(r, h))(0, 0);
        CHECK(std::abs(resid) < 1e-10);
    }
}

TEST_CASE("row_W: zero rate contracts vec(I) to zero") {
    Eigen::Matrix<double, 12, 1> eta = Eigen::Matrix<double, 12, 1>::Zero();
    eta(0) = eta(4) = eta(8) = 1.0; // vec(I), column-major
    const obsv::MatW w = obsv::row_W(Vec3(0.3, -0.2, 0.9), Vec3::Zero());
    CHECK((w * eta).norm() == 0.0);
}

TEST_CASE("row_W: identity misalignment reduces to skew(y*) w") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        const Vec3 y = test::random_vec3(rng);
        const Vec3 w_rate = test::random_vec3(rng, 2.0);
        Eigen::Matrix<double, 12, 1> eta = Eigen::Matrix<double, 12, 1>::Zero();
        eta(0) = eta(4) = eta(8) = 1.0;
        const Vec3 got = obsv::row_W(y, w_rate) * eta;
        const Vec3 want = so3::skew(y) * w_rate;
        CHECK((got - want).norm() < 1e-14);
    }
}

TEST_CASE("row_W: general contraction matches the rate equation") {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 100; ++i) {
        const Dcm c_b_m = test::random_rotation(rng);
        const Vec3 eps = test::random_vec3(rng, 0.01);
        const Vec3 y = test::random_vec3(rng);
        const Vec3 w_rate = test::random_vec3(rng, 2.0);
        Eigen::Matrix<double, 12, 1> eta;
        eta << c_b_m.col(0), c_b_m.col(1), c_b_m.col(2), c_b_m * eps;
        const Vec3 got = obsv::row_W(y, w_rate) * eta;
        const Vec3 want = so3::skew(y) * (c_b_m * (w_rate - eps));
        CHECK((got - want).norm() < 1e-13);
    }
}

TEST_CASE("row_W: matches central-difference rates on a noiseless stream") {
    sim::SimTruth truth = test::mild_truth();
    truth.noise = test::zero_noise();
    truth.gyro_model = sim::GyroModel::instantaneous; // collocated with the derivatives
    const auto traj = sim::gen_trajectory(test::tumble_profile(0.0, 20.0, 1.5), 5);
    const auto stream = sim::simulate(truth, traj, 5);

    auto [c_m_b, r_true] = so3::qr_pos_diag(truth.S.inverse());
    const Dcm c_b_m = c_m_b.transpose();
    Eigen::Matrix<double, 12, 1> eta;
    eta << c_b_m.col(0), c_b_m.col(1), c_b_m.col(2), c_b_m * truth.eps;

    const double dt = 0.01;
    for (std::size_t k = 1; k + 1 < stream.samples.size(); ++k) {
        const Vec3 ys_m = r_true * (stream.samples[k - 1].mag - truth.h);
        const Vec3 ys_0 = r_true * (stream.samples[k].mag - truth.h);
        const Vec3 ys_p = r_true * (stream.samples[k + 1].mag - truth.h);
        const Vec3 dy = (ys_p - ys_m) / (2.0 * dt);
        const Vec3 model = obsv::row_W(ys_0, stream.samples[k].gyro) * eta;
        const double w_norm = stream.samples[k].gyro.norm();
        if (w_norm < 0.05) continue;
        CHECK((model - dy).norm() < 5e-3 * w_norm);
    }
}

TEST_CASE("row_M: exact zero for identity truth and for random truth") {
    Eigen::Matrix<double, 15, 1> kappa = Eigen::Matrix<double, 15, 1>::Zero();
    kappa(0) = kappa(4) = kappa(8) = 1.0; // vec(S^-1) = vec(I)
    const Vec3 m_i(0.4, -0.3, 0.86);
    kappa.tail<3>() = m_i;
    CHECK((obsv::row_M(m_i, Mat3::Identity()) * kappa).norm() < 1e-15);

    std::mt19937_64 rng(6);
    for (int i = 0; i < 200; ++i) {
        const Dcm c = test::random_rotation(rng);
        Mat3 pert;
        pert << test::random_vec3(rng), test::random_vec3(rng), test::random_vec3(rng);
        const Mat3 s = Mat3::Identity() + 0.3 * pert;
        if (std::abs(s.determinant()) < 0.1) continue;
        const Vec3 h = test::random_vec3(rng, 0.4);
        Vec3 m = test::random_vec3(rng);
        if (m.norm() < 1e-6) m = Vec3::UnitZ();
        m.normalize();
        const Vec3 y = s * (c.transpose() * m) + h;
        const Mat3 s_inv = s.inverse();
        Eigen::Matrix<double, 15, 1> kap;
        kap << s_inv.col(0), s_inv.col(1), s_inv.col(2), s_inv * h, m;
        CHECK((obsv::row_M(y, c) * kap).norm() < 1e-10);
    }
}

TEST_CASE("row_M: residual is linear in kappa") {
    std::mt19937_64 rng(7);
    const Dcm c = test::random_rotation(rng);
    const Vec3 y = test::random_vec3(rng);
    Eigen::Matrix<double, 15, 1> kappa;
    for (int i = 0; i < 15; ++i) kappa(i) = test::random_vec3(rng)(0);
    const Vec3 r1 = obsv::row_M(y, c) * kappa;
    const Vec3 r2 = obsv::row_M(y, c) * (2.5 * kappa).eval();
    CHECK((r2 - 2.5 * r1).norm() < 1e-12);
}

TEST_CASE("report: empty accumulation is unobservable") {
    obsv::GramianSet g;
    const auto rep = obsv::report(g, 1e-8);
    CHECK(rep.y.verdict == obsv::Verdict::unobservable);
    CHECK(rep.w.verdict == obsv::Verdict::unobservable);
    CHECK(rep.a.verdict == obsv::Verdict::unobservable);
    CHECK(rep.m.verdict == obsv::Verdict::unobservable);
    CHECK_FALSE(rep.thm21_observable);
    CHECK_FALSE(rep.thm22_observable);
}

TEST_CASE("accumulate: stationary stream is reported unobservable") {
    sim::SimTruth truth = test::mild_truth();
    // small noise keeps the eigen floor well defined
    truth.noise = test::zero_noise();
    truth.noise.sigma_m = 1e-4;
    sim::TrajectoryProfile p;
    p.still_seconds = 10.0;
    const auto traj = sim::gen_trajectory(p, 8);
    const auto stream = sim::simulate(truth, traj, 8);

    obsv::ScanOptions scan;
    auto [c_m_b, r_true] = so3::qr_pos_diag(truth.S.inverse());
    scan.intrinsic = std::make_pair(Mat3(r_true), truth.h);
    scan.gyro_bias = truth.eps;
    scan.track_ratio = false;
    const auto g = obsv::scan_stream(stream.samples, scan);
    const auto rep = obsv::report(g, 1e-8);

    // One repeated measurement spans a single quadric row: far more than one
    // near-zero eigenvalue.
    CHECK(rep.y.near_zero > 1);
    CHECK(rep.y.verdict == obsv::Verdict::unobservable);
    CHECK(rep.w.verdict == obsv::Verdict::unobservable);
    CHECK_FALSE(rep.thm21_observable);
}

TEST_CASE("report: full tumble observable on both routes, zeroed accel kills only one") {
    sim::SimTruth truth = test::mild_truth();
    truth.noise = test::zero_noise();
    const auto traj = sim::gen_trajectory(test::tumble_profile(0.0, 60.0, 1.5), 9);
    auto stream = sim::simulate(truth, traj, 9);

    obsv::ScanOptions scan;
    auto [c_m_b, r_true] = so3::qr_pos_diag(truth.S.inverse());
    scan.intrinsic = std::make_pair(Mat3(r_true), truth.h);
    scan.gyro_bias = truth.eps;
    scan.track_ratio = false;
    {
        const auto rep = obsv::report(obsv::scan_stream(stream.samples, scan), 1e-8);
        CHECK(rep.thm21_observable);
        CHECK(rep.thm22_observable);
    }
    for (auto& s : stream.samples) s.accel = Vec3::Zero();
    {
        const auto rep = obsv::report(obsv::scan_stream(stream.samples, scan), 1e-8);
        CHECK(rep.a.verdict == obsv::Verdict::unobservable);
        CHECK_FALSE(rep.thm22_observable);
        CHECK(rep.thm21_observable); // the magnetometer/gyro route stands alone
    }
}

TEST_CASE("accumulate: staged axis onsets produce sharp eigenvalue-ratio drops") {
    sim::SimTruth truth = test::mild_truth();
    truth.noise = test::zero_noise();
    truth.noise.sigma_m = 5e-4;
    sim::TrajectoryProfile p;
    // Hand-held motion: one strong axis plus a degree of wobble, then
    // deliberate rotations about the remaining axes.
    p.segments.push_back({40.0, Vec3(1.2, 0.01, 0.01)}); // x-dominant
    p.segments.push_back({40.0, Vec3(1.2, 1.2, 0.01)});  // y joins at 40 s
    p.segments.push_back({40.0, Vec3(1.2, 1.2, 1.2)});   // z joins at 80 s
    const auto traj = sim::gen_trajectory(p, 10);
    const auto stream = sim::simulate(truth, traj, 10);

    obsv::GramianSet g;
    for (std::size_t k = 1; k < stream.samples.size(); ++k) {
        obsv::GramianRows rows;
        rows.y = obsv::row_Y(stream.samples[k].mag);
        obsv::accumulate(g, rows, 0.01, true, stream.samples[k].t);
    }
    const auto ratio_at = [&](double t) {
        std::size_t best = 0;
        for (std::size_t k = 0; k < g.ratio_t.size(); ++k) {
            if (std::abs(g.ratio_t[k] - t) < std::abs(g.ratio_t[best] - t)) best = k;
        }
        return g.ratio[best];
    };

    // Once the single-axis fit has settled (the first seconds hold too little
    // data for the ratio to mean anything) it stays above 1e-4; after the
    // second axis joins it collapses through that level.
    double min_before = 1.0;
    for (std::size_t k = 0; k < g.ratio_t.size(); ++k) {
        if (g.ratio_t[k] > 20.0 && g.ratio_t[k] < 39.5) min_before = std::min(min_before, g.ratio[k]);
    }
    CHECK(min_before > 1e-4);
    CHECK(ratio_at(70.0) < 1e-4);
    // Sharp reduction when the second axis starts; settled low afterwards.
    CHECK(ratio_at(50.0) < 0.1 * ratio_at(39.0));
    CHECK(ratio_at(119.0) < ratio_at(39.0));
}

TEST_CASE("gramian eigenvalues grow monotonically with data") {
    sim::SimTruth truth = test::mild_truth();
    const auto traj = sim::gen_trajectory(test::tumble_profile(0.0, 20.0, 1.5), 11);
    const auto stream = sim::simulate(truth, traj, 11);

    obsv::GramianSet g;
    Eigen::Matrix<double, 10, 1> prev = Eigen::Matrix<double, 10, 1>::Zero();
    for (std::size_t k = 1; k < stream.samples.size(); ++k) {
        obsv::GramianRows rows;
        rows.y = obsv::row_Y(stream.samples[k].mag);
        rows.y_a = stream.samples[k].accel;
        obsv::accumulate(g, rows, 0.01);
        if (k % 400 == 0) {
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 10, 10>> es(g.g_y);
            for (int i = 0; i < 10; ++i) CHECK(es.eigenvalues()(i) >= prev(i) - 1e-12);
            prev = es.eigenvalues();
        }
    }
}

TEST_CASE("noiseless truth spans the null space of the quadric Gramian") {
    sim::SimTruth truth = test::mild_truth();
    truth.noise = test::zero_noise();
    const auto traj = sim::gen_trajectory(test::tumble_profile(0.0, 40.0, 1.5), 12);
    const auto stream = sim::simulate(truth, traj, 12);
    obsv::GramianSet g;
    for (std::size_t k = 1; k < stream.samples.size(); ++k) {
        obsv::GramianRows rows;
        rows.y = obsv::row_Y(stream.samples[k].mag);
        obsv::accumulate(g, rows, 0.01);
    }
    auto [c_m_b, r_true] = so3::qr_pos_diag(truth.S.inverse());
    const auto z = obsv::make_z_star(r_true, truth.h);
    CHECK((g.g_y * z).norm() < 1e-9 * g.g_y.norm() * z.norm());
}

TEST_CASE("scaling the measurements preserves the count of near-zero eigenvalues") {
    sim::SimTruth truth = test::mild_truth();
    truth.noise = test::zero_noise();
    truth.noise.sigma_m = 1e-4;
    const auto traj = sim::gen_trajectory(test::tumble_profile(0.0, 40.0, 1.5), 13);
    const auto stream = sim::simulate(truth, traj, 13);

    const auto count_null = [&](double scale) {
        obsv::GramianSet g;
        for (std::size_t k = 1; k < stream.samples.size(); ++k) {
            obsv::GramianRows rows;
            rows.y = obsv::row_Y(Vec3(scale * stream.samples[k].mag));
            obsv::accumulate(g, rows, 0.01);
        }
        const auto rep = obsv::report(g, 1e-6);
        return rep.y.near_zero;
    };
    CHECK(count_null(1.0) == count_null(7.5));
}

TEST_CASE("merge is commutative and matches joint accumulation") {
    sim::SimTruth truth = test::mild_truth();
    const auto traj = sim::gen_trajectory(test::tumble_profile(0.0, 10.0, 1.5), 14);
    const auto stream = sim::simulate(truth, traj, 14);

    obsv::GramianSet g1, g2, g_all;
    for (std::size_t k = 1; k < stream.samples.size(); ++k) {
        obsv::GramianRows rows;
        rows.y = obsv::row_Y(stream.samples[k].mag);
        rows.y_a = stream.samples[k].accel;
        obsv::accumulate(k < stream.samples.size() / 2 ? g1 : g2, rows, 0.01);
        obsv::accumulate(g_all, rows, 0.01);
    }
    const auto m12 = obsv::merge(g1, g2);
    const auto m21 = obsv::merge(g2, g1);
    CHECK((m12.g_y - m21.g_y).norm() == 0.0);
    CHECK((m12.g_a - m21.g_a).norm() == 0.0);
    CHECK((m12.g_y - g_all.g_y).norm() < 1e-12 * g_all.g_y.norm());
    CHECK(m12.t_span == doctest::Approx(g_all.t_span));
}

TEST_CASE("accumulate rejects non-positive dt") {
    obsv::GramianSet g;
    obsv::GramianRows rows;
    rows.y = obsv::row_Y(Vec3(1, 0, 0));
    CHECK_THROWS_AS(obsv::accumulate(g, rows, 0.0), Error);
}
