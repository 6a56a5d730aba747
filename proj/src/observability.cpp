#include "observability.hpp"

#include "error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace magcal {
namespace obsv {

RowY row_Y(const Vec3& y) {
    RowY row;
    row << y(0) * y(0), 2.0 * y(0) * y(1), 2.0 * y(0) * y(2),
           y(1) * y(1), 2.0 * y(1) * y(2), y(2) * y(2),
           -2.0 * y(0), -2.0 * y(1), -2.0 * y(2), 1.0;
    return row;
}

Eigen::Matrix<double, 10, 1> make_z_star(const UpperTriangular3& r, const Vec3& h) {
    const Mat3 a = r.transpose() * r;
    const Vec3 ah = a * h;
    Eigen::Matrix<double, 10, 1> z;
    z << a(0, 0), a(0, 1), a(0, 2), a(1, 1), a(1, 2), a(2, 2),
         ah(0), ah(1), ah(2), h.dot(ah) - 1.0;
    return z;
}

MatW row_W(const Vec3& y_star, const Vec3& omega) {
    const Mat3 yx = so3::skew(y_star);
    MatW w;
    w.block<3, 3>(0, 0) = omega(0) * yx;
    w.block<3, 3>(0, 3) = omega(1) * yx;
    w.block<3, 3>(0, 6) = omega(2) * yx;
    w.block<3, 3>(0, 9) = -yx;
    return w;
}

MatM row_M(const Vec3& y_m, const Dcm& c_b_i) {
    MatM m;
    m.block<3, 3>(0, 0) = y_m(0) * c_b_i;
    m.block<3, 3>(0, 3) = y_m(1) * c_b_i;
    m.block<3, 3>(0, 6) = y_m(2) * c_b_i;
    m.block<3, 3>(0, 9) = -c_b_i;
    m.block<3, 3>(0, 12) = -Mat3::Identity();
    return m;
}

namespace {

template <int N>
void add_sym(Eigen::Matrix<double, N, N>& g, const Eigen::Matrix<double, N, N>& inc) {
    g += inc;
    g = 0.5 * (g + g.transpose()).eval();
}

template <int N>
Eigen::Matrix<double, N, 1> sym_eigenvalues(const Eigen::Matrix<double, N, N>& g) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, N, N>> es(0.5 * (g + g.transpose()));
    return es.eigenvalues(); // ascending
}

double eig_ratio(double l0, double l1) {
    if (l1 <= 0.0) return 1.0;
    return std::clamp(l0 / l1, 0.0, 1.0);
}

template <int N>
GramianDiag diagnose(const char* name, const Eigen::Matrix<double, N, N>& g, double tol, bool needs_one_null) {
    const auto ev = sym_eigenvalues<N>(g);
    GramianDiag d;
    d.name = name;
    d.dim = N;
    d.eig_min = ev(0);
    d.eig_max = ev(N - 1);
    d.ratio = eig_ratio(std::max(ev(0), 0.0), ev(1));
    const double cut = tol * std::max(d.eig_max, 0.0);
    for (int i = 0; i < N; ++i) {
        if (ev(i) >= cut && d.eig_max > 0.0) ++d.rank;
        else ++d.near_zero;
    }
    if (needs_one_null) {
        if (d.near_zero == 1) d.verdict = Verdict::observable;
        else if (d.near_zero == 0) d.verdict = Verdict::marginal; // no clear null direction
        else d.verdict = Verdict::unobservable;
    } else {
        if (d.eig_max <= 0.0 || d.near_zero > 0) d.verdict = Verdict::unobservable;
        else if (d.eig_min < 100.0 * cut) d.verdict = Verdict::marginal;
        else d.verdict = Verdict::observable;
    }
    return d;
}

} // namespace

void accumulate(GramianSet& g, const GramianRows& rows, double dt, bool track_ratio, double t) {
    if (dt <= 0.0) {
        throw_error(ErrorCode::invalid_argument, "accumulate: dt must be > 0");
    }
    if (rows.y) add_sym<10>(g.g_y, (rows.y->transpose() * (*rows.y) * dt).eval());
    if (rows.w) add_sym<12>(g.g_w, (rows.w->transpose() * (*rows.w) * dt).eval());
    if (rows.y_a) add_sym<3>(g.g_a, (*rows.y_a * rows.y_a->transpose() * dt).eval());
    if (rows.m) add_sym<15>(g.g_m, (rows.m->transpose() * (*rows.m) * dt).eval());
    g.t_span += dt;
    if (track_ratio) {
        const auto ev = sym_eigenvalues<10>(g.g_y);
        g.ratio_t.push_back(t);
        g.ratio.push_back(eig_ratio(std::max(ev(0), 0.0), ev(1)));
    }
}

GramianSet merge(const GramianSet& a, const GramianSet& b) {
    GramianSet out;
    out.g_y = a.g_y + b.g_y;
    out.g_w = a.g_w + b.g_w;
    out.g_a = a.g_a + b.g_a;
    out.g_m = a.g_m + b.g_m;
    out.t_span = a.t_span + b.t_span;
    out.ratio_t = a.ratio_t;
    out.ratio_t.insert(out.ratio_t.end(), b.ratio_t.begin(), b.ratio_t.end());
    out.ratio = a.ratio;
    out.ratio.insert(out.ratio.end(), b.ratio.begin(), b.ratio.end());
    return out;
}

ObsvReport report(const GramianSet& g, double tol) {
    ObsvReport r;
    r.tol = tol;
    r.t_span = g.t_span;
    r.y = diagnose<10>("int Y*'Y* dt", g.g_y, tol, true);
    r.w = diagnose<12>("int W'W dt", g.g_w, tol, false);
    r.a = diagnose<3>("int ya ya' dt", g.g_a, tol, false);
    r.m = diagnose<15>("int M'M dt", g.g_m, tol, true);
    r.thm21_observable = r.w.verdict == Verdict::observable && r.y.verdict == Verdict::observable;
    r.thm22_observable = r.a.verdict == Verdict::observable && r.m.verdict == Verdict::observable;
    r.ratio_t = g.ratio_t;
    r.log10_ratio.reserve(g.ratio.size());
    for (double v : g.ratio) {
        r.log10_ratio.push_back(std::log10(std::max(v, 1e-300)));
    }
    return r;
}

const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::observable: return "observable";
        case Verdict::unobservable: return "unobservable";
        case Verdict::marginal: return "marginal";
    }
    return "?";
}

std::string report_text(const ObsvReport& r) {
    std::ostringstream os;
    char line[256];
    os << "Observability diagnostics over " << r.t_span << " s (rel. tol " << r.tol << ")\n";
    std::snprintf(line, sizeof line, "  %-16s %4s %13s %13s %10s %5s %s\n",
                  "gramian", "dim", "eig_min", "eig_max", "ratio", "rank", "verdict");
    os << line;
    for (const GramianDiag* d : {&r.y, &r.w, &r.a, &r.m}) {
        std::snprintf(line, sizeof line, "  %-16s %4d %13.4e %13.4e %10.3e %5d %s\n",
                      d->name.c_str(), d->dim, d->eig_min, d->eig_max, d->ratio, d->rank,
                      verdict_name(d->verdict));
        os << line;
    }
    os << "  magnetometer/gyro route (needs W'W full rank, Y*'Y* one null): "
       << (r.thm21_observable ? "observable" : "not established") << "\n";
    os << "  accelerometer route     (needs ya ya' full rank, M'M one null): "
       << (r.thm22_observable ? "observable" : "not established") << "\n";
    return os.str();
}

GramianSet scan_stream(std::span<const SensorSample> samples, const ScanOptions& options) {
    GramianSet g;
    if (samples.size() < 2) return g;

    std::vector<Dcm> attitude;
    if (options.gyro_bias) {
        std::vector<double> t(samples.size());
        std::vector<Vec3> w(samples.size());
        for (std::size_t k = 0; k < samples.size(); ++k) {
            t[k] = samples[k].t;
            w[k] = samples[k].gyro;
        }
        attitude = so3::integrate_gyro(t, w, *options.gyro_bias, options.integration);
    }

    for (std::size_t k = 1; k < samples.size(); ++k) {
        const double dt = samples[k].t - samples[k - 1].t;
        GramianRows rows;
        rows.y = row_Y(samples[k].mag);
        if (options.intrinsic) {
            const auto& [r_upper, h] = *options.intrinsic;
            const Vec3 y_star = r_upper * (samples[k].mag - h);
            rows.w = row_W(y_star, samples[k].gyro);
        }
        rows.y_a = samples[k].accel;
        if (!attitude.empty()) {
            rows.m = row_M(samples[k].mag, attitude[k]);
        }
        accumulate(g, rows, dt, options.track_ratio, samples[k].t);
    }
    return g;
}

} // namespace obsv
} // namespace magcal
