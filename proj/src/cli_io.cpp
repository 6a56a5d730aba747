#include "cli_io.hpp"

#include "error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace magcal {
namespace io {

using nlohmann::json;

namespace {

const char* kCanonicalColumns[10] = {"t", "gx", "gy", "gz", "ax", "ay", "az", "mx", "my", "mz"};

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    for (auto& f : out) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
    }
    return out;
}

json mat3_to_json(const Mat3& m) {
    json rows = json::array();
    for (int i = 0; i < 3; ++i) {
        rows.push_back({m(i, 0), m(i, 1), m(i, 2)});
    }
    return rows;
}

json vec3_to_json(const Vec3& v) { return json::array({v(0), v(1), v(2)}); }

Mat3 mat3_from_json(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) throw_error(ErrorCode::parse, std::string(what) + ": expected 3x3 array");
    Mat3 m;
    for (int i = 0; i < 3; ++i) {
        if (!j[i].is_array() || j[i].size() != 3) {
            throw_error(ErrorCode::parse, std::string(what) + ": expected 3x3 array");
        }
        for (int k = 0; k < 3; ++k) m(i, k) = j[i][k].get<double>();
    }
    return m;
}

Vec3 vec3_from_json(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) throw_error(ErrorCode::parse, std::string(what) + ": expected 3-vector");
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

NoiseConfig noise_from_json(const json& j) {
    NoiseConfig n;
    if (j.contains("sigma_g_deg")) n.sigma_g = deg2rad(j["sigma_g_deg"].get<double>());
    if (j.contains("sigma_g_rad")) n.sigma_g = j["sigma_g_rad"].get<double>();
    if (j.contains("sigma_eps_deg")) n.sigma_eps = deg2rad(j["sigma_eps_deg"].get<double>());
    if (j.contains("sigma_eps_rad")) n.sigma_eps = j["sigma_eps_rad"].get<double>();
    if (j.contains("sigma_m")) n.sigma_m = j["sigma_m"].get<double>();
    if (j.contains("sigma_a")) n.sigma_a = j["sigma_a"].get<double>();
    if (j.contains("sigma_mi")) n.sigma_mi = j["sigma_mi"].get<double>();
    if (j.contains("sigma_gi")) n.sigma_gi = j["sigma_gi"].get<double>();
    return n;
}

std::optional<std::pair<double, double>> window_from_json(const json& j, const char* key) {
    if (!j.contains(key)) return std::nullopt;
    const auto& w = j[key];
    if (!w.is_array() || w.size() != 2) {
        throw_error(ErrorCode::parse, std::string(key) + ": expected [t0, t1]");
    }
    const double a = w[0].get<double>();
    const double b = w[1].get<double>();
    if (!(a < b)) throw_error(ErrorCode::parse, std::string(key) + ": t0 must be < t1");
    return std::make_pair(a, b);
}

} // namespace

std::string fnv1a_hex(const std::string& data) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_error(ErrorCode::io, "cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw_error(ErrorCode::io, "cannot write file: " + path);
    out << content;
    if (!out) throw_error(ErrorCode::io, "write failed: " + path);
}

std::vector<SensorSample> ingest_csv(const DatasetSpec& spec, IngestStats* stats) {
    if (spec.gyro_unit != "rad_per_s" && spec.gyro_unit != "deg_per_s") {
        throw_error(ErrorCode::parse,
                    "dataset: gyro unit declaration missing or unknown (use rad_per_s or deg_per_s)");
    }
    std::ifstream in(spec.path);
    if (!in) throw_error(ErrorCode::io, "cannot open dataset: " + spec.path);

    std::string line;
    if (!std::getline(in, line)) throw_error(ErrorCode::parse, spec.path + ": empty file");
    const std::vector<std::string> header = split_csv_line(line);

    int idx[10];
    for (int c = 0; c < 10; ++c) {
        std::string want = kCanonicalColumns[c];
        if (auto it = spec.columns.find(want); it != spec.columns.end()) want = it->second;
        const auto pos = std::find(header.begin(), header.end(), want);
        if (pos == header.end()) {
            throw_error(ErrorCode::parse, spec.path + ": header is missing column '" + want + "'");
        }
        idx[c] = static_cast<int>(pos - header.begin());
    }

    const double gyro_scale = spec.gyro_unit == "deg_per_s" ? kRadPerDeg : 1.0;
    std::vector<SensorSample> samples;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const std::vector<std::string> fields = split_csv_line(line);
        double v[10];
        for (int c = 0; c < 10; ++c) {
            if (idx[c] >= static_cast<int>(fields.size())) {
                throw_error(ErrorCode::parse,
                            spec.path + ": line " + std::to_string(line_no) + ": too few fields");
            }
            const std::string& f = fields[idx[c]];
            char* end = nullptr;
            v[c] = std::strtod(f.c_str(), &end);
            if (end == f.c_str() || (end && *end != '\0')) {
                throw_error(ErrorCode::parse,
                            spec.path + ": line " + std::to_string(line_no) + ": cannot parse '" + f + "'");
            }
            if (!std::isfinite(v[c])) {
                throw_error(ErrorCode::parse,
                            spec.path + ": line " + std::to_string(line_no) + ": non-finite value");
            }
        }
        SensorSample s;
        s.t = v[0];
        s.gyro = gyro_scale * Vec3(v[1], v[2], v[3]);
        s.accel = Vec3(v[4], v[5], v[6]);
        s.mag = Vec3(v[7], v[8], v[9]);
        if (!samples.empty() && s.t <= samples.back().t) {
            throw_error(ErrorCode::parse,
                        spec.path + ": line " + std::to_string(line_no) + ": non-monotone timestamp");
        }
        samples.push_back(s);
    }
    if (samples.size() < 2) throw_error(ErrorCode::parse, spec.path + ": fewer than two samples");

    std::vector<double> dts(samples.size() - 1);
    for (std::size_t k = 1; k < samples.size(); ++k) dts[k - 1] = samples[k].t - samples[k - 1].t;
    std::nth_element(dts.begin(), dts.begin() + dts.size() / 2, dts.end());
    const double median_dt = dts[dts.size() / 2];
    const double nominal = 1.0 / spec.rate_hz;
    if (std::abs(median_dt - nominal) > 0.01 * nominal) {
        throw_error(ErrorCode::parse,
                    spec.path + ": declared rate " + std::to_string(spec.rate_hz) +
                        " Hz does not match median spacing " + std::to_string(median_dt) + " s");
    }
    IngestStats st;
    st.rows = samples.size();
    st.median_dt = median_dt;
    for (std::size_t k = 1; k < samples.size(); ++k) {
        if (samples[k].t - samples[k - 1].t > 1.5 * nominal) ++st.gaps;
    }
    if (stats) *stats = st;
    return samples;
}

void write_stream_csv(const std::string& path, std::span<const SensorSample> samples) {
    std::ofstream out(path);
    if (!out) throw_error(ErrorCode::io, "cannot write stream: " + path);
    out << "t,gx,gy,gz,ax,ay,az,mx,my,mz\n";
    for (const auto& s : samples) {
        out << fmt_double(s.t);
        for (int i = 0; i < 3; ++i) out << ',' << fmt_double(s.gyro(i));
        for (int i = 0; i < 3; ++i) out << ',' << fmt_double(s.accel(i));
        for (int i = 0; i < 3; ++i) out << ',' << fmt_double(s.mag(i));
        out << '\n';
    }
    if (!out) throw_error(ErrorCode::io, "write failed: " + path);
}

Vec3 still_average_bias(std::span<const SensorSample> samples,
                        std::pair<double, double> window,
                        double motion_threshold) {
    Vec3 sum = Vec3::Zero();
    Vec3 sum_sq = Vec3::Zero();
    std::size_t n = 0;
    for (const auto& s : samples) {
        if (s.t < window.first || s.t > window.second) continue;
        sum += s.gyro;
        sum_sq += s.gyro.cwiseProduct(s.gyro);
        ++n;
    }
    if (n < 2) throw_error(ErrorCode::invalid_argument, "still_average_bias: window holds fewer than 2 samples");
    const Vec3 mean = sum / static_cast<double>(n);
    const Vec3 var = sum_sq / static_cast<double>(n) - mean.cwiseProduct(mean);
    for (int i = 0; i < 3; ++i) {
        if (std::sqrt(std::max(var(i), 0.0)) > motion_threshold) {
            throw_error(ErrorCode::invalid_argument,
                        "still_average_bias: motion detected inside the stationary window");
        }
    }
    return rad2deg(mean);
}

std::vector<Vec3> compare_attitude(const AttitudeSeries& a, const AttitudeSeries& b) {
    if (a.t.size() != b.t.size() || a.t.size() != a.c.size() || b.t.size() != b.c.size()) {
        throw_error(ErrorCode::invalid_argument, "compare_attitude: series sizes differ");
    }
    std::vector<Vec3> out;
    out.reserve(a.t.size());
    for (std::size_t k = 0; k < a.t.size(); ++k) {
        if (std::abs(a.t[k] - b.t[k]) > 1e-9) {
            throw_error(ErrorCode::invalid_argument, "compare_attitude: timestamps misaligned");
        }
        out.push_back(so3::dcm_to_euler(a.c[k].transpose() * b.c[k]));
    }
    return out;
}

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::ekf: return "ekf";
        case Mode::ekf_noaccel: return "ekf-noaccel";
        case Mode::ekf_twopass: return "ekf-twopass";
        case Mode::batch_thm21: return "batch-thm21";
        case Mode::batch_thm22: return "batch-thm22";
    }
    return "?";
}

Mode parse_mode(const std::string& name) {
    if (name == "ekf") return Mode::ekf;
    if (name == "ekf-noaccel") return Mode::ekf_noaccel;
    if (name == "ekf-twopass") return Mode::ekf_twopass;
    if (name == "batch-thm21") return Mode::batch_thm21;
    if (name == "batch-thm22") return Mode::batch_thm22;
    throw_error(ErrorCode::parse, "unknown mode: " + name);
}

RunConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const std::exception& e) {
        throw_error(ErrorCode::parse, std::string("config: ") + e.what());
    }

    RunConfig cfg;
    cfg.config_hash = fnv1a_hex(j.dump());
    if (j.contains("mode")) cfg.mode = parse_mode(j["mode"].get<std::string>());
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();

    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        DatasetSpec spec;
        if (!d.contains("path")) throw_error(ErrorCode::parse, "dataset: missing path");
        spec.path = d["path"].get<std::string>();
        if (d.contains("rate_hz")) spec.rate_hz = d["rate_hz"].get<double>();
        if (d.contains("units")) {
            const auto& u = d["units"];
            if (u.contains("gyro")) spec.gyro_unit = u["gyro"].get<std::string>();
            if (u.contains("accel")) spec.accel_unit = u["accel"].get<std::string>();
            if (u.contains("mag")) spec.mag_unit = u["mag"].get<std::string>();
        }
        if (d.contains("columns")) {
            for (auto it = d["columns"].begin(); it != d["columns"].end(); ++it) {
                spec.columns[it.key()] = it.value().get<std::string>();
            }
        }
        spec.stationary_window = window_from_json(d, "stationary_window");
        spec.estimation_window = window_from_json(d, "estimation_window");
        cfg.dataset = spec;
    }

    if (j.contains("simulation")) {
        const auto& s = j["simulation"];
        SimSpec spec;
        spec.profile.sample_rate = s.value("rate_hz", 100.0);
        spec.profile.still_seconds = s.value("still_s", 0.0);
        if (s.contains("segments")) {
            for (const auto& seg : s["segments"]) {
                sim::TrajectoryProfile::Segment p;
                p.duration = seg.at("duration").get<double>();
                p.peak_rate = vec3_from_json(seg.at("peak_rate"), "segment peak_rate");
                spec.profile.segments.push_back(p);
            }
        } else {
            sim::TrajectoryProfile::Segment p;
            p.duration = s.value("duration_s", 120.0);
            p.peak_rate = s.contains("peak_rate") ? vec3_from_json(s["peak_rate"], "peak_rate")
                                                  : Vec3(2.0, 2.0, 2.0);
            spec.profile.segments.push_back(p);
        }
        if (s.contains("harmonics")) spec.profile.harmonics = s["harmonics"].get<int>();
        if (s.contains("freq_lo")) spec.profile.freq_lo = s["freq_lo"].get<double>();
        if (s.contains("freq_hi")) spec.profile.freq_hi = s["freq_hi"].get<double>();
        if (s.contains("ramp_s")) spec.profile.ramp_seconds = s["ramp_s"].get<double>();

        spec.truth.sample_rate = spec.profile.sample_rate;
        if (s.contains("gyro_model")) {
            const std::string gm = s["gyro_model"].get<std::string>();
            if (gm == "increment") spec.truth.gyro_model = sim::GyroModel::increment;
            else if (gm == "instant") spec.truth.gyro_model = sim::GyroModel::instantaneous;
            else throw_error(ErrorCode::parse, "simulation: unknown gyro_model " + gm);
        }
        if (s.contains("truth")) {
            const auto& t = s["truth"];
            if (t.contains("s")) {
                spec.truth.S = mat3_from_json(t["s"], "truth.s");
            } else {
                Mat3 r_upper = Mat3::Identity();
                Dcm c_b_m = Mat3::Identity();
                if (t.contains("r_upper")) r_upper = mat3_from_json(t["r_upper"], "truth.r_upper");
                if (t.contains("euler_bm_deg")) {
                    c_b_m = so3::euler_to_dcm(vec3_from_json(t["euler_bm_deg"], "truth.euler_bm_deg"));
                }
                // S^-1 = C_m^b R  =>  S = (C_b^m' R)^-1
                spec.truth.S = (c_b_m.transpose() * r_upper).inverse();
            }
            if (t.contains("h")) spec.truth.h = vec3_from_json(t["h"], "truth.h");
            if (t.contains("eps_deg")) spec.truth.eps = deg2rad(vec3_from_json(t["eps_deg"], "truth.eps_deg"));
            if (t.contains("m_e")) spec.truth.m_e = vec3_from_json(t["m_e"], "truth.m_e").normalized();
            if (t.contains("g_e")) spec.truth.g_e = vec3_from_json(t["g_e"], "truth.g_e");
        }
        if (s.contains("noise")) spec.truth.noise = noise_from_json(s["noise"]);
        if (s.contains("disturbance")) {
            const auto& d = s["disturbance"];
            spec.disturbance_amplitude = d.value("amplitude", 0.0);
            spec.disturbance_freq_hz = d.value("freq_hz", 1.5);
            if (d.contains("windows")) {
                for (const auto& w : d["windows"]) {
                    spec.disturbance_windows.emplace_back(w[0].get<double>(), w[1].get<double>());
                }
            }
        }
        cfg.simulation = spec;
    }

    if (!cfg.dataset && !cfg.simulation) {
        throw_error(ErrorCode::parse, "config: need a dataset or a simulation section");
    }
    if (cfg.dataset && cfg.simulation) {
        throw_error(ErrorCode::parse, "config: dataset and simulation are mutually exclusive");
    }

    if (j.contains("noise")) cfg.ekf.noise = noise_from_json(j["noise"]);
    if (j.contains("ekf")) {
        const auto& e = j["ekf"];
        if (e.contains("t_md")) cfg.ekf.t_md = e["t_md"].get<double>();
        if (e.contains("g_local")) cfg.ekf.g_local = e["g_local"].get<double>();
        if (e.contains("use_accel")) cfg.ekf.use_accel = e["use_accel"].get<bool>();
        if (e.contains("s_init")) cfg.ekf.s_init = mat3_from_json(e["s_init"], "ekf.s_init");
        if (e.contains("start")) {
            cfg.ekf.t_start = e["start"].get<double>();
            cfg.ekf_window_explicit = true;
        }
        if (e.contains("stop")) {
            cfg.ekf.t_stop = e["stop"].get<double>();
            cfg.ekf_window_explicit = true;
        }
        if (e.contains("init_std")) {
            const auto& is = e["init_std"];
            if (is.contains("bias_deg")) cfg.ekf.init_std_bias = deg2rad(is["bias_deg"].get<double>());
            if (is.contains("s")) cfg.ekf.init_std_s = is["s"].get<double>();
            if (is.contains("h")) cfg.ekf.init_std_h = is["h"].get<double>();
            if (is.contains("m")) cfg.ekf.init_std_m = is["m"].get<double>();
            if (is.contains("g")) cfg.ekf.init_std_g = is["g"].get<double>();
        }
    }
    if (cfg.mode == Mode::ekf_noaccel) cfg.ekf.use_accel = false;
    if (j.contains("obsv") && j["obsv"].contains("tol_rel")) {
        cfg.obsv_tol = j["obsv"]["tol_rel"].get<double>();
    }
    return cfg;
}

RunConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

std::vector<SensorSample> load_samples(const RunConfig& config, IngestStats* stats) {
    if (config.dataset) {
        return ingest_csv(*config.dataset, stats);
    }
    const SimSpec& spec = *config.simulation;
    const sim::Trajectory traj = sim::gen_trajectory(spec.profile, config.seed);
    sim::SimStream stream = sim::simulate(spec.truth, traj, config.seed);
    if (spec.disturbance_amplitude != 0.0 && !spec.disturbance_windows.empty()) {
        sim::inject_acceleration(stream, spec.disturbance_windows, spec.disturbance_amplitude,
                                 spec.disturbance_freq_hz, config.seed + 1);
    }
    if (stats) {
        stats->rows = stream.samples.size();
        stats->gaps = 0;
        stats->median_dt = 1.0 / spec.truth.sample_rate;
    }
    return stream.samples;
}

namespace {

std::vector<SensorSample> window_slice(std::span<const SensorSample> samples, double t0, double t1) {
    std::vector<SensorSample> out;
    for (const auto& s : samples) {
        if (s.t >= t0 && s.t <= t1) out.push_back(s);
    }
    return out;
}

ekf::CalibResult calib_from_thm21(const std::vector<SensorSample>& win,
                                  const batch::IntrinsicParams& intrinsic,
                                  const batch::AlignmentParams& align,
                                  const ekf::EkfConfig& ekf_cfg,
                                  const batch::BatchOptions& opts) {
    std::vector<double> t(win.size());
    std::vector<Vec3> gyro(win.size());
    for (std::size_t k = 0; k < win.size(); ++k) {
        t[k] = win[k].t;
        gyro[k] = win[k].gyro;
    }
    const std::vector<Dcm> att = so3::integrate_gyro(t, gyro, align.eps, opts.integration);

    // m_i from the rotated unit measurements, g_i from the gated accel.
    Vec3 m_acc = Vec3::Zero();
    Vec3 g_acc = Vec3::Zero();
    std::size_t g_n = 0;
    for (std::size_t k = 0; k < win.size(); ++k) {
        const Vec3 y_star = intrinsic.r * (win[k].mag - intrinsic.h);
        m_acc += att[k] * (align.c_b_m.transpose() * y_star);
        if (std::abs(win[k].accel.norm() - ekf_cfg.g_local) < ekf_cfg.t_md) {
            g_acc += -(att[k] * win[k].accel);
            ++g_n;
        }
    }
    ekf::CalibResult out;
    out.r = intrinsic.r;
    out.h = intrinsic.h;
    out.c_b_m = align.c_b_m;
    out.c_b_m_euler_deg = so3::dcm_to_euler(align.c_b_m);
    out.s_rs = (align.c_b_m.transpose() * intrinsic.r).inverse();
    out.m_rs = m_acc.normalized();
    out.eps_deg = rad2deg(align.eps);
    out.g_i = g_n > 0 ? Vec3(g_acc / static_cast<double>(g_n)) : Vec3::Zero();
    out.inclination_deg = g_n > 0 ? magnetic_inclination_deg(out.m_rs, out.g_i)
                                  : std::numeric_limits<double>::quiet_NaN();
    out.anis_mag = std::numeric_limits<double>::quiet_NaN();
    out.accel_accept_ratio =
        win.empty() ? -1.0 : static_cast<double>(g_n) / static_cast<double>(win.size());
    out.att_t = t;
    out.attitude = att;
    return out;
}

ekf::CalibResult calib_from_thm22(const std::vector<SensorSample>& win,
                                  const batch::Thm22Result& sol,
                                  const batch::BatchOptions& opts) {
    ekf::CalibResult out;
    const double m_norm = sol.m_i.norm();
    out.s_rs = m_norm * sol.S;
    out.m_rs = sol.m_i / m_norm;
    auto [c_m_b, r_upper] = so3::qr_pos_diag(out.s_rs.inverse());
    out.r = r_upper;
    out.c_b_m = c_m_b.transpose();
    out.c_b_m_euler_deg = so3::dcm_to_euler(out.c_b_m);
    out.h = sol.h;
    out.eps_deg = rad2deg(sol.eps);
    out.g_i = sol.g_i;
    out.inclination_deg = magnetic_inclination_deg(out.m_rs, sol.g_i);
    out.anis_mag = std::numeric_limits<double>::quiet_NaN();
    out.accel_accept_ratio = -1.0;

    std::vector<double> t(win.size());
    std::vector<Vec3> gyro(win.size());
    for (std::size_t k = 0; k < win.size(); ++k) {
        t[k] = win[k].t;
        gyro[k] = win[k].gyro;
    }
    out.att_t = t;
    out.attitude = so3::integrate_gyro(t, gyro, sol.eps, opts.integration);
    return out;
}

} // namespace

RunReport run_calibration(const RunConfig& config) {
    RunReport report;
    report.mode = config.mode;
    report.seed = config.seed;
    report.config_hash = config.config_hash;
    if (config.simulation) report.truth = config.simulation->truth;

    const std::vector<SensorSample> samples = load_samples(config, &report.ingest);
    if (samples.size() < 2) {
        throw_error(ErrorCode::invalid_argument, "run_calibration: not enough samples");
    }

    // Estimation window: explicit ekf.start/stop, else the dataset annotation,
    // else motion start (simulation) or the full stream.
    ekf::EkfConfig ekf_cfg = config.ekf;
    if (!config.ekf_window_explicit) {
        if (config.dataset && config.dataset->estimation_window) {
            ekf_cfg.t_start = config.dataset->estimation_window->first;
            ekf_cfg.t_stop = config.dataset->estimation_window->second;
        } else if (config.simulation) {
            ekf_cfg.t_start = config.simulation->profile.still_seconds;
            ekf_cfg.t_stop = samples.back().t;
        } else {
            ekf_cfg.t_start = samples.front().t;
            ekf_cfg.t_stop = samples.back().t;
        }
    }
    const std::vector<SensorSample> win = window_slice(samples, ekf_cfg.t_start, ekf_cfg.t_stop);
    if (win.size() < 10) {
        throw_error(ErrorCode::invalid_argument, "run_calibration: estimation window is empty or too short");
    }
    const double dt = (win.back().t - win.front().t) / static_cast<double>(win.size() - 1);

    // Stationary annotation: explicit for datasets, the leading still segment
    // for simulations.
    std::optional<std::pair<double, double>> still_window;
    if (config.dataset && config.dataset->stationary_window) {
        still_window = config.dataset->stationary_window;
    } else if (config.simulation && config.simulation->profile.still_seconds > 0.5) {
        still_window = std::make_pair(0.0, config.simulation->profile.still_seconds - 0.2);
    }
    if (still_window) {
        report.still_bias_deg = still_average_bias(samples, *still_window);
    }

    batch::BatchOptions batch_opts;
    switch (config.mode) {
        case Mode::ekf:
        case Mode::ekf_noaccel: {
            report.calib = ekf::run(win, ekf_cfg, &report.diagnostics);
            break;
        }
        case Mode::ekf_twopass: {
            const ekf::TwoPassResult two = ekf::run_two_pass(win, ekf_cfg, &report.diagnostics);
            report.pass1 = two.pass1;
            report.calib = two.pass2;
            break;
        }
        case Mode::batch_thm21: {
            std::vector<Vec3> mags(win.size());
            for (std::size_t k = 0; k < win.size(); ++k) mags[k] = win[k].mag;
            const batch::IntrinsicParams intrinsic = batch::fit_intrinsic(mags, batch_opts);
            std::vector<Vec3> y_star(win.size()), omega(win.size());
            for (std::size_t k = 0; k < win.size(); ++k) {
                y_star[k] = intrinsic.r * (win[k].mag - intrinsic.h);
                omega[k] = win[k].gyro;
            }
            const batch::AlignmentParams align = batch::solve_alignment(y_star, omega, dt, batch_opts);
            report.batch_intrinsic = intrinsic;
            report.batch_alignment = align;
            report.calib = calib_from_thm21(win, intrinsic, align, ekf_cfg, batch_opts);
            break;
        }
        case Mode::batch_thm22: {
            const batch::Thm22Result sol = batch::solve_full_thm22(win, batch_opts);
            report.calib = calib_from_thm22(win, sol, batch_opts);
            break;
        }
    }

    // Cross-check columns for the EKF modes; skipped silently when the data
    // does not support the batch path.
    if (config.mode == Mode::ekf || config.mode == Mode::ekf_noaccel || config.mode == Mode::ekf_twopass) {
        try {
            std::vector<Vec3> mags(win.size());
            for (std::size_t k = 0; k < win.size(); ++k) mags[k] = win[k].mag;
            const batch::IntrinsicParams intrinsic = batch::fit_intrinsic(mags, batch_opts);
            std::vector<Vec3> y_star(win.size()), omega(win.size());
            for (std::size_t k = 0; k < win.size(); ++k) {
                y_star[k] = intrinsic.r * (win[k].mag - intrinsic.h);
                omega[k] = win[k].gyro;
            }
            report.batch_intrinsic = intrinsic;
            report.batch_alignment = batch::solve_alignment(y_star, omega, dt, batch_opts);
        } catch (const Error&) {
        }
    }

    // Observability diagnostics with the run's own parameter estimates.
    obsv::ScanOptions scan;
    scan.intrinsic = std::make_pair(report.calib.r, report.calib.h);
    scan.gyro_bias = deg2rad(report.calib.eps_deg);
    report.observability = obsv::report(obsv::scan_stream(win, scan), config.obsv_tol);

    // Gyroscope-maintained reference attitude for the discrepancy series.
    std::optional<Vec3> ref_bias_rad;
    if (report.still_bias_deg) {
        ref_bias_rad = deg2rad(*report.still_bias_deg);
    } else if (report.truth) {
        ref_bias_rad = report.truth->eps;
    }
    if (ref_bias_rad && !report.diagnostics.t.empty()) {
        std::vector<double> t(win.size());
        std::vector<Vec3> gyro(win.size());
        for (std::size_t k = 0; k < win.size(); ++k) {
            t[k] = win[k].t;
            gyro[k] = win[k].gyro;
        }
        const std::vector<Dcm> att =
            so3::integrate_gyro(t, gyro, *ref_bias_rad, so3::GyroIntegration::first_order);
        // Align with the diagnostics series, which starts at the second sample.
        report.gyro_attitude.t.assign(t.begin() + 1, t.end());
        report.gyro_attitude.c.assign(att.begin() + 1, att.end());
    }
    return report;
}

namespace {

void calib_to_json(const ekf::CalibResult& c, json& j) {
    j["s_rs"] = mat3_to_json(c.s_rs);
    j["m_rs"] = vec3_to_json(c.m_rs);
    j["r_upper"] = mat3_to_json(c.r);
    j["h"] = vec3_to_json(c.h);
    j["c_b_m"] = mat3_to_json(c.c_b_m);
    j["c_b_m_euler_deg"] = vec3_to_json(c.c_b_m_euler_deg);
    j["eps_deg"] = vec3_to_json(c.eps_deg);
    j["g_i"] = vec3_to_json(c.g_i);
    j["inclination_deg"] = c.inclination_deg;
    if (std::isfinite(c.anis_mag)) j["anis_mag"] = c.anis_mag;
    else j["anis_mag"] = nullptr;
    if (c.accel_accept_ratio >= 0.0) j["accel_accept_ratio"] = c.accel_accept_ratio;
    else j["accel_accept_ratio"] = nullptr;
}

void gramian_to_json(const obsv::GramianDiag& d, json& j) {
    j["dim"] = d.dim;
    j["eig_min"] = d.eig_min;
    j["eig_max"] = d.eig_max;
    j["ratio"] = d.ratio;
    j["rank"] = d.rank;
    j["verdict"] = obsv::verdict_name(d.verdict);
}

std::string fmt_vec3(const Vec3& v, const char* fmt = "%10.4f") {
    char buf[128];
    char one[32];
    std::string out = "[";
    for (int i = 0; i < 3; ++i) {
        std::snprintf(one, sizeof one, fmt, v(i));
        out += one;
        if (i < 2) out += " ";
    }
    out += "]";
    std::snprintf(buf, sizeof buf, "%s", out.c_str());
    return buf;
}

} // namespace

std::string report_json(const RunReport& r) {
    json j;
    j["provenance"] = {{"mode", mode_name(r.mode)}, {"seed", r.seed}, {"config_hash", r.config_hash}};
    j["ingest"] = {{"rows", r.ingest.rows}, {"gaps", r.ingest.gaps}, {"median_dt", r.ingest.median_dt}};
    calib_to_json(r.calib, j["calibration"]);
    if (r.pass1) calib_to_json(*r.pass1, j["pass1"]);

    json& o = j["observability"];
    o["tol"] = r.observability.tol;
    o["t_span"] = r.observability.t_span;
    gramian_to_json(r.observability.y, o["g_y"]);
    gramian_to_json(r.observability.w, o["g_w"]);
    gramian_to_json(r.observability.a, o["g_a"]);
    gramian_to_json(r.observability.m, o["g_m"]);
    o["thm21_observable"] = r.observability.thm21_observable;
    o["thm22_observable"] = r.observability.thm22_observable;

    j["still_bias_deg"] = r.still_bias_deg ? vec3_to_json(*r.still_bias_deg) : json(nullptr);
    if (r.batch_intrinsic) {
        j["batch"]["r_upper"] = mat3_to_json(r.batch_intrinsic->r);
        j["batch"]["h"] = vec3_to_json(r.batch_intrinsic->h);
    }
    if (r.batch_alignment) {
        j["batch"]["c_b_m_euler_deg"] = vec3_to_json(so3::dcm_to_euler(r.batch_alignment->c_b_m));
        j["batch"]["eps_deg"] = vec3_to_json(rad2deg(r.batch_alignment->eps));
    }
    if (r.truth) {
        json t;
        t["s"] = mat3_to_json(r.truth->S);
        t["h"] = vec3_to_json(r.truth->h);
        t["eps_deg"] = vec3_to_json(rad2deg(r.truth->eps));
        t["m_i"] = vec3_to_json(r.truth->m_i());
        t["g_i"] = vec3_to_json(r.truth->g_i());
        auto [c_m_b, r_upper] = so3::qr_pos_diag(r.truth->S.inverse());
        t["r_upper"] = mat3_to_json(r_upper);
        t["c_b_m_euler_deg"] = vec3_to_json(so3::dcm_to_euler(c_m_b.transpose()));
        t["inclination_deg"] = magnetic_inclination_deg(r.truth->m_e.normalized(), r.truth->g_e);
        j["truth"] = t;

        json d;
        d["eps_deg"] = vec3_to_json(r.calib.eps_deg - rad2deg(r.truth->eps));
        d["r_upper_max_abs"] = (r.calib.r - r_upper).cwiseAbs().maxCoeff();
        d["h_max_abs"] = (r.calib.h - r.truth->h).cwiseAbs().maxCoeff();
        d["c_b_m_angle_deg"] = rad2deg(so3::geodesic_angle(r.calib.c_b_m, c_m_b.transpose()));
        j["truth_delta"] = d;
    }
    return j.dump(2);
}

std::string report_text(const RunReport& r) {
    std::ostringstream os;
    char line[256];
    os << "magcal calibration report\n";
    os << "=========================\n";
    os << "mode: " << mode_name(r.mode) << "   seed: " << r.seed << "   config: " << r.config_hash << "\n";
    os << "samples: " << r.ingest.rows << " (gaps: " << r.ingest.gaps << ")\n\n";

    os << "Gyroscope bias (deg/s)\n";
    if (r.still_bias_deg) os << "  still averaging  " << fmt_vec3(*r.still_bias_deg) << "\n";
    os << "  estimate         " << fmt_vec3(r.calib.eps_deg) << "\n";
    if (r.batch_alignment) {
        os << "  batch rates      " << fmt_vec3(rad2deg(r.batch_alignment->eps)) << "\n";
    }
    os << "\nMagnetometer intrinsic parameters\n";
    for (int i = 0; i < 3; ++i) {
        std::snprintf(line, sizeof line, "  R row %d  [%10.4f %10.4f %10.4f]", i + 1,
                      r.calib.r(i, 0), r.calib.r(i, 1), r.calib.r(i, 2));
        os << line;
        if (r.batch_intrinsic) {
            std::snprintf(line, sizeof line, "   batch [%10.4f %10.4f %10.4f]",
                          r.batch_intrinsic->r(i, 0), r.batch_intrinsic->r(i, 1), r.batch_intrinsic->r(i, 2));
            os << line;
        }
        os << "\n";
    }
    os << "  h        " << fmt_vec3(r.calib.h);
    if (r.batch_intrinsic) os << "   batch " << fmt_vec3(r.batch_intrinsic->h);
    os << "\n";

    os << "\nCross-sensor C_b^m Euler angles (deg)\n";
    os << "  estimate " << fmt_vec3(r.calib.c_b_m_euler_deg, "%10.3f");
    if (r.batch_alignment) {
        os << "   batch " << fmt_vec3(so3::dcm_to_euler(r.batch_alignment->c_b_m), "%10.3f");
    }
    os << "\n";

    if (std::isfinite(r.calib.anis_mag)) {
        std::snprintf(line, sizeof line, "\nMagnetometer ANIS: %.2f", r.calib.anis_mag);
        os << line;
        if (r.pass1 && std::isfinite(r.pass1->anis_mag)) {
            std::snprintf(line, sizeof line, "   (1st run: %.2f)", r.pass1->anis_mag);
            os << line;
        }
        os << "\n";
    }
    if (r.calib.accel_accept_ratio >= 0.0) {
        std::snprintf(line, sizeof line, "Accel acceptance: %.1f%%\n", 100.0 * r.calib.accel_accept_ratio);
        os << line;
    }
    std::snprintf(line, sizeof line, "Magnetic inclination: %.2f deg\n", r.calib.inclination_deg);
    os << line;

    os << "\n" << obsv::report_text(r.observability);

    if (r.truth) {
        auto [c_m_b, r_upper] = so3::qr_pos_diag(r.truth->S.inverse());
        os << "\nTruth deltas (simulation source)\n";
        os << "  gyro bias delta (deg/s)   " << fmt_vec3(r.calib.eps_deg - rad2deg(r.truth->eps), "%10.5f") << "\n";
        std::snprintf(line, sizeof line, "  R max abs delta           %.3e\n",
                      (r.calib.r - r_upper).cwiseAbs().maxCoeff());
        os << line;
        std::snprintf(line, sizeof line, "  C_b^m angle delta (deg)   %.4f\n",
                      rad2deg(so3::geodesic_angle(r.calib.c_b_m, Dcm(c_m_b.transpose()))));
        os << line;
    }
    return os.str();
}

void write_report_files(const RunReport& r, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const auto path = [&](const char* name) { return (std::filesystem::path(out_dir) / name).string(); };
    write_file(path("report.txt"), report_text(r));
    write_file(path("report.json"), report_json(r));

    {
        std::ostringstream os;
        os << "t,log10_ratio\n";
        for (std::size_t k = 0; k < r.observability.ratio_t.size(); ++k) {
            os << fmt_double(r.observability.ratio_t[k]) << ',' << fmt_double(r.observability.log10_ratio[k])
               << '\n';
        }
        write_file(path("eig_ratio.csv"), os.str());
    }
    if (!r.diagnostics.t.empty()) {
        std::ostringstream os;
        os << "t,nu_x,nu_y,nu_z,sig3_x,sig3_y,sig3_z,accel_used\n";
        for (std::size_t k = 0; k < r.diagnostics.t.size(); ++k) {
            os << fmt_double(r.diagnostics.t[k]);
            for (int i = 0; i < 3; ++i) os << ',' << fmt_double(r.diagnostics.innovation[k](i));
            for (int i = 0; i < 3; ++i) os << ',' << fmt_double(r.diagnostics.sigma3[k](i));
            os << ',' << r.diagnostics.accel_accepted[k] << '\n';
        }
        write_file(path("innovations.csv"), os.str());

        std::ostringstream ss;
        ss << "t,eps_x_deg,eps_y_deg,eps_z_deg"
           << ",s11,s12,s13,s21,s22,s23,s31,s32,s33"
           << ",h_x,h_y,h_z,m_x,m_y,m_z,g_x,g_y,g_z\n";
        for (std::size_t k = 0; k < r.diagnostics.t.size(); ++k) {
            ss << fmt_double(r.diagnostics.t[k]);
            const Vec3 eps_deg = rad2deg(r.diagnostics.eps[k]);
            for (int i = 0; i < 3; ++i) ss << ',' << fmt_double(eps_deg(i));
            for (int i = 0; i < 3; ++i)
                for (int c = 0; c < 3; ++c) ss << ',' << fmt_double(r.diagnostics.s[k](i, c));
            for (int i = 0; i < 3; ++i) ss << ',' << fmt_double(r.diagnostics.h[k](i));
            for (int i = 0; i < 3; ++i) ss << ',' << fmt_double(r.diagnostics.m_i[k](i));
            for (int i = 0; i < 3; ++i) ss << ',' << fmt_double(r.diagnostics.g_i[k](i));
            ss << '\n';
        }
        write_file(path("states.csv"), ss.str());
    }
    if (!r.gyro_attitude.t.empty() && !r.diagnostics.attitude.empty()) {
        AttitudeSeries est;
        est.t = r.diagnostics.t;
        est.c = r.diagnostics.attitude;
        const std::vector<Vec3> disc = compare_attitude(est, r.gyro_attitude);
        std::ostringstream os;
        os << "t,droll_deg,dpitch_deg,dyaw_deg\n";
        for (std::size_t k = 0; k < disc.size(); ++k) {
            os << fmt_double(est.t[k]);
            for (int i = 0; i < 3; ++i) os << ',' << fmt_double(disc[k](i));
            os << '\n';
        }
        write_file(path("attitude_discrepancy.csv"), os.str());
    }
}

std::string compare_reports_text(const std::string& report_json_a, const std::string& report_json_b) {
    json a, b;
    try {
        a = json::parse(report_json_a);
        b = json::parse(report_json_b);
    } catch (const std::exception& e) {
        throw_error(ErrorCode::parse, std::string("compare: ") + e.what());
    }
    const auto vec = [](const json& j, const char* key) {
        Vec3 v = Vec3::Zero();
        if (j.contains("calibration") && j["calibration"].contains(key) && j["calibration"][key].is_array()) {
            for (int i = 0; i < 3; ++i) v(i) = j["calibration"][key][i].get<double>();
        }
        return v;
    };
    const auto scalar = [](const json& j, const char* key) {
        if (j.contains("calibration") && j["calibration"].contains(key) && j["calibration"][key].is_number()) {
            return j["calibration"][key].get<double>();
        }
        return std::numeric_limits<double>::quiet_NaN();
    };

    std::ostringstream os;
    char line[256];
    os << "magcal report comparison\n";
    os << "  A: " << a.value("provenance", json::object()).value("mode", "?")
       << " (config " << a.value("provenance", json::object()).value("config_hash", "?") << ")\n";
    os << "  B: " << b.value("provenance", json::object()).value("mode", "?")
       << " (config " << b.value("provenance", json::object()).value("config_hash", "?") << ")\n\n";

    const Vec3 ea = vec(a, "eps_deg"), eb = vec(b, "eps_deg");
    os << "gyro bias A (deg/s)      " << fmt_vec3(ea, "%10.4f") << "\n";
    os << "gyro bias B (deg/s)      " << fmt_vec3(eb, "%10.4f") << "\n";
    os << "gyro bias delta          " << fmt_vec3(ea - eb, "%10.4f") << "\n\n";
    const Vec3 ca = vec(a, "c_b_m_euler_deg"), cb = vec(b, "c_b_m_euler_deg");
    os << "C_b^m Euler A (deg)      " << fmt_vec3(ca, "%10.3f") << "\n";
    os << "C_b^m Euler B (deg)      " << fmt_vec3(cb, "%10.3f") << "\n";
    os << "C_b^m Euler delta        " << fmt_vec3(ca - cb, "%10.3f") << "\n\n";
    std::snprintf(line, sizeof line, "ANIS        A %.3f   B %.3f\n", scalar(a, "anis_mag"), scalar(b, "anis_mag"));
    os << line;
    std::snprintf(line, sizeof line, "inclination A %.3f   B %.3f (deg)\n",
                  scalar(a, "inclination_deg"), scalar(b, "inclination_deg"));
    os << line;
    return os.str();
}

} // namespace io
} // namespace magcal
