#include "magcal/magcal.h"

#include "cli_io.hpp"
#include "ekf.hpp"
#include "error.hpp"

#include <json.hpp>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>

namespace {

using nlohmann::json;

thread_local std::string g_last_error;

magcal_status status_from_code(magcal::ErrorCode code) {
    switch (code) {
        case magcal::ErrorCode::invalid_argument: return MAGCAL_ERR_INVALID_ARG;
        case magcal::ErrorCode::parse: return MAGCAL_ERR_PARSE;
        case magcal::ErrorCode::io: return MAGCAL_ERR_IO;
        case magcal::ErrorCode::numeric: return MAGCAL_ERR_NUMERIC;
        case magcal::ErrorCode::unobservable: return MAGCAL_ERR_UNOBSERVABLE;
        case magcal::ErrorCode::state: return MAGCAL_ERR_STATE;
        case magcal::ErrorCode::internal: return MAGCAL_ERR_INTERNAL;
    }
    return MAGCAL_ERR_INTERNAL;
}

template <typename Fn>
magcal_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return MAGCAL_OK;
    } catch (const magcal::Error& e) {
        g_last_error = e.what();
        return status_from_code(e.code());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MAGCAL_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return MAGCAL_ERR_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

json vec3_json(const magcal::Vec3& v) { return json::array({v(0), v(1), v(2)}); }

json mat3_json(const magcal::Mat3& m) {
    json rows = json::array();
    for (int i = 0; i < 3; ++i) rows.push_back({m(i, 0), m(i, 1), m(i, 2)});
    return rows;
}

} // namespace

struct magcal_filter {
    magcal::ekf::EkfConfig config;
    magcal::ekf::CalibState state;
    magcal::ekf::RunDiagnostics history;
    bool started = false;
    double t_prev = 0.0;
};

extern "C" {

const char* magcal_version(void) { return "1.0.0"; }

const char* magcal_status_name(magcal_status status) {
    switch (status) {
        case MAGCAL_OK: return "ok";
        case MAGCAL_ERR_INVALID_ARG: return "invalid argument";
        case MAGCAL_ERR_PARSE: return "parse error";
        case MAGCAL_ERR_IO: return "io error";
        case MAGCAL_ERR_NUMERIC: return "numeric error";
        case MAGCAL_ERR_UNOBSERVABLE: return "unobservable";
        case MAGCAL_ERR_STATE: return "invalid state";
        case MAGCAL_ERR_INTERNAL: return "internal error";
    }
    return "unknown";
}

const char* magcal_last_error(void) { return g_last_error.c_str(); }

void magcal_free(char* p) { std::free(p); }

magcal_status magcal_run(const char* config_path, const char* out_dir, char** report_json_out) {
    return guarded([&] {
        if (!config_path || !out_dir) {
            magcal::throw_error(magcal::ErrorCode::invalid_argument, "magcal_run: null argument");
        }
        const magcal::io::RunConfig cfg = magcal::io::load_config(config_path);
        const magcal::io::RunReport report = magcal::io::run_calibration(cfg);
        magcal::io::write_report_files(report, out_dir);
        if (report_json_out) *report_json_out = dup_string(magcal::io::report_json(report));
    });
}

magcal_status magcal_simulate(const char* config_path, const char* out_csv_path) {
    return guarded([&] {
        if (!config_path || !out_csv_path) {
            magcal::throw_error(magcal::ErrorCode::invalid_argument, "magcal_simulate: null argument");
        }
        const magcal::io::RunConfig cfg = magcal::io::load_config(config_path);
        if (!cfg.simulation) {
            magcal::throw_error(magcal::ErrorCode::invalid_argument,
                                "magcal_simulate: config has no simulation section");
        }
        const auto samples = magcal::io::load_samples(cfg);
        magcal::io::write_stream_csv(out_csv_path, samples);
    });
}

magcal_status magcal_obsv(const char* config_path, const char* out_dir, char** report_text_out) {
    return guarded([&] {
        if (!config_path || !out_dir) {
            magcal::throw_error(magcal::ErrorCode::invalid_argument, "magcal_obsv: null argument");
        }
        const magcal::io::RunConfig cfg = magcal::io::load_config(config_path);
        const auto samples = magcal::io::load_samples(cfg);

        // Intrinsic parameters for the y* rows: batch fit when the data allows
        // it, identity otherwise. Bias for the attitude rows: still averaging
        // when annotated, the batch rate solve as a fallback, zero otherwise.
        magcal::obsv::ScanOptions scan;
        magcal::Vec3 bias = magcal::Vec3::Zero();
        std::vector<magcal::Vec3> mags(samples.size());
        for (std::size_t k = 0; k < samples.size(); ++k) mags[k] = samples[k].mag;
        try {
            const auto intrinsic = magcal::batch::fit_intrinsic(mags);
            scan.intrinsic = std::make_pair(intrinsic.r, intrinsic.h);
        } catch (const magcal::Error&) {
            scan.intrinsic = std::make_pair(magcal::Mat3::Identity(), magcal::Vec3::Zero());
        }
        if (cfg.dataset && cfg.dataset->stationary_window) {
            bias = magcal::deg2rad(
                magcal::io::still_average_bias(samples, *cfg.dataset->stationary_window));
        } else if (cfg.simulation && cfg.simulation->profile.still_seconds > 0.5) {
            bias = magcal::deg2rad(magcal::io::still_average_bias(
                samples, {0.0, cfg.simulation->profile.still_seconds - 0.2}));
        }
        scan.gyro_bias = bias;
        const auto gramians = magcal::obsv::scan_stream(samples, scan);
        const auto rep = magcal::obsv::report(gramians, cfg.obsv_tol);
        const std::string text = magcal::obsv::report_text(rep);

        std::filesystem::create_directories(out_dir);
        magcal::io::write_file((std::filesystem::path(out_dir) / "obsv.txt").string(), text);
        std::string csv = "t,log10_ratio\n";
        char buf[80];
        for (std::size_t k = 0; k < rep.ratio_t.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", rep.ratio_t[k], rep.log10_ratio[k]);
            csv += buf;
        }
        magcal::io::write_file((std::filesystem::path(out_dir) / "eig_ratio.csv").string(), csv);
        if (report_text_out) *report_text_out = dup_string(text);
    });
}

magcal_status magcal_compare_reports(const char* report_a_path, const char* report_b_path, char** text_out) {
    return guarded([&] {
        if (!report_a_path || !report_b_path || !text_out) {
            magcal::throw_error(magcal::ErrorCode::invalid_argument, "magcal_compare_reports: null argument");
        }
        const std::string text = magcal::io::compare_reports_text(
            magcal::io::read_file(report_a_path), magcal::io::read_file(report_b_path));
        *text_out = dup_string(text);
    });
}

magcal_status magcal_filter_new(const char* config_json, magcal_filter** out) {
    return guarded([&] {
        if (!out) magcal::throw_error(magcal::ErrorCode::invalid_argument, "magcal_filter_new: null out");
        std::string text = config_json ? config_json : "{}";
        // The filter consumes only the noise/ekf sections; give parse_config a
        // source section so a bare tuning object validates.
        json j = json::parse(text, nullptr, true);
        if (!j.contains("dataset") && !j.contains("simulation")) {
            j["simulation"] = {{"duration_s", 1.0}};
        }
        const magcal::io::RunConfig cfg = magcal::io::parse_config(j.dump());
        auto* f = new magcal_filter;
        f->config = cfg.ekf;
        f->config.t_start = 0.0;
        f->config.t_stop = 1e300;
        *out = f;
    });
}

void magcal_filter_free(magcal_filter* f) { delete f; }

magcal_status magcal_filter_push(magcal_filter* f, double t, const double gyro[3],
                                 const double accel[3], const double mag[3]) {
    return guarded([&] {
        if (!f || !gyro || !accel || !mag) {
            magcal::throw_error(magcal::ErrorCode::invalid_argument, "magcal_filter_push: null argument");
        }
        const magcal::Vec3 g(gyro[0], gyro[1], gyro[2]);
        const magcal::Vec3 a(accel[0], accel[1], accel[2]);
        const magcal::Vec3 m(mag[0], mag[1], mag[2]);
        if (!f->started) {
            f->state = magcal::ekf::init(f->config, m, a, t);
            f->t_prev = t;
            f->started = true;
            return;
        }
        const double dt = t - f->t_prev;
        if (!(dt > 0.0)) {
            magcal::throw_error(magcal::ErrorCode::invalid_argument,
                                "magcal_filter_push: non-increasing timestamp");
        }
        f->t_prev = t;
        magcal::ekf::propagate(f->state, g, dt, f->config);
        const auto mu = magcal::ekf::update_mag(f->state, m, f->config);
        const magcal::Vec3 nis = mu.s_inn.ldlt().solve(mu.innovation);
        f->history.anis_sum += mu.innovation.dot(nis);
        f->history.anis_count += 1;
        if (f->config.use_accel) {
            f->history.accel_attempted += 1;
            if (magcal::ekf::update_accel(f->state, a, f->config)) f->history.accel_used += 1;
        }
    });
}

magcal_status magcal_filter_state_json(const magcal_filter* f, char** json_out) {
    return guarded([&] {
        if (!f || !json_out) {
            magcal::throw_error(magcal::ErrorCode::invalid_argument, "magcal_filter_state_json: null argument");
        }
        if (!f->started) {
            magcal::throw_error(magcal::ErrorCode::state, "magcal_filter_state_json: no sample pushed yet");
        }
        json j;
        j["t"] = f->state.t;
        j["c_b_i"] = mat3_json(f->state.c_b_i);
        j["eps_deg"] = vec3_json(magcal::rad2deg(f->state.eps));
        j["s"] = mat3_json(f->state.S);
        j["h"] = vec3_json(f->state.h);
        j["m_i"] = vec3_json(f->state.m_i);
        j["g_i"] = vec3_json(f->state.g_i);
        *json_out = dup_string(j.dump(2));
    });
}

magcal_status magcal_filter_finish(magcal_filter* f, char** result_json_out) {
    return guarded([&] {
        if (!f || !result_json_out) {
            magcal::throw_error(magcal::ErrorCode::invalid_argument, "magcal_filter_finish: null argument");
        }
        const magcal::ekf::CalibResult r = magcal::ekf::finalize(f->state, f->history);
        json j;
        j["s_rs"] = mat3_json(r.s_rs);
        j["m_rs"] = vec3_json(r.m_rs);
        j["r_upper"] = mat3_json(r.r);
        j["h"] = vec3_json(r.h);
        j["c_b_m_euler_deg"] = vec3_json(r.c_b_m_euler_deg);
        j["eps_deg"] = vec3_json(r.eps_deg);
        j["g_i"] = vec3_json(r.g_i);
        j["inclination_deg"] = r.inclination_deg;
        j["anis_mag"] = r.anis_mag;
        if (r.accel_accept_ratio >= 0.0) j["accel_accept_ratio"] = r.accel_accept_ratio;
        else j["accel_accept_ratio"] = nullptr;
        *result_json_out = dup_string(j.dump(2));
    });
}

} // extern "C"
