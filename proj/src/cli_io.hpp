#ifndef MAGCAL_CLI_IO_HPP
#define MAGCAL_CLI_IO_HPP

#include "batch_oracles.hpp"
#include "ekf.hpp"
#include "observability.hpp"
#include "sensor_sim.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace magcal {
namespace io {

/// Where a dataset comes from and how to read it. Units must be declared,
/// never inferred; gyro accepts "rad_per_s" or "deg_per_s".
struct DatasetSpec {
    std::string path;
    double rate_hz = 100.0;
    std::string gyro_unit;
    std::string accel_unit = "m_per_s2";
    std::string mag_unit = "raw";
    std::map<std::string, std::string> columns; // canonical name -> file header name
    std::optional<std::pair<double, double>> stationary_window;
    std::optional<std::pair<double, double>> estimation_window;
};

struct IngestStats {
    std::size_t rows = 0;
    std::size_t gaps = 0;     // spacings beyond 1.5x the nominal step
    double median_dt = 0.0;
};

/// Read a sample stream; timestamps must be monotone, every field finite.
/// Values are normalised to rad/s, m/s^2 and raw magnetometer units.
std::vector<SensorSample> ingest_csv(const DatasetSpec& spec, IngestStats* stats = nullptr);

/// Write the canonical CSV schema: t,gx,gy,gz,ax,ay,az,mx,my,mz with
/// round-trip-exact doubles. Simulator output written this way is a drop-in
/// dataset for ingest_csv.
void write_stream_csv(const std::string& path, std::span<const SensorSample> samples);

/// Arithmetic mean of the gyro channel over [window.first, window.second],
/// reported in deg/s. Throws when motion is detected inside the window
/// (per-axis standard deviation above motion_threshold, rad/s).
Vec3 still_average_bias(std::span<const SensorSample> samples,
                        std::pair<double, double> window,
                        double motion_threshold = 0.02);

struct AttitudeSeries {
    std::vector<double> t;
    std::vector<Dcm> c; // body-to-inertial
};

/// Per-sample Euler angles (deg) of C_a' * C_b. Series must share timestamps.
std::vector<Vec3> compare_attitude(const AttitudeSeries& a, const AttitudeSeries& b);

enum class Mode { ekf, ekf_noaccel, ekf_twopass, batch_thm21, batch_thm22 };

const char* mode_name(Mode m);
Mode parse_mode(const std::string& name);

/// Synthetic-data source description (alternative to a dataset file).
struct SimSpec {
    sim::SimTruth truth;
    sim::TrajectoryProfile profile;
    std::vector<std::pair<double, double>> disturbance_windows;
    double disturbance_amplitude = 0.0;
    double disturbance_freq_hz = 1.5;
};

/// One artifact that fully determines a run.
struct RunConfig {
    Mode mode = Mode::ekf;
    std::uint64_t seed = 1;
    std::optional<DatasetSpec> dataset;
    std::optional<SimSpec> simulation;
    ekf::EkfConfig ekf;
    bool ekf_window_explicit = false; // ekf.start/stop came from the config file
    double obsv_tol = 1e-4;
    std::string config_hash;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

/// Everything a run produces, before any file is written.
struct RunReport {
    Mode mode = Mode::ekf;
    std::uint64_t seed = 1;
    std::string config_hash;
    ekf::CalibResult calib;                      // final result (pass 2 in two-pass mode)
    std::optional<ekf::CalibResult> pass1;
    obsv::ObsvReport observability;
    std::optional<Vec3> still_bias_deg;
    std::optional<batch::IntrinsicParams> batch_intrinsic;  // cross-check columns
    std::optional<batch::AlignmentParams> batch_alignment;
    std::optional<sim::SimTruth> truth;          // present for simulated sources
    ekf::RunDiagnostics diagnostics;             // empty for batch modes
    AttitudeSeries gyro_attitude;                // de-biased gyro integration, when a bias source exists
    IngestStats ingest;
};

/// Execute the configured mode end to end. The returned report is
/// deterministic given (dataset/simulation, config, seed).
RunReport run_calibration(const RunConfig& config);

/// Render the report to the paper-style plain-text tables.
std::string report_text(const RunReport& report);

/// Machine-readable form of the report (JSON).
std::string report_json(const RunReport& report);

/// Write report.txt, report.json and the plot CSV series into out_dir.
void write_report_files(const RunReport& report, const std::string& out_dir);

/// Side-by-side comparison of two report.json files.
std::string compare_reports_text(const std::string& report_json_a, const std::string& report_json_b);

/// Load helpers shared by the CLI entry points.
std::vector<SensorSample> load_samples(const RunConfig& config, IngestStats* stats = nullptr);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);
std::string fnv1a_hex(const std::string& data);

} // namespace io
} // namespace magcal

#endif
