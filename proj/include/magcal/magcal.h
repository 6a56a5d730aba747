/*
 * magcal - magnetometer calibration and alignment to inertial sensors.
 *
 * C interface of the shared library. All entry points are thread-safe as
 * long as each handle is used from one thread at a time. Functions return
 * MAGCAL_OK on success; on failure magcal_last_error() holds a thread-local
 * description of what went wrong.
 */
#ifndef MAGCAL_H
#define MAGCAL_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define MAGCAL_API __declspec(dllexport)
#else
#define MAGCAL_API __attribute__((visibility("default")))
#endif

typedef enum magcal_status {
    MAGCAL_OK = 0,
    MAGCAL_ERR_INVALID_ARG = 1,
    MAGCAL_ERR_PARSE = 2,
    MAGCAL_ERR_IO = 3,
    MAGCAL_ERR_NUMERIC = 4,
    MAGCAL_ERR_UNOBSERVABLE = 5,
    MAGCAL_ERR_STATE = 6,
    MAGCAL_ERR_INTERNAL = 7
} magcal_status;

MAGCAL_API const char* magcal_version(void);
MAGCAL_API const char* magcal_status_name(magcal_status status);

/* Thread-local message for the most recent failure in this thread. */
MAGCAL_API const char* magcal_last_error(void);

/* Free a string returned through a char** out parameter. */
MAGCAL_API void magcal_free(char* p);

/*
 * File-driven entry points. config_path names a JSON run configuration (see
 * README for the schema). Outputs are written into out_dir; the optional out
 * parameters receive malloc'd strings owned by the caller.
 */

/* Run the configured calibration mode; writes report.txt/report.json and the
 * plot CSV series into out_dir (created if needed). */
MAGCAL_API magcal_status magcal_run(const char* config_path, const char* out_dir,
                                    char** report_json_out);

/* Generate the configured synthetic stream and write it as CSV. */
MAGCAL_API magcal_status magcal_simulate(const char* config_path, const char* out_csv_path);

/* Observability scan only; writes obsv.txt and eig_ratio.csv into out_dir. */
MAGCAL_API magcal_status magcal_obsv(const char* config_path, const char* out_dir,
                                     char** report_text_out);

/* Side-by-side comparison of two report.json files. */
MAGCAL_API magcal_status magcal_compare_reports(const char* report_a_path, const char* report_b_path,
                                                char** text_out);

/*
 * Streaming estimator handle for embedding. config_json carries the same
 * "noise"/"ekf" sections as the file configuration ("{}" gives the published
 * defaults). The first pushed sample initialises the filter; every further
 * sample runs propagate + magnetometer update + gated accelerometer update.
 */
typedef struct magcal_filter magcal_filter;

MAGCAL_API magcal_status magcal_filter_new(const char* config_json, magcal_filter** out);
MAGCAL_API void magcal_filter_free(magcal_filter* f);
MAGCAL_API magcal_status magcal_filter_push(magcal_filter* f, double t, const double gyro[3],
                                            const double accel[3], const double mag[3]);
/* Current state snapshot as JSON (attitude, bias, S, h, m_i, g_i, t). */
MAGCAL_API magcal_status magcal_filter_state_json(const magcal_filter* f, char** json_out);
/* Finalise: re-scale, decompose and report the calibration as JSON. */
MAGCAL_API magcal_status magcal_filter_finish(magcal_filter* f, char** result_json_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MAGCAL_H */
