// magcal command-line front end. Talks to the shared library exclusively
// through the C interface.

#include <magcal/magcal.h>

#include <CLI11.hpp>

#include <cstdio>
#include <string>

namespace {

int exit_code_for(magcal_status status) {
    switch (status) {
        case MAGCAL_OK: return 0;
        case MAGCAL_ERR_INVALID_ARG:
        case MAGCAL_ERR_PARSE:
        case MAGCAL_ERR_IO: return 2;
        case MAGCAL_ERR_UNOBSERVABLE: return 3;
        case MAGCAL_ERR_NUMERIC: return 4;
        default: return 1;
    }
}

int fail(magcal_status status) {
    std::fprintf(stderr, "magcal: %s: %s\n", magcal_status_name(status), magcal_last_error());
    return exit_code_for(status);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"magcal - magnetometer calibration and alignment to inertial sensors"};
    app.set_version_flag("--version", std::string(magcal_version()));
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "magcal_out";
    std::string out_csv = "stream.csv";
    std::string report_a, report_b;
    bool quiet = false;

    auto* run = app.add_subcommand("run", "Run the calibration mode selected in the config");
    run->add_option("config", config_path, "JSON run configuration")->required();
    run->add_option("-o,--out", out_dir, "Output directory (report + plot CSVs)");
    run->add_flag("-q,--quiet", quiet, "Suppress the report on stdout");

    auto* simulate = app.add_subcommand("simulate", "Write the configured synthetic stream as CSV");
    simulate->add_option("config", config_path, "JSON run configuration with a simulation section")
        ->required();
    simulate->add_option("-o,--out", out_csv, "Output CSV path");

    auto* obsv = app.add_subcommand("obsv", "Observability diagnostics for the configured data");
    obsv->add_option("config", config_path, "JSON run configuration")->required();
    obsv->add_option("-o,--out", out_dir, "Output directory (obsv.txt + eig_ratio.csv)");

    auto* report = app.add_subcommand("report", "Report utilities");
    report->add_option("--compare", report_a, "First report.json")->expected(1);
    report->add_option("against", report_b, "Second report.json");

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) {
        char* report_json = nullptr;
        const magcal_status st = magcal_run(config_path.c_str(), out_dir.c_str(), &report_json);
        if (st != MAGCAL_OK) return fail(st);
        magcal_free(report_json);
        if (!quiet) {
            std::string path = out_dir + "/report.txt";
            if (FILE* f = std::fopen(path.c_str(), "rb")) {
                char buf[4096];
                size_t n;
                while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) std::fwrite(buf, 1, n, stdout);
                std::fclose(f);
            }
        }
        std::printf("report written to %s\n", out_dir.c_str());
        return 0;
    }
    if (simulate->parsed()) {
        const magcal_status st = magcal_simulate(config_path.c_str(), out_csv.c_str());
        if (st != MAGCAL_OK) return fail(st);
        std::printf("stream written to %s\n", out_csv.c_str());
        return 0;
    }
    if (obsv->parsed()) {
        char* text = nullptr;
        const magcal_status st = magcal_obsv(config_path.c_str(), out_dir.c_str(), &text);
        if (st != MAGCAL_OK) return fail(st);
        std::fputs(text, stdout);
        magcal_free(text);
        return 0;
    }
    if (report->parsed()) {
        if (report_a.empty() || report_b.empty()) {
            std::fprintf(stderr, "magcal report: need --compare <A.json> <B.json>\n");
            return 2;
        }
        char* text = nullptr;
        const magcal_status st = magcal_compare_reports(report_a.c_str(), report_b.c_str(), &text);
        if (st != MAGCAL_OK) return fail(st);
        std::fputs(text, stdout);
        magcal_free(text);
        return 0;
    }
    return 2;
}
