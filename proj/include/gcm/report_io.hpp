#pragma once

// JSON and CSV renderings of results. Statistics and p-values are rounded
// to 9 significant digits so that reports are stable byte-for-byte.

#include <cstdio>
#include <ostream>
#include <string>

#include <json.hpp>

#include "gcm/multi.hpp"
#include "gcm/regression.hpp"
#include "gcm/simlab.hpp"
#include "gcm/univariate.hpp"

namespace gcm {

using Json = nlohmann::ordered_json;

/// x rounded to 9 significant digits.
inline double sig9(double x) {
    if (!std::isfinite(x)) return x;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return std::stod(buf);
}

inline std::string format_sig9(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

inline Json matrix_json(const Matrix& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(sig9(m(i, j)));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Json to_json(const GcmResult& r, std::uint64_t seed) {
    Json j;
    j["statistic"] = sig9(r.statistic_T);
    j["tau_N"] = sig9(r.tau_N);
    j["tau_D"] = sig9(r.tau_D);
    j["p_value"] = sig9(r.p_value);
    j["reject"] = r.reject;
    j["n"] = r.n;
    j["backend"] = r.backend_tags.first == r.backend_tags.second
                       ? r.backend_tags.first
                       : r.backend_tags.first + "," + r.backend_tags.second;
    j["seed"] = seed;
    return j;
}

inline Json to_json(const MultiGcmResult& r, const std::string& backend, std::uint64_t seed) {
    Json j;
    j["statistic"] = sig9(r.s_n);
    j["quantile"] = sig9(r.g_quantile);
    j["p_value"] = sig9(r.p_value);
    j["reject"] = r.reject;
    j["n"] = r.n;
    j["draws"] = r.draws;
    j["t_matrix"] = matrix_json(r.t_matrix);
    j["sigma_hat"] = matrix_json(r.sigma_hat);
    j["backend"] = backend;
    j["seed"] = seed;
    return j;
}

inline Json to_json(const CondCovEstimate& e, std::uint64_t seed) {
    Json j;
    j["rho_hat"] = sig9(e.rho_hat);
    j["ci_lower"] = sig9(e.ci_lower);
    j["ci_upper"] = sig9(e.ci_upper);
    j["sigma_hat"] = sig9(e.sigma_hat);
    j["split"] = e.split_used;
    j["n_eval"] = e.n_eval;
    j["alpha"] = e.alpha;
    j["seed"] = seed;
    return j;
}

inline Json to_json(const KernelDiag& d, const std::string& kernel) {
    Json j;
    j["kernel"] = kernel;
    j["n"] = d.eigenvalues.size();
    j["lambda_hat"] = sig9(d.lambda_hat);
    j["objective_at_min"] = sig9(d.objective_at_min);
    Json ev = Json::array();
    for (double v : d.eigenvalues) ev.push_back(sig9(v));
    j["eigenvalues"] = std::move(ev);
    return j;
}

inline Json to_json(const RejectionReport& r) {
    Json j;
    j["model"] = r.model.label();
    j["test"] = r.test_tag;
    j["reps"] = r.reps;
    j["alpha"] = r.alpha;
    j["seed"] = r.seed;
    j["band"] = sig9(r.band);
    Json rows = Json::array();
    for (std::size_t c = 0; c < r.n_values.size(); ++c) {
        Json row;
        row["n"] = r.n_values[c];
        row["rate"] = sig9(r.rates[c]);
        row["stderr"] = sig9(r.mc_stderr[c]);
        row["errors"] = r.errors[c];
        row["pass"] = static_cast<bool>(r.band_pass[c]);
        rows.push_back(std::move(row));
    }
    j["results"] = std::move(rows);
    return j;
}

inline constexpr const char* kReportCsvHeader = "model,test,n,reps,rate,stderr,band,pass";

/// Rows of `model,test,n,reps,rate,stderr,band,pass`, no header.
inline void write_report_csv_rows(std::ostream& out, const RejectionReport& r) {
    for (std::size_t c = 0; c < r.n_values.size(); ++c) {
        out << r.model.label() << ",\"" << r.test_tag << "\"," << r.n_values[c] << ',' << r.reps << ','
            << format_sig9(r.rates[c]) << ',' << format_sig9(r.mc_stderr[c]) << ',' << format_sig9(r.band) << ','
            << (r.band_pass[c] ? "true" : "false") << '\n';
    }
}

inline void write_report_csv(std::ostream& out, const RejectionReport& r) {
    out << kReportCsvHeader << '\n';
    write_report_csv_rows(out, r);
}

}  // namespace gcm
