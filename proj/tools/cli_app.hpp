#pragma once

// Command-line front end. Kept in a header so the tests can drive it
// in-process; gcm_cli.cpp is a thin main().
//
// Exit codes: 0 success, 1 input error, 2 statistical degeneracy,
// 3 internal error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gcm/gcm.hpp"
#include "gcm/report_io.hpp"

namespace gcm::cli {

enum ExitCode : int { kOk = 0, kInputError = 1, kDegenerate = 2, kInternalError = 3 };

struct BackendFlags {
    std::string backend = "krr";
    std::string kernel = "gaussian";
    double bandwidth = 1.0;
    std::optional<double> lambda;
    std::size_t k = 0;

    void attach(CLI::App& cmd) {
        cmd.add_option("--backend", backend, "Regression backend")
            ->check(CLI::IsMember({"linear", "krr", "knn"}))
            ->capture_default_str();
        cmd.add_option("--kernel", kernel, "KRR kernel")
            ->check(CLI::IsMember({"gaussian", "sobolev"}))
            ->capture_default_str();
        cmd.add_option("--bandwidth", bandwidth, "Gaussian kernel bandwidth")->capture_default_str();
        cmd.add_option("--lambda", lambda, "Fixed KRR penalty (default: spectral rule)");
        cmd.add_option("--k", k, "k-NN neighbours (default: round(sqrt(n)))");
    }

    Backend resolve() const {
        if (backend == "linear") return Backend::linear();
        if (backend == "knn") return Backend::knn(k);
        KernelSpec spec;
        spec.family = kernel == "sobolev" ? KernelFamily::sobolev_first_order : KernelFamily::gaussian;
        spec.bandwidth = bandwidth;
        spec.validate();
        return Backend::krr(spec, lambda);
    }
};

struct Output {
    std::string path;
    std::string format = "json";

    void attach(CLI::App& cmd, bool allow_csv) {
        cmd.add_option("--out", path, "Output file (default: stdout)");
        if (allow_csv) {
            cmd.add_option("--format", format, "Output format")
                ->check(CLI::IsMember({"json", "csv"}))
                ->capture_default_str();
        }
    }

    void write(std::ostream& out, const std::string& text) const {
        if (path.empty()) {
            out << text;
            return;
        }
        std::ofstream file(path);
        if (!file) throw InvalidInput("cannot write '" + path + "'");
        file << text;
    }
};

/// Seed from the flag, or drawn from entropy and announced on stderr.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& seed, std::ostream& err) {
    if (seed) return *seed;
    std::random_device rd;
    const std::uint64_t drawn = (std::uint64_t{rd()} << 32) | rd();
    err << "seed: " << drawn << '\n';
    return drawn;
}

inline bool parse_switch(const std::string& s) {
    if (s == "on" || s == "true" || s == "1" || s == "yes") return true;
    if (s == "off" || s == "false" || s == "0" || s == "no") return false;
    throw InvalidInput("expected on/off, got '" + s + "'");
}

inline std::vector<ColumnRecipe> parse_recipes(const std::string& list, char block) {
    std::vector<ColumnRecipe> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(ColumnRecipe::parse(item, block));
    }
    return out;
}

/// Converts a JSON config object into flags placed before the user's own
/// flags (the last occurrence of an option wins).
inline std::vector<std::string> config_flags(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open config '" + path + "'");
    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& ex) {
        throw InvalidInput("config '" + path + "': " + ex.what());
    }
    if (!cfg.is_object()) throw InvalidInput("config '" + path + "' must hold a JSON object");
    std::vector<std::string> flags;
    for (const auto& [key, value] : cfg.items()) {
        const std::string flag = "--" + key;
        if (value.is_boolean()) {
            if (value.get<bool>()) flags.push_back(flag);
        } else if (value.is_array()) {
            std::string joined;
            for (const auto& v : value) {
                if (!joined.empty()) joined += ',';
                joined += v.is_string() ? v.get<std::string>() : v.dump();
            }
            flags.insert(flags.end(), {flag, joined});
        } else {
            flags.insert(flags.end(), {flag, value.is_string() ? value.get<std::string>() : value.dump()});
        }
    }
    return flags;
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Conditional-independence testing with the generalised covariance measure"};
    app.name("gcm_cli");
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    // Splice config-file flags in right after the subcommand name.
    for (std::size_t i = 0; i < args.size(); ++i) {
        std::string path;
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
        } else {
            continue;
        }
        try {
            const auto flags = config_flags(path);
            args.insert(args.begin() + (args.empty() ? 0 : 1), flags.begin(), flags.end());
        } catch (const std::exception& ex) {
            err << "error: " << ex.what() << '\n';
            return kInputError;
        }
        break;
    }

    std::string data_path;
    double alpha = 0.05;
    std::optional<std::uint64_t> seed;
    BackendFlags backend;
    Output output;

    // test
    std::string method = "gcm";
    auto* test = app.add_subcommand("test", "Univariate GCM test on a CSV file");
    test->add_option("--data", data_path, "CSV with x*, y*, z* columns")->required();
    test->add_option("--alpha", alpha)->capture_default_str();
    test->add_option("--seed", seed);
    test->add_option("--method", method, "gcm or the naive residual-correlation baseline")
        ->check(CLI::IsMember({"gcm", "naive"}))
        ->capture_default_str();
    backend.attach(*test);
    output.attach(*test, false);

    // test-multi
    std::size_t draws = kDefaultDraws;
    std::string lift_name = "raw", lift_x, lift_y;
    auto* multi = app.add_subcommand("test-multi", "Max-statistic GCM test for multivariate X and Y");
    multi->add_option("--data", data_path)->required();
    multi->add_option("--alpha", alpha)->capture_default_str();
    multi->add_option("--seed", seed);
    multi->add_option("--draws", draws, "Monte-Carlo draws for the quantile")->capture_default_str();
    multi->add_option("--lift", lift_name, "Built-in lift for both blocks")
        ->check(CLI::IsMember({"raw", "square", "abs"}))
        ->capture_default_str();
    multi->add_option("--lift-x", lift_x, "Column recipes for X, e.g. x1,x1^2,abs(x2)");
    multi->add_option("--lift-y", lift_y, "Column recipes for Y");
    backend.attach(*multi);
    output.attach(*multi, false);

    // estimate-cov
    bool split = false;
    auto* est = app.add_subcommand("estimate-cov", "Estimate and interval for E cov(X, Y | Z)");
    est->add_option("--data", data_path)->required();
    est->add_option("--alpha", alpha)->capture_default_str();
    est->add_option("--seed", seed);
    est->add_flag("--split", split, "Fit the regressions on a random half, evaluate on the other");
    backend.attach(*est);
    output.attach(*est, false);

    // simulate
    std::string model_name, power = "off", test_name = "gcm";
    std::vector<std::size_t> n_grid{50, 100, 200, 300, 400};
    std::size_t reps = 100;
    std::optional<double> a_param;
    auto* sim = app.add_subcommand("simulate", "Rejection rates on the simulation models");
    sim->add_option("--model", model_name, "a, b, c, d, e, example1 or nfl")->required();
    sim->add_option("--power", power, "on/off: add the +0.2X term to Y (bare flag means on)")
        ->expected(0, 1)
        ->default_str("on")
        ->option_text("TEXT [off]");
    sim->add_option("--n-grid", n_grid, "Sample sizes")->delimiter(',')->capture_default_str();
    sim->add_option("--reps", reps)->capture_default_str();
    sim->add_option("--a", a_param, "Frequency a for models a, b, nfl");
    sim->add_option("--alpha", alpha)->capture_default_str();
    sim->add_option("--seed", seed);
    sim->add_option("--test", test_name)->check(CLI::IsMember({"gcm", "naive"}))->capture_default_str();
    sim->add_option("--draws", draws)->capture_default_str();
    sim->add_option("--lift", lift_name)->check(CLI::IsMember({"raw", "square", "abs"}))->capture_default_str();
    backend.attach(*sim);
    output.format = "csv";
    output.attach(*sim, true);

    // nfl-demo
    std::vector<std::size_t> nfl_n{100};
    std::vector<double> a_grid{2, 6, 12, 18};
    auto* nfl = app.add_subcommand("nfl-demo", "Null rejection rates on the f_a family");
    nfl->add_option("--n", nfl_n, "Sample sizes")->delimiter(',')->capture_default_str();
    nfl->add_option("--a-grid", a_grid, "Frequencies a")->delimiter(',')->capture_default_str();
    nfl->add_option("--reps", reps)->capture_default_str();
    nfl->add_option("--alpha", alpha)->capture_default_str();
    nfl->add_option("--seed", seed);
    backend.attach(*nfl);
    output.attach(*nfl, true);

    // krr-diag
    auto* diag = app.add_subcommand("krr-diag", "Gram spectrum and the selected KRR penalty for the Z block");
    diag->add_option("--data", data_path)->required();
    std::size_t top = 0;
    diag->add_option("--top", top, "Report only the largest eigenvalues (0 = all)");
    backend.attach(*diag);
    output.attach(*diag, false);

    // generate
    std::size_t gen_n = 200;
    auto* gen = app.add_subcommand("generate", "Write a dataset drawn from a simulation model as CSV");
    gen->add_option("--model", model_name)->required();
    gen->add_option("--n", gen_n)->capture_default_str();
    gen->add_option("--power", power, "on/off (bare flag means on)")
        ->expected(0, 1)
        ->default_str("on")
        ->option_text("TEXT [off]");
    gen->add_option("--a", a_param);
    gen->add_option("--seed", seed);
    output.attach(*gen, false);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << '\n';
        return kInputError;
    }

    try {
        detail::require(alpha > 0.0 && alpha < 1.0, "--alpha must lie in (0, 1)");

        if (test->parsed()) {
            const std::uint64_t s = resolve_seed(seed, err);
            const DataSet data = read_csv_file(data_path);
            const Backend b = backend.resolve();
            detail::require(data.dx() == 1 && data.dy() == 1,
                            "test needs one x and one y column; use test-multi for wider blocks");
            const GcmResult r = method == "gcm" ? gcm_test(data, b, b, alpha) : naive_resid_corr_test(data, b, b, alpha);
            output.write(out, dump(to_json(r, s)));
        } else if (multi->parsed()) {
            const std::uint64_t s = resolve_seed(seed, err);
            const DataSet data = read_csv_file(data_path);
            const Backend b = backend.resolve();
            FeatureLift lift = FeatureLift::named(lift_name);
            if (!lift_x.empty()) lift.map_x.recipes = parse_recipes(lift_x, 'x');
            if (!lift_y.empty()) lift.map_y.recipes = parse_recipes(lift_y, 'y');
            const MultiGcmResult r = multi_gcm_test(data, b, b, alpha, draws, s, lift);
            output.write(out, dump(to_json(r, b.tag(), s)));
        } else if (est->parsed()) {
            const std::uint64_t s = resolve_seed(seed, err);
            const DataSet data = read_csv_file(data_path);
            const Backend b = backend.resolve();
            output.write(out, dump(to_json(expected_cond_cov_ci(data, b, b, alpha, split, s), s)));
        } else if (sim->parsed()) {
            const std::uint64_t s = resolve_seed(seed, err);
            ModelSpec spec;
            spec.name = parse_model(model_name);
            spec.power_variant = parse_switch(power.empty() ? "on" : power);
            spec.a_param = a_param;
            if (spec.name == ModelName::nfl && !spec.a_param) spec.a_param = 2.0;
            TestConfig config;
            config.kind = test_name == "gcm" ? TestKind::gcm : TestKind::naive;
            config.backend_x = config.backend_y = backend.resolve();
            config.draws = draws;
            if (lift_name != "raw") config.lift = FeatureLift::named(lift_name);
            err << "simulate: model " << spec.label() << ", " << reps << " reps per n\n";
            const RejectionReport report = rejection_rate(spec, config, n_grid, reps, alpha, s);
            for (const auto& w : report.warnings) err << "warning: " << w << '\n';
            std::ostringstream text;
            if (output.format == "csv") write_report_csv(text, report);
            else text << dump(to_json(report));
            output.write(out, text.str());
        } else if (nfl->parsed()) {
            const std::uint64_t s = resolve_seed(seed, err);
            TestConfig config;
            config.backend_x = config.backend_y = backend.resolve();
            Json rows = Json::array();
            std::ostringstream csv;
            csv << "n,a,reps,rate,stderr,band,pass,log_rkhs_norm_sq\n";
            for (std::size_t ai = 0; ai < a_grid.size(); ++ai) {
                ModelSpec spec;
                spec.name = ModelName::nfl;
                spec.a_param = a_grid[ai];
                err << "nfl-demo: a = " << a_grid[ai] << '\n';
                // Each a gets its own seed so grids can be extended without
                // changing earlier rows.
                const RejectionReport report =
                    rejection_rate(spec, config, nfl_n, reps, alpha, Rng(s, Stream::user, ai)());
                for (const auto& w : report.warnings) err << "warning: " << w << '\n';
                const double log_norm = rkhs_norm_sq(a_grid[ai]).log_value;
                for (std::size_t c = 0; c < nfl_n.size(); ++c) {
                    Json row;
                    row["n"] = nfl_n[c];
                    row["a"] = a_grid[ai];
                    row["reps"] = reps;
                    row["rate"] = sig9(report.rates[c]);
                    row["stderr"] = sig9(report.mc_stderr[c]);
                    row["band"] = sig9(report.band);
                    row["pass"] = static_cast<bool>(report.band_pass[c]);
                    row["log_rkhs_norm_sq"] = sig9(log_norm);
                    rows.push_back(row);
                    csv << nfl_n[c] << ',' << format_sig9(a_grid[ai]) << ',' << reps << ','
                        << format_sig9(report.rates[c]) << ',' << format_sig9(report.mc_stderr[c]) << ','
                        << format_sig9(report.band) << ',' << (report.band_pass[c] ? "true" : "false") << ','
                        << format_sig9(log_norm) << '\n';
                }
            }
            if (output.format == "csv") output.write(out, csv.str());
            else {
                Json doc;
                doc["test"] = config.tag();
                doc["seed"] = s;
                doc["rows"] = std::move(rows);
                output.write(out, dump(doc));
            }
        } else if (diag->parsed()) {
            const DataSet data = read_csv_file(data_path);
            const Backend b = backend.resolve();
            detail::require(b.kind == BackendKind::krr, "krr-diag needs --backend krr");
            KrrSolver solver(data.z(), b.kernel, b.lambda);
            KernelDiag d = solver.diagnostics();
            if (top > 0 && top < d.eigenvalues.size()) d.eigenvalues.resize(top);
            output.write(out, dump(to_json(d, b.kernel.tag())));
        } else if (gen->parsed()) {
            const std::uint64_t s = resolve_seed(seed, err);
            ModelSpec spec;
            spec.name = parse_model(model_name);
            spec.power_variant = parse_switch(power.empty() ? "on" : power);
            spec.a_param = a_param;
            if (spec.name == ModelName::nfl && !spec.a_param) spec.a_param = 2.0;
            spec.n = gen_n;
            Rng rng(s, Stream::model);
            std::ostringstream text;
            write_csv(text, gen_model(spec, rng));
            output.write(out, text.str());
        }
    } catch (const DegenerateStatistic& ex) {
        err << "degenerate: " << ex.what() << '\n';
        return kDegenerate;
    } catch (const InvalidInput& ex) {
        err << "error: " << ex.what() << '\n';
        return kInputError;
    } catch (const std::exception& ex) {
        err << "internal error: " << ex.what() << '\n';
        return kInternalError;
    }
    return kOk;
}

}  // namespace gcm::cli
