#pragma once

// The six named experiments behind `ncps run`. Each writes CSV reports into a
// ReportDir and returns the checks it evaluated; `--check` turns a failed
// check into a non-zero exit.

#include "ncps/config.hpp"
#include "ncps/error.hpp"
#include "ncps/girsanov.hpp"
#include "ncps/harness.hpp"
#include "ncps/io.hpp"
#include "ncps/malliavin.hpp"
#include "ncps/model.hpp"
#include "ncps/mollifier.hpp"
#include "ncps/parallel.hpp"
#include "ncps/sde.hpp"
#include "ncps/statistics.hpp"
#include "ncps/variational.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace ncps {

struct ExperimentInfo {
    std::string name;
    std::string required_keys;
    std::string module;
    std::string operation;
    std::string verifies;
    Json defaults;
};

inline const std::vector<ExperimentInfo>& experiment_catalog() {
    static const std::vector<ExperimentInfo> catalog{
        {"simulate", "model.x0 model.alpha sim.T sim.n_steps sim.n_paths", "harness", "run_ensemble",
         "mean-square growth law |x0|^2 + (2 sum alpha + |sigma|^2) t and the sum martingale from the drift identity",
         Json{{"save_paths", 0}, {"kde", true}}},
        {"verify-identities", "model.x0 model.alpha", "model+mollifier", "weighted_drift_sum",
         "drift identity sum x_i a_i = sum alpha, non-positive quadratic form, mollifier agreement and bounds",
         Json{{"samples", 1000}, {"scan_points", 20001}}},
        {"verify-malliavin", "model.x0 model.alpha sim.T sim.n_steps sim.n_paths", "malliavin", "duality_check",
         "propagator growth bound, determinant lower bound (1-e^-t)^d of gamma, duality pairing <DX, U> = I",
         Json::object()},
        {"girsanov", "model.x0 model.alpha=0.5 sim.T sim.n_steps sim.n_paths experiment.target_alpha", "girsanov",
         "girsanov_ensemble",
         "change of measure from alpha = 1/2 to alpha via the Vandermonde weight, E[Z] = 1 and reweighted means",
         Json{{"target_alpha", 1.0}, {"form", "sde-mollified"}, {"direct", true}, {"direct_seed", nullptr}}},
        {"inverse-moment", "model.x0 model.alpha sim.T sim.n_steps sim.n_paths experiment.q", "girsanov",
         "inverse_moment", "finite inverse gap moments E|X_i - X_k|^-q for q < alpha - 1/2",
         Json{{"q", 0.4}, {"times", {0.25, 0.5, 1.0}}, {"pair", {1, 2}}, {"refine_levels", 1}, {"tolerance", 0.05}}},
        {"oracle-compare", "model.x0 model.alpha=1 sim.T sim.n_steps sim.n_paths", "harness",
         "simulate_matrix_dyson", "alpha = 1 system equals Hermitian Brownian motion eigenvalues, trace-square law",
         Json{{"repeats", 5},
              {"min_pass", 4},
              {"p_threshold", 0.01},
              {"ensemble", "hermitian"},
              {"oracle_seed", nullptr}}},
    };
    return catalog;
}

inline const ExperimentInfo& experiment_info(std::string_view name) {
    for (const auto& e : experiment_catalog())
        if (e.name == name) return e;
    throw Error(ErrorKind::ConfigInvalid, "unknown experiment " + std::string(name));
}

inline const std::vector<std::string>& catalog_columns() {
    static const std::vector<std::string> cols{"name", "required_keys", "module", "operation", "verifies"};
    return cols;
}

inline void write_catalog_csv(std::ostream& os) {
    CsvWriter w(os);
    w.header(catalog_columns());
    for (const auto& e : experiment_catalog())
        w.cell(e.name).cell(e.required_keys).cell(e.module).cell(e.operation).cell(e.verifies).end();
}

inline std::vector<ExperimentInfo> read_catalog_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || split_csv_row(line) != catalog_columns())
        throw Error(ErrorKind::IoError, "experiment catalog CSV has an unexpected header");
    std::vector<ExperimentInfo> out;
    while (std::getline(is, line)) {
        auto f = split_csv_row(line);
        if (f.size() != 5) throw Error(ErrorKind::IoError, "experiment catalog row needs 5 fields");
        out.push_back({f[0], f[1], f[2], f[3], f[4], Json::object()});
    }
    return out;
}

inline void write_catalog_table(std::ostream& os) {
    std::size_t wn = 4, wk = 13, wm = 6;
    for (const auto& e : experiment_catalog()) {
        wn = std::max(wn, e.name.size());
        wk = std::max(wk, e.required_keys.size());
        wm = std::max(wm, e.module.size() + e.operation.size() + 1);
    }
    const auto pad = [&os](const std::string& s, std::size_t w) { os << s << std::string(w - s.size() + 2, ' '); };
    pad("name", wn);
    pad("required keys", wk);
    pad("module", wm);
    os << "verifies\n";
    for (const auto& e : experiment_catalog()) {
        pad(e.name, wn);
        pad(e.required_keys, wk);
        pad(e.module + "." + e.operation, wm);
        os << e.verifies << '\n';
    }
}

struct Check {
    std::string name;
    double value = 0.0;
    double expected = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct ExperimentResult {
    std::vector<Check> checks;

    bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
    }
};

/// |value - expected| <= tolerance.
inline Check check_near(std::string name, double value, double expected, double tolerance) {
    const bool ok = std::isfinite(value) && std::abs(value - expected) <= tolerance;
    return {std::move(name), value, expected, tolerance, ok};
}

/// value <= limit.
inline Check check_at_most(std::string name, double value, double limit) {
    return {std::move(name), value, limit, 0.0, std::isfinite(value) && value <= limit};
}

inline Check check_at_least(std::string name, double value, double limit) {
    return {std::move(name), value, limit, 0.0, std::isfinite(value) && value >= limit};
}

/// Within k standard errors.
inline Check check_estimate(std::string name, const Estimate& e, double expected, double k = 3.0) {
    return check_near(std::move(name), e.value, expected, k * e.stderr_);
}

/// Output directory that remembers every file opened through it, in order.
class ReportDir {
public:
    explicit ReportDir(std::filesystem::path root) : root_(std::move(root)) {
        std::error_code ec;
        std::filesystem::create_directories(root_, ec);
        if (ec) throw Error(ErrorKind::IoError, "cannot create output directory " + root_.string() + ": " + ec.message());
    }

    std::ofstream open(const std::string& name, bool binary = false) {
        auto os = open_output((root_ / name).string(), binary);
        if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
        return os;
    }

    const std::filesystem::path& root() const noexcept { return root_; }
    const std::vector<std::string>& files() const noexcept { return files_; }

private:
    std::filesystem::path root_;
    std::vector<std::string> files_;
};

inline void write_checks_csv(std::ostream& os, const std::vector<Check>& checks) {
    CsvWriter w(os);
    w.header({"check", "value", "expected", "tolerance", "pass"});
    for (const auto& c : checks) w.cell(c.name).cell(c.value).cell(c.expected).cell(c.tolerance).cell(c.pass ? 1 : 0).end();
}

namespace detail {

inline double param_number(const Json& p, const std::string& key) { return number(p.at(key), "experiment." + key); }
inline std::uint64_t param_count(const Json& p, const std::string& key) { return count(p.at(key), "experiment." + key); }

inline bool b_is_zero(const DriftSpec& spec) { return spec.smooth().kind() == SmoothDrift::Kind::Zero; }

inline bool alpha_is_zero(const DriftSpec& spec) { return spec.alpha().matrix().isZero(0.0); }

inline std::size_t grid_index(const SimConfig& sim, double t, const std::string& key) {
    const double k = t / sim.dt();
    const double r = std::round(k);
    if (!(t > 0.0) || t > sim.horizon * (1.0 + 1e-12) || std::abs(k - r) > 1e-9 * std::max(1.0, k))
        invalid(key + " entry " + fmt(t) + " is not a positive grid time within [0, T]");
    return static_cast<std::size_t>(r);
}

inline std::vector<double> column_of(const RowMatrix& m, Eigen::Index i) {
    std::vector<double> v(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index k = 0; k < m.rows(); ++k) v[static_cast<std::size_t>(k)] = m(k, i);
    return v;
}

inline Estimate functional_estimate(const RowMatrix& m, const TerminalFunctional& g) {
    std::vector<double> v(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index k = 0; k < m.rows(); ++k) v[static_cast<std::size_t>(k)] = g(row_span(m, k));
    return mean_estimate(v);
}

inline SimConfig with_seed(const SimConfig& sim, std::uint64_t seed) {
    SimConfig out = sim;
    out.seed = seed;
    return out;
}

inline WeightForm weight_form(const std::string& s) {
    if (s == "sde-mollified") return WeightForm::SdeMollified;
    if (s == "sde-exact") return WeightForm::SdeExact;
    if (s == "closed-form") return WeightForm::ClosedForm;
    invalid("experiment.form must be sde-mollified, sde-exact or closed-form");
}

}  // namespace detail

/// Fills parameter defaults, rejects unknown or ill-typed parameters and enforces
/// experiment-specific constraints. `force` downgrades the inverse-moment range
/// restriction to a warning.
inline void prepare_experiment(ExperimentConfig& cfg, bool force = false) {
    const auto& info = experiment_info(cfg.experiment);
    for (const auto& [k, v] : cfg.params.items())
        if (!info.defaults.contains(k)) detail::invalid("unknown key experiment." + k + " for " + cfg.experiment);
    for (const auto& [k, v] : info.defaults.items())
        if (!cfg.params.contains(k)) cfg.params[k] = v;

    const auto& sim = cfg.sim;
    const auto& spec = sim.spec;
    const auto d = sim.dim();
    auto& p = cfg.params;
    if (cfg.n_paths < 2) detail::invalid("sim.n_paths must be at least 2");

    if (cfg.experiment == "simulate") {
        detail::param_count(p, "save_paths");
        if (!p["kde"].is_boolean()) detail::invalid("experiment.kde must be a boolean");
    } else if (cfg.experiment == "verify-identities") {
        if (detail::param_count(p, "samples") < 1) detail::invalid("experiment.samples must be positive");
        if (detail::param_count(p, "scan_points") < 3) detail::invalid("experiment.scan_points must be at least 3");
    } else if (cfg.experiment == "girsanov") {
        detail::require_girsanov_base(spec);
        detail::require_nu(detail::param_number(p, "target_alpha"));
        if (!p["form"].is_string()) detail::invalid("experiment.form must be a string");
        detail::weight_form(p["form"].get<std::string>());
        if (!p["direct"].is_boolean()) detail::invalid("experiment.direct must be a boolean");
        if (p["direct_seed"].is_null()) p["direct_seed"] = sim.seed + 1;
        detail::param_count(p, "direct_seed");
    } else if (cfg.experiment == "inverse-moment") {
        const double q = detail::param_number(p, "q");
        if (q < 0.0) detail::invalid("experiment.q must be non-negative");
        const double a = min_pair_alpha(spec.alpha());
        if (q > 0.0 && !(q < a - 0.5)) {
            const std::string msg = "experiment.q = " + fmt(q) + " is not below alpha - 1/2 = " + fmt(a - 0.5) +
                                    ", where the inverse moment may be infinite";
            if (!force) detail::invalid(msg + " (use --force to run anyway)");
            cfg.warnings.push_back(msg);
        }
        if (!p["times"].is_array() || p["times"].empty()) detail::invalid("experiment.times must be a non-empty array");
        for (const auto& t : p["times"]) detail::grid_index(sim, detail::number(t, "experiment.times"), "experiment.times");
        const Vector pair = detail::vector_of(p["pair"], "experiment.pair");
        if (pair.size() != 2 || pair[0] == pair[1] || pair.minCoeff() < 1 || pair.maxCoeff() > static_cast<double>(d) ||
            pair[0] != std::round(pair[0]) || pair[1] != std::round(pair[1]))
            detail::invalid("experiment.pair must name two distinct particles in 1..d");
        const auto levels = detail::param_count(p, "refine_levels");
        if (levels < 1 || levels > 6) detail::invalid("experiment.refine_levels must lie in 1..6");
        if (!(detail::param_number(p, "tolerance") > 0.0)) detail::invalid("experiment.tolerance must be positive");
    } else if (cfg.experiment == "oracle-compare") {
        if (!p["ensemble"].is_string()) detail::invalid("experiment.ensemble must be a string");
        const std::string ens = p["ensemble"].get<std::string>();
        double want = 0.0;
        if (ens == "hermitian") want = 1.0;
        else if (ens == "real-symmetric") want = 0.5;
        else detail::invalid("experiment.ensemble must be hermitian or real-symmetric");
        const auto a = spec.alpha().constant_value();
        if (!a || *a != want || !spec.sigma_is_identity() || !detail::b_is_zero(spec))
            detail::invalid("oracle-compare with the " + ens + " ensemble needs constant alpha = " + fmt(want) +
                            ", sigma = identity and no smooth drift");
        const auto repeats = detail::param_count(p, "repeats");
        if (repeats < 1) detail::invalid("experiment.repeats must be positive");
        if (detail::param_count(p, "min_pass") > repeats) detail::invalid("experiment.min_pass exceeds repeats");
        const double pt = detail::param_number(p, "p_threshold");
        if (!(pt > 0.0 && pt < 1.0)) detail::invalid("experiment.p_threshold must lie in (0, 1)");
        if (p["oracle_seed"].is_null()) p["oracle_seed"] = sim.seed + 1000;
        detail::param_count(p, "oracle_seed");
        if (cfg.n_paths < 100) detail::invalid("oracle-compare needs sim.n_paths >= 100 for the KS test");
    }

    Json section = Json::object();
    section["name"] = cfg.experiment;
    for (const auto& [k, v] : p.items()) section[k] = v;
    cfg.document["experiment"] = section;
}

namespace detail {

inline ExperimentResult run_simulate(const ExperimentConfig& cfg, ReportDir& out) {
    const auto& sim = cfg.sim;
    const auto d = sim.dim();
    const auto stats = run_ensemble(sim, cfg.n_paths);
    {
        auto os = out.open("terminal.csv");
        write_ensemble_csv(os, stats.terminal);
    }
    if (cfg.wants("binary")) {
        auto os = out.open("terminal.bin", true);
        write_batch(os, stats.terminal);
    }

    const bool b_zero = b_is_zero(sim.spec);
    const double t = sim.horizon;
    ExperimentResult r;
    {
        auto os = out.open("moments.csv");
        CsvWriter w(os);
        w.header({"quantity", "value", "stderr", "expected"});
        const auto row = [&](const std::string& q, double v, double se, std::optional<double> expected) {
            w.cell(q).cell(v).cell(se);
            if (expected) w.cell(*expected);
            else w.cell(std::string_view(""));
            w.end();
        };
        const auto known = [&](double v) { return b_zero ? std::optional<double>(v) : std::nullopt; };
        row("mean_sq_norm", stats.mean_sq_norm.value, stats.mean_sq_norm.stderr_, known(expected_mean_sq_norm(sim, t)));
        row("sum_mean", stats.sum_mean.value, stats.sum_mean.stderr_, known(sim.x0.values().sum()));
        row("sum_variance", stats.sum_variance.value, stats.sum_variance.stderr_, known(expected_sum_variance(sim, t)));
        for (Eigen::Index i = 0; i < d; ++i) {
            const auto col = stats.column(i);
            const auto m = mean_estimate(col);
            const auto v = variance_estimate(col);
            row("mean_x" + std::to_string(i + 1), m.value, m.stderr_, std::nullopt);
            row("variance_x" + std::to_string(i + 1), v.value, v.stderr_, std::nullopt);
        }
        row("violation_fraction", stats.violation_fraction, 0.0, std::nullopt);
    }
    if (b_zero) {
        r.checks.push_back(check_estimate("mean_sq_norm", stats.mean_sq_norm, expected_mean_sq_norm(sim, t)));
        r.checks.push_back(check_estimate("sum_mean", stats.sum_mean, sim.x0.values().sum()));
        r.checks.push_back(check_estimate("sum_variance", stats.sum_variance, expected_sum_variance(sim, t)));
    }

    if (cfg.params["kde"].get<bool>()) {
        for (Eigen::Index i = 0; i < d; ++i) {
            const auto col = stats.column(i);
            auto os = out.open("kde_x" + std::to_string(i + 1) + ".csv");
            write_kde_csv(os, kde(col));
        }
    }
    const auto n_saved = std::min<std::uint64_t>(param_count(cfg.params, "save_paths"), cfg.n_paths);
    for (std::uint64_t p = 0; p < n_saved; ++p) {
        auto os = out.open("path_" + std::to_string(p) + ".csv");
        write_path_csv(os, simulate(sim, p));
    }
    return r;
}

struct IdentityRow {
    std::string identity;
    std::size_t samples = 0;
    double max_violation = 0.0;
    double tolerance = 0.0;
};

/// Random chamber points and directions; returns one row per identity.
inline std::vector<IdentityRow> identity_suite(const DriftSpec& spec, const Mollifier& m, std::size_t samples,
                                               std::size_t scan_points, std::uint64_t seed) {
    const Eigen::Index d = spec.dim();
    const auto& alpha = spec.alpha();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::exponential_distribution<double> expo(1.0);
    IdentityRow sum{"weighted_drift_sum", samples, 0.0, 1e-9};
    IdentityRow quad{"quadratic_form_nonpositive", samples, 0.0, 1e-9};
    IdentityRow quad_m{"quadratic_form_mollified_nonpositive", samples, 0.0, 1e-9};
    Vector x(d), y(d);
    for (std::size_t s = 0; s < samples; ++s) {
        x[0] = 2.0 * normal(rng);
        for (Eigen::Index i = 1; i < d; ++i) x[i] = x[i - 1] + 1e-3 + expo(rng);
        for (Eigen::Index i = 0; i < d; ++i) y[i] = normal(rng);
        const auto xs = ParticleState::make(x);
        sum.max_violation = std::max(sum.max_violation, std::abs(weighted_drift_sum(xs, alpha) - alpha.pair_sum()));
        quad.max_violation = std::max(quad.max_violation, quadratic_form_a(xs, y, alpha));
        quad_m.max_violation = std::max(quad_m.max_violation, quadratic_form_mollified(x, y, alpha, m));
    }

    const double eps = m.epsilon();
    const auto a2 = AlphaMatrix::constant(2, alpha(1, 0) > 0.0 ? alpha(1, 0) : 1.0);
    const double a = a2(1, 0);
    IdentityRow rho_id{"rho_identity_above_eps", 0, 0.0, 0.0};
    IdentityRow rho_low{"rho_constant_below_zero", 0, 0.0, 1e-8};
    IdentityRow phi_id{"phi_equals_alpha_over_xi_above_eps", 0, 0.0, 0.0};
    IdentityRow phi_le{"phi_below_singular_on_0_eps", 0, 0.0, 0.0};
    IdentityRow phi_pos{"phi_nonnegative_below_zero", 0, 0.0, 0.0};
    for (std::size_t k = 0; k < scan_points; ++k) {
        const double xi = eps * (-2.0 + 5.0 * static_cast<double>(k) / static_cast<double>(scan_points - 1));
        const double rho = m.rho(xi);
        const double phi = phi_eps(xi, 1, 0, a2, m);
        if (xi >= eps) {
            ++rho_id.samples;
            ++phi_id.samples;
            rho_id.max_violation = std::max(rho_id.max_violation, std::abs(rho - xi));
            phi_id.max_violation = std::max(phi_id.max_violation, std::abs(phi - a / xi));
        } else if (xi > 0.0) {
            ++phi_le.samples;
            phi_le.max_violation = std::max(phi_le.max_violation, phi - a / xi);
        } else {
            ++rho_low.samples;
            ++phi_pos.samples;
            rho_low.max_violation = std::max(rho_low.max_violation, std::abs(rho - 0.5 * eps));
            phi_pos.max_violation = std::max(phi_pos.max_violation, -phi);
        }
    }
    return {sum, quad, quad_m, rho_id, rho_low, phi_id, phi_le, phi_pos};
}

inline ExperimentResult run_identities(const ExperimentConfig& cfg, ReportDir& out) {
    const auto rows = identity_suite(cfg.sim.spec, cfg.sim.mollifier(), param_count(cfg.params, "samples"),
                                     param_count(cfg.params, "scan_points"), cfg.sim.seed);
    ExperimentResult r;
    auto os = out.open("identities.csv");
    CsvWriter w(os);
    w.header({"identity", "samples", "max_violation", "tolerance", "pass"});
    for (const auto& row : rows) {
        const auto c = check_at_most(row.identity, row.max_violation, row.tolerance);
        w.cell(row.identity).cell(row.samples).cell(row.max_violation).cell(row.tolerance).cell(c.pass ? 1 : 0).end();
        r.checks.push_back(c);
    }
    return r;
}

struct MalliavinPathReport {
    PropagatorBoundReport bounds;
    double inverse_defect = 0.0;
    double det_gamma = 0.0;
    bool gamma_ok = true;
    double max_residual = INFINITY;
    double pairing_error = INFINITY;  // against (1 - e^{-t}) I
    bool mollified = false;
    double min_gap = 0.0;

    /// Gaps stay above 10 eps on the whole grid.
    bool smooth_regime(double eps) const { return min_gap > 10.0 * eps; }
};

inline ExperimentResult run_malliavin(const ExperimentConfig& cfg, ReportDir& out) {
    const auto& sim = cfg.sim;
    const auto& spec = sim.spec;
    const Mollifier moll = sim.mollifier();
    const std::size_t n = cfg.n_paths;
    const std::size_t t_index = sim.n_steps;
    const double t = sim.horizon;
    const Eigen::Index d = sim.dim();
    std::vector<MalliavinPathReport> reports(n);
    parallel_for(n, [&](std::size_t p) {
        const Path path = simulate(sim, p);
        const FlowPair fp = integrate_flows(path, spec, moll);
        auto& rep = reports[p];
        rep.bounds = bound_report(fp, spec);
        rep.inverse_defect = fp.max_inverse_defect();
        rep.mollified = fp.mollified_regime();
        rep.min_gap = fp.min_gap;
        try {
            const auto bundle = malliavin_bundle(path, fp, spec, t_index);
            rep.det_gamma = bundle.det_gamma;
            const auto dual = duality_check(bundle);
            rep.max_residual = dual.max_residual;
            rep.pairing_error = (dual.pairing - (1.0 - std::exp(-t)) * Matrix::Identity(d, d)).cwiseAbs().maxCoeff();
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::GammaDegenerate) throw;
            rep.gamma_ok = false;
        }
    });

    const double bound = gamma_det_bound(t, d);
    {
        auto os = out.open("bounds.csv");
        write_bound_csv_header(os);
        for (std::size_t p = 0; p < n; ++p) write_bound_csv_row(os, cfg.id + "#" + std::to_string(p), reports[p].bounds);
    }
    {
        auto os = out.open("duality.csv");
        write_duality_csv_header(os);
        for (std::size_t p = 0; p < n; ++p) {
            DualityReport dr;
            dr.max_residual = reports[p].max_residual;
            dr.mollified_regime = reports[p].mollified;
            write_duality_csv_row(os, cfg.id + "#" + std::to_string(p), sim.seed, t, dr);
        }
    }
    {
        auto os = out.open("flows.csv");
        CsvWriter w(os);
        w.header({"config_id", "min_gap", "max_inverse_defect", "max_spectral_ratio", "regime"});
        for (std::size_t p = 0; p < n; ++p) {
            const auto& rep = reports[p];
            const char* regime = rep.mollified ? "mollified" : rep.smooth_regime(sim.epsilon) ? "smooth" : "near";
            w.cell(cfg.id + "#" + std::to_string(p)).cell(rep.min_gap).cell(rep.inverse_defect);
            w.cell(rep.bounds.max_spectral_ratio).cell(std::string_view(regime)).end();
        }
    }
    {
        auto os = out.open("gamma.csv");
        CsvWriter w(os);
        w.header({"config_id", "t", "det_gamma", "bound"});
        for (std::size_t p = 0; p < n; ++p)
            w.cell(cfg.id + "#" + std::to_string(p)).cell(t).cell(reports[p].det_gamma).cell(bound).end();
    }

    double norm_ratio = 0.0, eig_ratio = 0.0, defect = 0.0, min_det = INFINITY, residual = 0.0;
    double pairing = 0.0, det_dev = 0.0;
    std::size_t smooth = 0;
    for (const auto& rep : reports) {
        norm_ratio = std::max(norm_ratio, rep.bounds.max_norm_ratio);
        eig_ratio = std::max(eig_ratio, rep.bounds.max_eig_ratio);
        min_det = std::min(min_det, rep.gamma_ok ? std::abs(rep.det_gamma) : 0.0);
        pairing = std::max(pairing, rep.pairing_error);
        det_dev = std::max(det_dev, std::abs(rep.det_gamma - bound));
        if (!rep.smooth_regime(sim.epsilon)) continue;
        ++smooth;
        defect = std::max(defect, rep.inverse_defect);
        residual = std::max(residual, rep.max_residual);
    }
    ExperimentResult r;
    r.checks.push_back(check_at_most("propagator_norm_ratio", norm_ratio, 1.0 + 1e-6));
    r.checks.push_back(check_at_most("propagator_eig_ratio", eig_ratio, 1.0 + 1e-6));
    r.checks.push_back(check_at_least("gamma_det_min", min_det, bound * (1.0 - 1e-12)));
    r.checks.push_back(check_at_least("smooth_regime_paths", static_cast<double>(smooth), 1.0));
    r.checks.push_back(check_at_most("flow_inverse_defect_smooth", defect, 1e-8));
    if (alpha_is_zero(spec) && b_is_zero(spec)) {
        r.checks.push_back(check_at_most("gamma_det_equality", det_dev, 1e-10));
        r.checks.push_back(check_at_most("duality_pairing_closed_form", pairing, 1e-8));
    } else {
        r.checks.push_back(check_at_most("duality_residual_smooth", residual, 10.0 * sim.dt()));
    }
    return r;
}

inline ExperimentResult run_girsanov(const ExperimentConfig& cfg, ReportDir& out) {
    const auto& sim = cfg.sim;
    const auto& p = cfg.params;
    const double target = param_number(p, "target_alpha");
    const auto form = weight_form(p["form"].get<std::string>());
    const auto ens = girsanov_ensemble(sim, cfg.n_paths, target, form);

    const std::vector<std::pair<std::string, TerminalFunctional>> functionals{
        {"weight", [](std::span<const double>) { return 1.0; }},
        {"sq_norm",
         [](std::span<const double> x) {
             double s = 0.0;
             for (double v : x) s += v * v;
             return s;
         }},
        {"gauss",
         [](std::span<const double> x) {
             double s = 0.0;
             for (double v : x) s += v * v;
             return std::exp(-s);
         }},
    };

    std::optional<RowMatrix> direct;
    if (p["direct"].get<bool>()) {
        const auto spec = DriftSpec::make(AlphaMatrix::constant(sim.dim(), target), sim.spec.smooth(), sim.spec.sigma());
        SimConfig dsim = sim;
        dsim.spec = spec;
        dsim.seed = param_count(p, "direct_seed");
        direct = run_ensemble(dsim, cfg.n_paths).terminal;
    }

    ExperimentResult r;
    auto os = out.open("estimators.csv");
    write_estimator_csv_header(os);
    for (const auto& [name, g] : functionals) {
        const auto w = reweighted_expectation(ens, g);
        write_estimator_csv_row(os, "reweighted:" + name, target, 0.0, w.estimate, w.ess, w.excluded_fraction);
        if (name == "weight") {
            r.checks.push_back(check_estimate("weight_mean", w.estimate, 1.0));
            continue;
        }
        if (!direct) continue;
        const auto e = functional_estimate(*direct, g);
        write_estimator_csv_row(os, "direct:" + name, target, 0.0, e, static_cast<double>(direct->rows()), 0.0);
        const double se = std::hypot(w.estimate.stderr_, e.stderr_);
        r.checks.push_back(check_near("reweighted_vs_direct:" + name, w.estimate.value, e.value, 3.0 * se));
    }
    return r;
}

inline ExperimentResult run_inverse_moment(const ExperimentConfig& cfg, ReportDir& out) {
    const auto& sim = cfg.sim;
    const auto& p = cfg.params;
    const double q = param_number(p, "q");
    const double tol = param_number(p, "tolerance");
    const auto levels = param_count(p, "refine_levels");
    const Vector pair = vector_of(p["pair"], "experiment.pair");
    const auto i = static_cast<Eigen::Index>(pair[0]) - 1;
    const auto k = static_cast<Eigen::Index>(pair[1]) - 1;
    std::vector<double> times;
    std::vector<std::size_t> idx;
    for (const auto& t : p["times"]) {
        times.push_back(t.get<double>());
        idx.push_back(grid_index(sim, times.back(), "experiment.times"));
    }
    const auto coarse = snapshot_ensemble(sim, cfg.n_paths, idx, 0);
    const auto fine = snapshot_ensemble(sim, cfg.n_paths, idx, levels);
    const double dt_fine = sim.dt() / static_cast<double>(std::size_t{1} << levels);

    ExperimentResult r;
    auto os = out.open("inverse_moment.csv");
    CsvWriter w(os);
    w.header({"t", "dt", "q", "i", "k", "value", "stderr"});
    for (std::size_t j = 0; j < times.size(); ++j) {
        const auto ec = inverse_moment(coarse[j], i, k, q);
        const auto ef = inverse_moment(fine[j], i, k, q);
        w.cell(times[j]).cell(sim.dt()).cell(q).cell(i + 1).cell(k + 1).cell(ec.value).cell(ec.stderr_).end();
        w.cell(times[j]).cell(dt_fine).cell(q).cell(i + 1).cell(k + 1).cell(ef.value).cell(ef.stderr_).end();
        const std::string at = "@t=" + fmt(times[j]);
        if (q == 0.0) {
            r.checks.push_back(check_near("q0_exact" + at, ec.value, 1.0, 0.0));
            r.checks.push_back(check_near("q0_exact_fine" + at, ef.value, 1.0, 0.0));
        }
        const double rel = std::abs(ef.value - ec.value) / std::abs(ec.value);
        r.checks.push_back(check_at_most("refinement_stability" + at, rel, tol));
    }
    return r;
}

inline ExperimentResult run_oracle(const ExperimentConfig& cfg, ReportDir& out) {
    const auto& sim = cfg.sim;
    const auto& p = cfg.params;
    const auto repeats = param_count(p, "repeats");
    const auto min_pass = param_count(p, "min_pass");
    const double threshold = param_number(p, "p_threshold");
    const auto oracle_seed = param_count(p, "oracle_seed");
    const bool hermitian = p["ensemble"] == "hermitian";
    const auto kind = hermitian ? MatrixEnsemble::Hermitian : MatrixEnsemble::RealSymmetric;
    const Eigen::Index d = sim.dim();
    const double t = sim.horizon;
    const Vector& x0 = sim.x0.values();
    const double dd = static_cast<double>(d);
    const double expected_trace = hermitian ? expected_trace_square(x0, t) : x0.squaredNorm() + (dd + dd * (dd - 1.0) / 2.0) * t;

    std::vector<std::size_t> passes(static_cast<std::size_t>(d), 0);
    std::optional<Estimate> oracle_trace, sde_trace;
    auto ks_os = out.open("ks.csv");
    CsvWriter ks(ks_os);
    ks.header({"repeat", "coordinate", "distance", "p_value", "pass"});
    for (std::uint64_t rep = 0; rep < repeats; ++rep) {
        const auto stats = run_ensemble(with_seed(sim, sim.seed + rep), cfg.n_paths);
        const auto oracle = simulate_matrix_dyson(d, x0, t, cfg.n_paths, oracle_seed + rep, kind);
        for (Eigen::Index i = 0; i < d; ++i) {
            const auto res = ks_two_sample(stats.column(i), column_of(oracle, i));
            const bool ok = res.p_value > threshold;
            passes[static_cast<std::size_t>(i)] += ok;
            ks.cell(rep).cell(i + 1).cell(res.distance).cell(res.p_value).cell(ok ? 1 : 0).end();
        }
        if (rep == 0) {
            oracle_trace = functional_estimate(oracle, [](std::span<const double> x) {
                double s = 0.0;
                for (double v : x) s += v * v;
                return s;
            });
            sde_trace = stats.mean_sq_norm;
        }
    }

    ExperimentResult r;
    for (Eigen::Index i = 0; i < d; ++i)
        r.checks.push_back(check_at_least("ks_passes_x" + std::to_string(i + 1),
                                          static_cast<double>(passes[static_cast<std::size_t>(i)]),
                                          static_cast<double>(min_pass)));
    r.checks.push_back(check_estimate("oracle_trace_square", *oracle_trace, expected_trace));
    r.checks.push_back(check_estimate("sde_mean_sq_norm", *sde_trace, expected_trace));

    auto os = out.open("trace.csv");
    CsvWriter w(os);
    w.header({"source", "value", "stderr", "expected"});
    w.cell("oracle").cell(oracle_trace->value).cell(oracle_trace->stderr_).cell(expected_trace).end();
    w.cell("sde").cell(sde_trace->value).cell(sde_trace->stderr_).cell(expected_trace).end();
    return r;
}

}  // namespace detail

/// Runs a prepared configuration; every check also lands in checks.csv.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, ReportDir& out) {
    ExperimentResult r;
    const auto& name = cfg.experiment;
    if (name == "simulate") r = detail::run_simulate(cfg, out);
    else if (name == "verify-identities") r = detail::run_identities(cfg, out);
    else if (name == "verify-malliavin") r = detail::run_malliavin(cfg, out);
    else if (name == "girsanov") r = detail::run_girsanov(cfg, out);
    else if (name == "inverse-moment") r = detail::run_inverse_moment(cfg, out);
    else if (name == "oracle-compare") r = detail::run_oracle(cfg, out);
    else throw Error(ErrorKind::ConfigInvalid, "unknown experiment " + name);
    auto os = out.open("checks.csv");
    write_checks_csv(os, r.checks);
    return r;
}

}  // namespace ncps
