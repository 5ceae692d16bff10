#pragma once

// JSON experiment configuration: parsing, dot-path overrides, validation and
// advisory warnings when parameters leave the theorems' hypotheses.
//
//   { "id": "...",
//     "model": { "d", "x0", "alpha" (scalar | matrix), "smooth" {kind, mu}, "sigma" ("identity" | matrix) },
//     "sim": { "T", "n_steps", "epsilon" ("auto" | number), "seed", "n_paths" },
//     "experiment": { "name", ...params },
//     "output": { "dir", "formats" [csv, binary] } }

#include "ncps/error.hpp"
#include "ncps/io.hpp"
#include "ncps/linalg.hpp"
#include "ncps/model.hpp"
#include "ncps/sde.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ncps {

using Json = nlohmann::ordered_json;

inline const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names{"simulate",  "verify-identities", "verify-malliavin",
                                                "girsanov", "inverse-moment",    "oracle-compare"};
    return names;
}

struct ExperimentConfig {
    Json document;  // resolved: defaults filled in, epsilon made numeric
    std::string id;
    std::string experiment;
    Json params;  // experiment section without "name"
    SimConfig sim;
    std::size_t n_paths = 0;
    std::string output_dir;
    std::vector<std::string> formats;
    std::vector<std::string> warnings;

    bool wants(std::string_view format) const {
        return std::find(formats.begin(), formats.end(), format) != formats.end();
    }
};

namespace detail {

[[noreturn]] inline void invalid(const std::string& msg) { throw Error(ErrorKind::ConfigInvalid, msg); }

inline void only_keys(const Json& obj, const std::string& where, std::initializer_list<std::string_view> keys) {
    if (!obj.is_object()) invalid(where + " must be an object");
    for (const auto& [k, v] : obj.items())
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) invalid("unknown key " + where + "." + k);
}

inline double number(const Json& j, const std::string& key) {
    if (!j.is_number()) invalid(key + " must be a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) invalid(key + " must be finite");
    return v;
}

inline std::uint64_t count(const Json& j, const std::string& key) {
    if (!j.is_number_integer() || j.get<long long>() < 0) invalid(key + " must be a non-negative integer");
    return j.get<std::uint64_t>();
}

inline Vector vector_of(const Json& j, const std::string& key) {
    if (!j.is_array()) invalid(key + " must be an array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number(j[i], key);
    return v;
}

inline Matrix matrix_of(const Json& j, Eigen::Index d, const std::string& key) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != d) invalid(key + " must be a d x d array");
    Matrix m(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const Vector row = vector_of(j[static_cast<std::size_t>(i)], key);
        if (row.size() != d) invalid(key + " must be a d x d array");
        m.row(i) = row.transpose();
    }
    return m;
}

inline Json parse_scalar(const std::string& text) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error&) {
        return Json(text);
    }
}

}  // namespace detail

inline Json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot read config " + path);
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorKind::ConfigInvalid, "config " + path + " is not valid JSON: " + e.what());
    }
}

/// `a.b.c=value`; the value is read as JSON when it parses, otherwise as a string.
inline void apply_override(Json& doc, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0)
        throw Error(ErrorKind::ConfigInvalid, "override must look like key.path=value: " + std::string(assignment));
    const std::string key(assignment.substr(0, eq));
    Json* node = &doc;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw Error(ErrorKind::ConfigInvalid, "empty segment in override key " + key);
        parts.push_back(part);
    }
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (!node->is_object()) {
            if (!node->is_null()) throw Error(ErrorKind::ConfigInvalid, "override " + key + " descends into a non-object");
            *node = Json::object();
        }
        node = &(*node)[parts[i]];
    }
    *node = detail::parse_scalar(std::string(assignment.substr(eq + 1)));
}

/// sigma_d^2 = max_i sum_k sigma_ik^2.
inline double sigma_d_squared(const Matrix& sigma) { return sigma.rowwise().squaredNorm().maxCoeff(); }

inline double min_pair_alpha(const AlphaMatrix& a) {
    double m = INFINITY;
    for (Eigen::Index k = 0; k < a.dim(); ++k)
        for (Eigen::Index l = 0; l < k; ++l) m = std::min(m, a(k, l));
    return m;
}

/// Advisory only: the run proceeds outside the proven regime.
inline std::vector<std::string> hypothesis_warnings(const DriftSpec& spec) {
    std::vector<std::string> out;
    const double d = static_cast<double>(spec.dim());
    const double a = min_pair_alpha(spec.alpha());
    const auto num = [](double v) { return fmt(v); };
    if (a < 0.5)
        out.push_back("alpha = " + num(a) + " < 1/2: particles may collide, so the solution can leave the chamber");
    if (a <= 6.0 * d + 0.5)
        out.push_back("alpha = " + num(a) + " <= 6d + 1/2 = " + num(6.0 * d + 0.5) +
                      ": no q > d with finite E|X_i - X_j|^(-6q) is guaranteed, the density result does not apply");
    if (!spec.sigma_is_identity()) {
        const double s2 = sigma_d_squared(spec.sigma());
        const double need = (6.0 * d + 1.0) * d * s2 / 3.0;
        if (a <= need)
            out.push_back("alpha = " + num(a) + " <= (6d+1) d sigma_d^2 / 3 = " + num(need) +
                          " for the non-identity diffusion matrix");
    }
    return out;
}

inline DriftSpec parse_model(const Json& m) {
    detail::only_keys(m, "model", {"d", "x0", "alpha", "smooth", "sigma"});
    if (!m.contains("x0")) detail::invalid("model.x0 is required");
    const Vector x = detail::vector_of(m["x0"], "model.x0");
    const auto d = x.size();
    if (m.contains("d") && static_cast<Eigen::Index>(detail::count(m["d"], "model.d")) != d)
        detail::invalid("model.d does not match the length of model.x0");
    if (d < 2) detail::invalid("model.x0 needs d >= 2 particles");

    if (!m.contains("alpha")) detail::invalid("model.alpha is required");
    const Json& aj = m["alpha"];
    AlphaMatrix alpha = aj.is_number() ? AlphaMatrix::constant(d, detail::number(aj, "model.alpha"))
                                       : AlphaMatrix::from_matrix(detail::matrix_of(aj, d, "model.alpha"));

    SmoothDrift smooth = SmoothDrift::zero();
    if (m.contains("smooth")) {
        const Json& s = m["smooth"];
        detail::only_keys(s, "model.smooth", {"kind", "mu"});
        const std::string kind = s.value("kind", "zero");
        if (kind == "zero") {
            if (s.contains("mu")) detail::invalid("model.smooth.mu only applies to kind linear-mu");
        } else if (kind == "linear-mu") {
            if (!s.contains("mu")) detail::invalid("model.smooth.mu is required for kind linear-mu");
            const Vector mu = detail::vector_of(s["mu"], "model.smooth.mu");
            if (mu.size() != d) detail::invalid("model.smooth.mu must have d entries");
            smooth = SmoothDrift::linear_mu(mu);
        } else if (kind == "hyperbolic") {
            smooth = SmoothDrift::hyperbolic_correction(alpha);
        } else {
            detail::invalid("model.smooth.kind must be zero, linear-mu or hyperbolic, got " + kind);
        }
    }

    Matrix sigma = Matrix::Identity(d, d);
    if (m.contains("sigma")) {
        const Json& sj = m["sigma"];
        if (sj.is_string()) {
            if (sj.get<std::string>() != "identity") detail::invalid("model.sigma must be \"identity\" or a matrix");
        } else {
            sigma = detail::matrix_of(sj, d, "model.sigma");
        }
    }
    return DriftSpec::make(std::move(alpha), std::move(smooth), std::move(sigma));
}

/// Validates the document and fills defaults. Throws ConfigInvalid or NotOrdered.
inline ExperimentConfig parse_config(Json doc, std::string default_id = "run") {
    detail::only_keys(doc, "config", {"id", "model", "sim", "experiment", "output"});
    for (const char* section : {"model", "sim", "experiment"})
        if (!doc.contains(section)) detail::invalid(std::string("missing section ") + section);

    const std::string id = doc.value("id", default_id);
    doc["id"] = id;

    DriftSpec spec = parse_model(doc["model"]);
    ParticleState x0 = [&] {
        try {
            return ParticleState::make(detail::vector_of(doc["model"].value("x0", Json::array()), "model.x0"));
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::NotOrdered)
                throw Error(ErrorKind::NotOrdered, "model.x0 violates the strict ordering x1 < ... < xd: " + e.message());
            throw;
        }
    }();
    doc["model"]["d"] = spec.dim();

    Json& s = doc["sim"];
    detail::only_keys(s, "sim", {"T", "n_steps", "epsilon", "seed", "n_paths"});
    const double horizon = s.contains("T") ? detail::number(s["T"], "sim.T") : 1.0;
    const auto n_steps = s.contains("n_steps") ? detail::count(s["n_steps"], "sim.n_steps") : 1000;
    const auto seed = s.contains("seed") ? detail::count(s["seed"], "sim.seed") : 1;
    const auto n_paths = s.contains("n_paths") ? detail::count(s["n_paths"], "sim.n_paths") : 1000;
    std::optional<double> eps;
    if (s.contains("epsilon") && !(s["epsilon"].is_string() && s["epsilon"].get<std::string>() == "auto"))
        eps = detail::number(s["epsilon"], "sim.epsilon");
    ExperimentConfig cfg{Json{}, id, {}, Json{}, SimConfig::make(std::move(spec), std::move(x0), horizon, n_steps, seed, eps)};
    cfg.n_paths = n_paths;
    s["T"] = horizon;
    s["n_steps"] = n_steps;
    s["seed"] = seed;
    s["n_paths"] = cfg.n_paths;
    s["epsilon"] = cfg.sim.epsilon;

    const Json& e = doc["experiment"];
    if (!e.is_object() || !e.contains("name") || !e["name"].is_string())
        detail::invalid("experiment.name is required");
    cfg.experiment = e["name"].get<std::string>();
    const auto& names = experiment_names();
    if (std::find(names.begin(), names.end(), cfg.experiment) == names.end())
        detail::invalid("unknown experiment " + cfg.experiment);
    cfg.params = e;
    cfg.params.erase("name");

    if (!doc.contains("output")) doc["output"] = Json::object();
    Json& o = doc["output"];
    detail::only_keys(o, "output", {"dir", "formats"});
    if (!o.contains("dir")) o["dir"] = "out";
    if (!o["dir"].is_string()) detail::invalid("output.dir must be a string");
    cfg.output_dir = o["dir"].get<std::string>();
    if (!o.contains("formats")) o["formats"] = Json::array({"csv"});
    if (!o["formats"].is_array()) detail::invalid("output.formats must be an array");
    for (const auto& f : o["formats"]) {
        if (!f.is_string() || (f != "csv" && f != "binary"))
            detail::invalid("output.formats entries must be csv or binary");
        cfg.formats.push_back(f.get<std::string>());
    }
    if (!cfg.wants("csv")) detail::invalid("output.formats must include csv");

    cfg.warnings = hypothesis_warnings(cfg.sim.spec);
    for (auto& w : cfg.sim.warnings()) cfg.warnings.push_back(std::move(w));
    cfg.document = std::move(doc);
    return cfg;
}

}  // namespace ncps
