#pragma once

// `ncps run` / `ncps list-experiments`. Kept out of ncps.hpp because the
// manifest hashes need OpenSSL.

#include "ncps/config.hpp"
#include "ncps/error.hpp"
#include "ncps/experiments.hpp"
#include "ncps/parallel.hpp"

#include "CLI11.hpp"

#include <openssl/evp.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ncps {

enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitInvalid = 2,
    kExitCheckFailed = 3,
};

/// Same digest as `git hash-object`: SHA-1 over "blob <size>\0" + content.
inline std::string git_blob_sha1(std::string_view content) {
    const std::string head = "blob " + std::to_string(content.size()) + '\0';
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, head.data(), head.size()) == 1 &&
                    EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, md.data(), &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw Error(ErrorKind::IoError, "SHA-1 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct RunOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;  // empty: output.dir from the config
    bool check = false;
    bool force = false;
};

inline Json manifest_json(const ExperimentConfig& cfg, const ExperimentResult& result, const ReportDir& dir,
                          const RunOptions& opt) {
    const std::string config_text = cfg.document.dump(2);
    Json m;
    m["experiment"] = cfg.experiment;
    m["config"] = cfg.document;
    m["config_sha1"] = git_blob_sha1(config_text);
    m["seed"] = cfg.sim.seed;
    m["threads"] = thread_count();
    m["check_mode"] = opt.check;
    m["force"] = opt.force;
    m["warnings"] = cfg.warnings;
    Json checks = Json::array();
    for (const auto& c : result.checks)
        checks.push_back(
            {{"name", c.name}, {"value", c.value}, {"expected", c.expected}, {"tolerance", c.tolerance}, {"pass", c.pass}});
    m["checks"] = std::move(checks);
    Json outputs = Json::array();
    for (const auto& f : dir.files()) {
        const std::string bytes = read_file(dir.root() / f);
        outputs.push_back({{"file", f}, {"bytes", bytes.size()}, {"sha1", git_blob_sha1(bytes)}});
    }
    m["outputs"] = std::move(outputs);
    return m;
}

inline ExitCode exit_code_for(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::ConfigInvalid:
        case ErrorKind::NotOrdered:
        case ErrorKind::SigmaSingular: return kExitInvalid;
        default: return kExitFailure;
    }
}

/// Loads, validates and runs one configuration; returns the process exit code.
inline int run_config(const RunOptions& opt, std::ostream& out, std::ostream& err) {
    ExperimentConfig cfg = [&] {
        Json doc = load_json(opt.config_path);
        for (const auto& o : opt.overrides) apply_override(doc, o);
        if (!opt.out_dir.empty()) apply_override(doc, "output.dir=" + Json(opt.out_dir).dump());
        return parse_config(std::move(doc), std::filesystem::path(opt.config_path).stem().string());
    }();
    prepare_experiment(cfg, opt.force);
    for (const auto& w : cfg.warnings) err << "warning: " << w << '\n';

    ReportDir dir(cfg.output_dir);
    const auto result = run_experiment(cfg, dir);
    const Json manifest = manifest_json(cfg, result, dir, opt);
    {
        auto os = open_output((dir.root() / "manifest.json").string());
        os << manifest.dump(2) << '\n';
        if (!os) throw Error(ErrorKind::IoError, "failed writing manifest.json");
    }

    std::size_t failed = 0;
    for (const auto& c : result.checks) {
        out << (c.pass ? "ok   " : "FAIL ") << c.name << " value=" << fmt(c.value) << " expected=" << fmt(c.expected)
            << " tol=" << fmt(c.tolerance) << '\n';
        failed += !c.pass;
    }
    out << cfg.experiment << ": " << result.checks.size() - failed << '/' << result.checks.size()
        << " checks passed, outputs in " << dir.root().string() << '\n';
    if (failed && opt.check) {
        err << "error: " << failed << " check(s) failed\n";
        return kExitCheckFailed;
    }
    return kExitOk;
}

inline int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Non-colliding particle system simulator and verification harness", "ncps"};
    app.require_subcommand(1);

    RunOptions opt;
    auto* run = app.add_subcommand("run", "run the experiment named in a JSON config");
    run->add_option("config", opt.config_path, "config file")->required();
    run->add_flag("--check", opt.check, "exit 3 when an acceptance check fails");
    run->add_option("--set", opt.overrides, "dot-path override key=value (repeatable)");
    run->add_option("--out", opt.out_dir, "output directory, overrides output.dir");
    run->add_flag("--force", opt.force, "run outside the validated parameter range");
    run->get_option("--set")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

    std::string format = "table";
    auto* list = app.add_subcommand("list-experiments", "list experiments, required keys and what each verifies");
    list->add_option("--format", format, "table or csv")->check(CLI::IsMember({"table", "csv"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitInvalid;
    }

    try {
        if (*list) {
            if (format == "csv") write_catalog_csv(out);
            else write_catalog_table(out);
            return kExitOk;
        }
        return run_config(opt, out, err);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace ncps
