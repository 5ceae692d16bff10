#include "ncps/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace ncps;
namespace fs = std::filesystem;

namespace {

Json base_doc() {
    return Json::parse(R"({
        "model": { "x0": [0.0, 1.0], "alpha": 1.0 },
        "sim": { "T": 1.0, "n_steps": 100, "seed": 3, "n_paths": 200 },
        "experiment": { "name": "simulate" }
    })");
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("ncps_cli_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_config(const fs::path& dir, const Json& doc, const std::string& name = "cfg.json") {
    const auto p = dir / name;
    std::ofstream(p) << doc.dump(2);
    return p;
}

struct CliRun {
    int code;
    std::string out;
    std::string err;
};

CliRun cli(std::vector<std::string> args) {
    args.insert(args.begin(), "ncps");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

bool contains(const std::vector<std::string>& v, const std::string& needle) {
    for (const auto& s : v)
        if (s.find(needle) != std::string::npos) return true;
    return false;
}

}  // namespace

TEST(Override, DotPathsCreateAndParse) {
    Json doc = base_doc();
    apply_override(doc, "sim.seed=7");
    apply_override(doc, "experiment.kde=false");
    apply_override(doc, "output.dir=some/where");
    apply_override(doc, "model.x0=[0,2,5]");
    EXPECT_EQ(doc["sim"]["seed"], 7);
    EXPECT_EQ(doc["experiment"]["kde"], false);
    EXPECT_EQ(doc["output"]["dir"], "some/where");
    EXPECT_EQ(doc["model"]["x0"].size(), 3u);
    EXPECT_THROW(apply_override(doc, "no-equals"), Error);
    EXPECT_THROW(apply_override(doc, "=3"), Error);
    EXPECT_THROW(apply_override(doc, "sim..seed=1"), Error);
    EXPECT_THROW(apply_override(doc, "sim.seed.deeper=1"), Error);
}

TEST(ParseConfig, FillsDefaultsAndResolvesEpsilon) {
    const auto cfg = parse_config(base_doc(), "base");
    EXPECT_EQ(cfg.id, "base");
    EXPECT_EQ(cfg.experiment, "simulate");
    EXPECT_EQ(cfg.n_paths, 200u);
    EXPECT_EQ(cfg.sim.seed, 3u);
    EXPECT_DOUBLE_EQ(cfg.sim.epsilon, default_epsilon(cfg.sim.x0.span(), 0.01));
    EXPECT_EQ(cfg.document["sim"]["epsilon"].get<double>(), cfg.sim.epsilon);
    EXPECT_EQ(cfg.document["model"]["d"], 2);
    EXPECT_EQ(cfg.output_dir, "out");
    EXPECT_TRUE(cfg.wants("csv"));
    EXPECT_FALSE(cfg.wants("binary"));
}

TEST(ParseConfig, ResolvedDocumentReparsesToSameConfig) {
    auto cfg = parse_config(base_doc());
    prepare_experiment(cfg);
    auto again = parse_config(cfg.document);
    prepare_experiment(again);
    EXPECT_EQ(cfg.document, again.document);
}

TEST(ParseConfig, RejectsBadDocuments) {
    const auto expect_invalid = [](const std::string& key_value) {
        Json doc = base_doc();
        apply_override(doc, key_value);
        try {
            auto cfg = parse_config(doc);
            prepare_experiment(cfg);
            ADD_FAILURE() << key_value;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::ConfigInvalid) << key_value << ": " << e.what();
        }
    };
    expect_invalid("model.colour=1");
    expect_invalid("sim.T=-1");
    expect_invalid("sim.n_steps=0");
    expect_invalid("sim.n_steps=1.5");
    expect_invalid("sim.epsilon=2");
    expect_invalid("model.alpha=-1");
    expect_invalid("model.alpha=[[0,1],[2,0]]");
    expect_invalid("model.d=3");
    expect_invalid("model.smooth.kind=\"cubic\"");
    expect_invalid("model.sigma=\"diagonal\"");
    expect_invalid("experiment.name=\"bogus\"");
    expect_invalid("experiment.unknown=1");
    expect_invalid("output.formats=[\"binary\"]");
    expect_invalid("output.formats=[\"parquet\",\"csv\"]");
}

TEST(ParseConfig, OrderingViolationIsNamed) {
    Json doc = base_doc();
    apply_override(doc, "model.x0=[1,0]");
    try {
        parse_config(doc);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotOrdered);
        EXPECT_NE(std::string(e.what()).find("strict ordering"), std::string::npos);
    }
}

TEST(ParseConfig, MatrixAlphaAndSigmaAndSmoothKinds) {
    Json doc = base_doc();
    apply_override(doc, "model.alpha=[[0,2],[2,0]]");
    apply_override(doc, "model.sigma=[[1,0],[0.5,1]]");
    apply_override(doc, "model.smooth={\"kind\":\"linear-mu\",\"mu\":[-1,0.5]}");
    const auto cfg = parse_config(doc);
    EXPECT_EQ(cfg.sim.spec.alpha()(1, 0), 2.0);
    EXPECT_EQ(cfg.sim.spec.sigma()(1, 0), 0.5);
    EXPECT_EQ(cfg.sim.spec.smooth().kind(), SmoothDrift::Kind::LinearMu);
    apply_override(doc, "model.smooth={\"kind\":\"hyperbolic\"}");
    EXPECT_EQ(parse_config(doc).sim.spec.smooth().kind(), SmoothDrift::Kind::HyperbolicCorrection);
}

TEST(Warnings, DensityHypothesisThresholds) {
    Json doc = base_doc();
    auto w = parse_config(doc).warnings;
    EXPECT_TRUE(contains(w, "6d + 1/2 = 12.5"));

    apply_override(doc, "model.alpha=12.5");
    EXPECT_TRUE(contains(parse_config(doc).warnings, "6d + 1/2"));
    apply_override(doc, "model.alpha=12.6");
    EXPECT_FALSE(contains(parse_config(doc).warnings, "6d + 1/2"));

    apply_override(doc, "model.alpha=0.25");
    EXPECT_TRUE(contains(parse_config(doc).warnings, "may collide"));
}

TEST(Warnings, NonIdentitySigmaThreshold) {
    // sigma_d^2 = max row sum of squares = 4, (6d+1) d sigma_d^2 / 3 = 13 * 2 * 4 / 3.
    Json doc = base_doc();
    apply_override(doc, "model.sigma=[[2,0],[0,1]]");
    const double need = 13.0 * 2.0 * 4.0 / 3.0;
    EXPECT_DOUBLE_EQ(sigma_d_squared(parse_config(doc).sim.spec.sigma()), 4.0);
    apply_override(doc, "model.alpha=20");
    auto w = parse_config(doc).warnings;
    EXPECT_FALSE(contains(w, "6d + 1/2"));
    EXPECT_TRUE(contains(w, "(6d+1) d sigma_d^2 / 3 = " + fmt(need)));
    apply_override(doc, "model.alpha=35");
    EXPECT_TRUE(parse_config(doc).warnings.empty());
}

TEST(Warnings, InitialGapBelowEpsilon) {
    Json doc = base_doc();
    apply_override(doc, "sim.epsilon=0.5");
    apply_override(doc, "model.x0=[0,0.4]");
    EXPECT_TRUE(contains(parse_config(doc).warnings, "mollifier is active"));
}

TEST(Prepare, InverseMomentRangeNeedsForce) {
    Json doc = base_doc();
    apply_override(doc, "experiment={\"name\":\"inverse-moment\",\"q\":0.6,\"times\":[0.5]}");
    auto cfg = parse_config(doc);
    try {
        prepare_experiment(cfg, false);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ConfigInvalid);
        EXPECT_NE(std::string(e.what()).find("--force"), std::string::npos);
    }
    auto forced = parse_config(doc);
    prepare_experiment(forced, true);
    EXPECT_TRUE(contains(forced.warnings, "alpha - 1/2"));
    EXPECT_EQ(forced.document["experiment"]["refine_levels"], 1);
}

TEST(Prepare, ExperimentSpecificConstraints) {
    const auto invalid = [](const std::string& experiment, const std::string& extra = "") {
        Json doc = base_doc();
        apply_override(doc, "experiment=" + experiment);
        if (!extra.empty()) apply_override(doc, extra);
        auto cfg = parse_config(doc);
        EXPECT_THROW(prepare_experiment(cfg), Error) << experiment << " " << extra;
    };
    invalid(R"({"name":"girsanov"})");  // base alpha must be 1/2
    invalid(R"({"name":"girsanov","target_alpha":0.2})", "model.alpha=0.5");
    invalid(R"({"name":"girsanov","form":"other"})", "model.alpha=0.5");
    invalid(R"({"name":"inverse-moment","times":[0.123]})");
    invalid(R"({"name":"inverse-moment","times":[2.0]})");
    invalid(R"({"name":"inverse-moment","pair":[1,1]})");
    invalid(R"({"name":"inverse-moment","pair":[1,3]})");
    invalid(R"({"name":"oracle-compare"})", "model.alpha=2");
    invalid(R"({"name":"oracle-compare","min_pass":6})");
    invalid(R"({"name":"oracle-compare","ensemble":"symplectic"})");
    invalid(R"({"name":"simulate","kde":3})");
}

TEST(Prepare, SeedDefaultsAreRecorded) {
    Json doc = base_doc();
    apply_override(doc, "model.alpha=0.5");
    apply_override(doc, "experiment={\"name\":\"girsanov\"}");
    auto cfg = parse_config(doc);
    prepare_experiment(cfg);
    EXPECT_EQ(cfg.document["experiment"]["direct_seed"], 4);
    EXPECT_EQ(cfg.document["experiment"]["form"], "sde-mollified");
}

TEST(Manifest, GitBlobHash) {
    EXPECT_EQ(git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Csv, QuotingRoundTrips) {
    std::ostringstream os;
    CsvWriter(os).cell("plain").cell("a,b").cell("say \"hi\"").cell(0.1).end();
    EXPECT_EQ(os.str(), "plain,\"a,b\",\"say \"\"hi\"\"\",0.1\n");
    std::string line = os.str();
    line.pop_back();
    EXPECT_EQ(split_csv_row(line), (std::vector<std::string>{"plain", "a,b", "say \"hi\"", "0.1"}));
    EXPECT_THROW(split_csv_row("\"open"), Error);
}

TEST(Catalog, SixExperimentsRoundTripThroughCsv) {
    EXPECT_EQ(experiment_catalog().size(), 6u);
    std::stringstream ss;
    write_catalog_csv(ss);
    const auto rows = read_catalog_csv(ss);
    ASSERT_EQ(rows.size(), 6u);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& e = experiment_catalog()[i];
        EXPECT_EQ(rows[i].name, e.name);
        EXPECT_EQ(rows[i].required_keys, e.required_keys);
        EXPECT_EQ(rows[i].module, e.module);
        EXPECT_EQ(rows[i].operation, e.operation);
        EXPECT_EQ(rows[i].verifies, e.verifies);
        EXPECT_EQ(rows[i].name, experiment_names()[i]);
    }
    EXPECT_EQ(experiment_info("verify-malliavin").operation, "duality_check");
    EXPECT_EQ(experiment_info("girsanov").module, "girsanov");
}

TEST(Cli, ListExperiments) {
    const auto table = cli({"list-experiments"});
    EXPECT_EQ(table.code, 0);
    for (const auto& name : experiment_names()) EXPECT_NE(table.out.find(name), std::string::npos);
    const auto csv = cli({"list-experiments", "--format", "csv"});
    EXPECT_EQ(csv.code, 0);
    std::istringstream is(csv.out);
    EXPECT_EQ(read_catalog_csv(is).size(), 6u);
    EXPECT_EQ(cli({"list-experiments", "--format", "xml"}).code, kExitInvalid);
}

TEST(Cli, UsageAndIoErrors) {
    EXPECT_EQ(cli({}).code, kExitInvalid);
    EXPECT_EQ(cli({"run"}).code, kExitInvalid);
    EXPECT_EQ(cli({"--help"}).code, kExitOk);
    const auto missing = cli({"run", "/nonexistent/config.json"});
    EXPECT_EQ(missing.code, kExitFailure);
    EXPECT_NE(missing.err.find("IoError"), std::string::npos);

    const auto dir = scratch("badjson");
    std::ofstream(dir / "bad.json") << "{ not json";
    EXPECT_EQ(cli({"run", (dir / "bad.json").string()}).code, kExitInvalid);
}

TEST(Cli, OrderingViolationExitsTwo) {
    const auto dir = scratch("unordered");
    Json doc = base_doc();
    apply_override(doc, "model.x0=[1,0]");
    const auto r = cli({"run", write_config(dir, doc).string(), "--out", (dir / "out").string()});
    EXPECT_EQ(r.code, kExitInvalid);
    EXPECT_NE(r.err.find("strict ordering"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "out" / "manifest.json"));
}

TEST(Cli, SimulateWritesReportsAndManifest) {
    const auto dir = scratch("simulate");
    Json doc = base_doc();
    apply_override(doc, "experiment.save_paths=1");
    apply_override(doc, "output.formats=[\"csv\",\"binary\"]");
    const auto out = dir / "out";
    const auto r = cli({"run", write_config(dir, doc, "moments.json").string(), "--check", "--out", out.string()});
    ASSERT_EQ(r.code, kExitOk) << r.out << r.err;
    for (const char* f : {"terminal.csv", "terminal.bin", "moments.csv", "kde_x1.csv", "kde_x2.csv", "path_0.csv",
                          "checks.csv", "manifest.json"})
        EXPECT_TRUE(fs::exists(out / f)) << f;

    const Json m = Json::parse(read_file(out / "manifest.json"));
    EXPECT_EQ(m["experiment"], "simulate");
    EXPECT_EQ(m["seed"], 3);
    EXPECT_EQ(m["config"]["id"], "moments");
    EXPECT_EQ(m["config"]["output"]["dir"], out.string());
    EXPECT_EQ(m["config_sha1"], git_blob_sha1(m["config"].dump(2)));
    EXPECT_EQ(m["threads"], thread_count());
    for (const auto& o : m["outputs"])
        EXPECT_EQ(o["sha1"], git_blob_sha1(read_file(out / o["file"].get<std::string>()))) << o["file"];

    std::ifstream bin(out / "terminal.bin", std::ios::binary);
    const auto terminal = read_batch(bin);
    EXPECT_EQ(terminal.rows(), 200);
    EXPECT_EQ(terminal.cols(), 2);
    const std::string csv = read_file(out / "terminal.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "sample_id,x1,x2");
}

TEST(Cli, ReplayFromManifestIsBitwiseIdentical) {
    const auto dir = scratch("replay");
    const auto cfg = write_config(dir, base_doc());
    const auto a = cli({"run", cfg.string(), "--set", "sim.seed=7", "--out", (dir / "a").string()});
    ASSERT_EQ(a.code, 0) << a.err;
    const Json ma = Json::parse(read_file(dir / "a" / "manifest.json"));
    EXPECT_EQ(ma["seed"], 7);

    // Re-run from the resolved config stored in the manifest.
    Json resolved = ma["config"];
    resolved["output"]["dir"] = (dir / "b").string();
    const auto b = cli({"run", write_config(dir, resolved, "replay.json").string()});
    ASSERT_EQ(b.code, 0) << b.err;
    const Json mb = Json::parse(read_file(dir / "b" / "manifest.json"));
    ASSERT_EQ(ma["outputs"].size(), mb["outputs"].size());
    for (std::size_t i = 0; i < ma["outputs"].size(); ++i) {
        const auto f = ma["outputs"][i]["file"].get<std::string>();
        EXPECT_EQ(read_file(dir / "a" / f), read_file(dir / "b" / f)) << f;
        EXPECT_EQ(ma["outputs"][i]["sha1"], mb["outputs"][i]["sha1"]);
    }
}

TEST(Cli, FailedCheckExitsThreeOnlyInCheckMode) {
    const auto dir = scratch("failcheck");
    Json doc = base_doc();
    apply_override(doc, "experiment={\"name\":\"inverse-moment\",\"q\":0.4,\"times\":[0.5],\"tolerance\":1e-15}");
    const auto cfg = write_config(dir, doc);
    const auto strict = cli({"run", cfg.string(), "--check", "--out", (dir / "a").string()});
    EXPECT_EQ(strict.code, kExitCheckFailed) << strict.out << strict.err;
    EXPECT_NE(strict.out.find("FAIL refinement_stability"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "a" / "manifest.json"));
    const auto lax = cli({"run", cfg.string(), "--out", (dir / "b").string()});
    EXPECT_EQ(lax.code, kExitOk);
}

TEST(Cli, InverseMomentForceFlag) {
    const auto dir = scratch("force");
    Json doc = base_doc();
    apply_override(doc, "experiment={\"name\":\"inverse-moment\",\"q\":0.7,\"times\":[0.5]}");
    const auto cfg = write_config(dir, doc);
    EXPECT_EQ(cli({"run", cfg.string(), "--out", (dir / "a").string()}).code, kExitInvalid);
    const auto forced = cli({"run", cfg.string(), "--force", "--out", (dir / "b").string()});
    EXPECT_EQ(forced.code, kExitOk) << forced.err;
    EXPECT_NE(forced.err.find("warning:"), std::string::npos);
    const Json m = Json::parse(read_file(dir / "b" / "manifest.json"));
    EXPECT_EQ(m["force"], true);
}

TEST(Experiments, IdentitiesAndMalliavinPassOnSmallConfigs) {
    const auto dir = scratch("small");
    Json ident = base_doc();
    apply_override(ident, "experiment={\"name\":\"verify-identities\",\"samples\":200,\"scan_points\":2001}");
    apply_override(ident, "model.x0=[0,1,2]");
    EXPECT_EQ(cli({"run", write_config(dir, ident, "i.json").string(), "--check", "--out", (dir / "i").string()}).code,
              0);

    Json mall = base_doc();
    apply_override(mall, "experiment={\"name\":\"verify-malliavin\"}");
    apply_override(mall, "sim.n_paths=8");
    apply_override(mall, "sim.n_steps=400");
    const auto r = cli({"run", write_config(dir, mall, "m.json").string(), "--check", "--out", (dir / "m").string()});
    EXPECT_EQ(r.code, 0) << r.out;
    const std::string dual = read_file(dir / "m" / "duality.csv");
    EXPECT_EQ(dual.substr(0, dual.find('\n')), "config_id,seed,t,max_residual,flag_mollified");
    const std::string bounds = read_file(dir / "m" / "bounds.csv");
    EXPECT_EQ(bounds.substr(0, bounds.find('\n')), "config_id,max_norm_ratio,max_eig_ratio");
}
