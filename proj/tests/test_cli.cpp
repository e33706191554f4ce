#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "proker/cli.hpp"
#include "proker/container.hpp"
#include "proker/harness.hpp"
#include "scratch.hpp"

using namespace proker;

namespace {

struct CliRun {
  int code = -1;
  std::string out, err;
};

CliRun run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::size_t line_count(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

struct Files {
  std::string support, query, validation, text, pool;
};

// A 10-class task written to disk, with a pool file for manifests.
Files write_task(const std::string& tag, int shots = 4) {
  const ClassificationPool pool = make_classification_pool({}, 11);
  const TextClassifier text = corrupt_text(pool.text, 0.2, 11);
  const FewShotTask task = sample_task(pool.pool, text, shots, 1.0, 11, 0.3);
  Files f{scratch(tag + "_support.fsf"), scratch(tag + "_query.fsf"), scratch(tag + "_val.fsf"),
          scratch(tag + "_text.fsf"), scratch(tag + "_pool.fsf")};
  save_featureset(task.support, f.support);
  save_featureset(task.query, f.query);
  save_featureset(*task.validation, f.validation);
  save_text_classifier(text, f.text);
  save_featureset(pool.pool, f.pool);
  return f;
}

std::string write_text_file(const std::string& name, const std::string& body) {
  const auto path = scratch(name);
  std::ofstream(path) << body;
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(CliEval, ZeroShotWritesOneRow) {
  const Files f = write_task("zs");
  const CliRun r = run_cli({"eval", "--support", f.support, "--query", f.query, "--text", f.text, "--method", "zeroshot"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(line_count(r.out), 2u);
  EXPECT_EQ(r.out.rfind("method,kernel,lambda,beta,alpha,shots,seed,score,wall_ms\nzeroshot,none,", 0), 0u);
}

TEST(CliEval, JsonOutputToFile) {
  const Files f = write_task("ej");
  const auto out = scratch("eval.json");
  const CliRun r = run_cli({"eval", "--support", f.support, "--query", f.query, "--text", f.text, "--method", "proker",
                     "--lambda", "0.1", "--out", out});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const EvalReport rep = load_report_json(out);
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.rows[0].method, "proker");
  EXPECT_EQ(rep.rows[0].shots, 4);
  EXPECT_GT(rep.rows[0].beta, 0.0);
}

TEST(CliEval, MissingRequiredFlag) {
  const Files f = write_task("miss");
  const CliRun r = run_cli({"eval", "--query", f.query, "--text", f.text, "--method", "nw"});
  EXPECT_EQ(r.code, cli::kExitInput);
  EXPECT_NE(r.err.find("--support"), std::string::npos);
  EXPECT_NE(r.err.find("--help"), std::string::npos);
}

TEST(CliEval, ZeroLambdaForProker) {
  const Files f = write_task("lam");
  const CliRun r = run_cli({"eval", "--support", f.support, "--query", f.query, "--text", f.text, "--method", "proker",
                     "--lambda", "0"});
  EXPECT_EQ(r.code, cli::kExitInput);
  EXPECT_NE(r.err.find("lambda must be positive for proker"), std::string::npos) << r.err;
}

TEST(CliEval, UnknownFlagAndMethod) {
  const Files f = write_task("unk");
  EXPECT_EQ(run_cli({"eval", "--support", f.support, "--query", f.query, "--text", f.text, "--method", "nw",
                 "--bogus", "1"}).code,
            cli::kExitInput);
  EXPECT_EQ(run_cli({"eval", "--support", f.support, "--query", f.query, "--text", f.text, "--method", "svm"}).code,
            cli::kExitInput);
  EXPECT_EQ(run_cli({}).code, cli::kExitInput);
}

TEST(CliEval, MissingFileIsInputError) {
  const Files f = write_task("nofile");
  const CliRun r = run_cli({"eval", "--support", scratch("absent.fsf"), "--query", f.query, "--text", f.text,
                     "--method", "nw"});
  EXPECT_EQ(r.code, cli::kExitInput);
  EXPECT_NE(r.err.find("IoError"), std::string::npos) << r.err;
}

TEST(CliEval, SingularCovarianceIsNumerical) {
  const Files f = write_task("sing", 1);
  const CliRun r = run_cli({"eval", "--support", f.support, "--query", f.query, "--text", f.text, "--method", "nw",
                     "--kernel-json", R"({"family":"rbf","metric":"mahalanobis","shrinkage":0.1})"});
  EXPECT_EQ(r.code, cli::kExitNumerical) << r.err;
}

TEST(CliEval, SaveModelThenCompress) {
  const Files f = write_task("cmp", 8);
  const auto model = scratch("cmp.pkm");
  ASSERT_EQ(run_cli({"eval", "--support", f.support, "--query", f.query, "--text", f.text, "--method", "proker",
                 "--lambda", "0.1", "--save-model", model, "--out", scratch("cmp.csv")}).code,
            cli::kExitOk);
  const auto proto = scratch("cmp.proto");
  const CliRun r = run_cli({"compress", "--model", model, "--rff", "32", "--seed", "3", "--out", proto});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_LE(j["parity_max_abs"].get<double>(), 1e-9);
  EXPECT_LT(j["bytes_after"].get<std::size_t>(), j["bytes_before"].get<std::size_t>());
  EXPECT_EQ(j["numbers_after"], 10 * (16 + 32));
  EXPECT_NO_THROW(load_prototype_model(proto));
  EXPECT_EQ(run_cli({"eval", "--support", f.support, "--query", f.query, "--text", f.text, "--method", "nw",
                 "--save-model", model}).code,
            cli::kExitInput);
}

TEST(CliSweep, SingleConfigGridIsSelected) {
  const Files f = write_task("sw");
  const auto grid = write_text_file(
      "grid1.json", R"({"methods":["proker"],"lambdas":[0.1],"betas":[1.0],"alphas":[1.0]})");
  const auto manifest = write_text_file(
      "manifest1.json", R"({"tasks":[{"name":"a","support":")" + f.support + R"(","query":")" + f.query +
                            R"(","validation":")" + f.validation + R"(","text":")" + f.text + R"("}]})");
  const auto out = scratch("sweep1.csv");
  const CliRun r = run_cli({"sweep", "--grid", grid, "--tasks", manifest, "--out", out});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(line_count(slurp(out)), 2u);
  const auto sel = nlohmann::json::parse(slurp(scratch("selected.json")));
  EXPECT_EQ(sel["tasks"][0]["methods"][0]["method"], "proker");
  EXPECT_EQ(sel["tasks"][0]["methods"][0]["lambda"], 0.1);
}

TEST(CliSweep, TransferNeedsAnchor) {
  const Files f = write_task("tr");
  const auto grid = write_text_file("grid2.json", R"({"methods":["nw"],"lambdas":[0.1,1.0]})");
  const auto manifest = write_text_file(
      "manifest2.json", R"({"tasks":[{"name":"p","pool":")" + f.pool + R"(","text":")" + f.text +
                            R"(","shots":2,"validation_fraction":0.3}]})");
  const CliRun r = run_cli({"sweep", "--grid", grid, "--tasks", manifest, "--protocol", "transfer", "--out",
                     scratch("tr.csv")});
  EXPECT_EQ(r.code, cli::kExitInput);
  EXPECT_NE(r.err.find("MissingAnchor"), std::string::npos) << r.err;
  const CliRun ok = run_cli({"sweep", "--grid", grid, "--tasks", manifest, "--protocol", "transfer", "--anchor", "p",
                      "--out", scratch("tr.csv"), "--selected", scratch("tr_sel.json")});
  EXPECT_EQ(ok.code, cli::kExitOk) << ok.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(scratch("tr_sel.json")))["anchor"], "p");
}

TEST(CliSweep, RerunIsDeterministic) {
  const Files f = write_task("det");
  const auto grid = write_text_file("grid3.json", R"({"methods":["tip","proker"],"lambdas":[0.1,1],"betas":[1,2],"alphas":[1]})");
  const auto manifest = write_text_file(
      "manifest3.json", R"({"tasks":[{"pool":")" + f.pool + R"(","text":")" + f.text +
                            R"(","shots":2,"validation_fraction":0.3,"seed":5}]})");
  const auto a = scratch("det_a.json"), b = scratch("det_b.json");
  ASSERT_EQ(run_cli({"sweep", "--grid", grid, "--tasks", manifest, "--out", a}).code, cli::kExitOk);
  ASSERT_EQ(run_cli({"sweep", "--grid", grid, "--tasks", manifest, "--out", b}).code, cli::kExitOk);
  EvalReport ra = load_report_json(a), rb = load_report_json(b);
  ASSERT_EQ(ra.rows.size(), 2u);
  for (auto* rep : {&ra, &rb}) {
    for (auto& row : rep->rows) row.wall_ms = 0;
  }
  EXPECT_EQ(ra, rb);
}

TEST(CliSynth, DefaultMethodsOneRowPerSeed) {
  const CliRun r = run_cli({"synth", "--seeds", "3"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(line_count(r.out), 1u + 3u * 3u);
}

TEST(CliSynth, ZeroSeedsRejected) {
  const CliRun r = run_cli({"synth", "--seeds", "0"});
  EXPECT_EQ(r.code, cli::kExitInput);
}

TEST(CliSynth, AssertOrdering) {
  const CliRun ok = run_cli({"synth", "--assert-ordering", "--out", scratch("synth.csv")});
  EXPECT_EQ(ok.code, cli::kExitOk) << ok.out << ok.err;
  EXPECT_NE(ok.out.find("method,mean_mse"), std::string::npos);
  EXPECT_NE(ok.out.find("PASS"), std::string::npos);
  // a flat zero curve: every method ties, so no strict wins
  const CliRun flat = run_cli({"synth", "--assert-ordering", "--seeds", "3", "--spec",
                        R"({"amplitude":0,"noise":0})"});
  EXPECT_EQ(flat.code, cli::kExitAssertion) << flat.err;
  EXPECT_NE(flat.out.find("FAIL"), std::string::npos);
}

TEST(CliSynth, WritesTaskFiles) {
  const auto dir = scratch("synth_dir");
  ASSERT_EQ(run_cli({"synth", "--seeds", "1", "--seed", "4", "--out-dir", dir, "--out", scratch("s.csv")}).code,
            cli::kExitOk);
  const FeatureSet support = load_featureset(dir / "seed4_support.fsf");
  EXPECT_EQ(support.rows(), 16);
  EXPECT_EQ(support.metadata["targets"].size(), 16u);
  EXPECT_NO_THROW(load_text_classifier(dir / "seed4_base.fsf"));
}

TEST(CliInspect, PrintsHeader) {
  const Files f = write_task("ins");
  const CliRun r = run_cli({"inspect", f.support});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["rows"], 40);
  EXPECT_EQ(j["dim"], 16);
  EXPECT_EQ(j["metadata"]["num_classes"], 10);
  EXPECT_TRUE(j.contains("flags"));

  const auto junk = write_text_file("junk.fsf", "not a feature file");
  const CliRun bad = run_cli({"inspect", junk});
  EXPECT_EQ(bad.code, cli::kExitInput);
  EXPECT_NE(bad.err.find("BadMagic"), std::string::npos) << bad.err;
}
