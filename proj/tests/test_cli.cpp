#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("pcs_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  Outcome run(const std::string& args) const {
    const std::string cmd = std::string(PCS_CLI_PATH) + " " + args + " >" + path("stdout").string() + " 2>" +
                            path("stderr").string();
    const int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(path("stdout"));
    r.err = slurp(path("stderr"));
    return r;
  }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
    return path(name);
  }

  fs::path tiny_config() const {
    return write("tiny.json",
                 R"({"seed": 3, "classes": 4, "train_samples": 64, "val_samples": 32, "image_size": 8, "noise": 0.5,
                     "lambda_base": 1.0, "t_max": 3, "fine_tune_epochs": 1, "batch_size": 16})");
  }

  fs::path dir_;
};

std::size_t line_count(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  const Outcome unknown = run("frobnicate");
  EXPECT_EQ(unknown.code, 2);
  EXPECT_NE(unknown.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run("cost resnet18 --bogus").code, 2);
  EXPECT_EQ(run("compact").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, CostOfBuiltinGraph) {
  const Outcome r = run("cost resnet18");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("MAdds 1.8G"), std::string::npos) << r.out;
  const Outcome j = run("cost vgg16 --json");
  ASSERT_EQ(j.code, 0);
  const auto parsed = nlohmann::json::parse(j.out);
  EXPECT_EQ(parsed.at("graph"), "vgg16");
}

TEST_F(Cli, MalformedGraphNamesTheNode) {
  const auto cfg = tiny_config().string();
  ASSERT_EQ(run("train " + cfg + " --checkpoint " + path("m.ckpt").string()).code, 0);
  ASSERT_EQ(run("compact " + path("m.ckpt").string() + " --out " + path("c.ckpt").string() + " --graph " +
                path("g.json").string())
                .code,
            0);
  auto graph = nlohmann::json::parse(slurp(path("g.json")));
  ASSERT_GE(graph.at("nodes").size(), 3u);
  graph["nodes"][2]["c_in"] = 999;
  const std::string name = graph["nodes"][2]["name"];
  const Outcome r = run("cost " + write("bad.json", graph.dump()).string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find(name), std::string::npos) << r.err;
  EXPECT_EQ(line_count(r.err), 1u) << r.err;
}

TEST_F(Cli, FailureIsOneLine) {
  const Outcome r = run("train " + write("bad.json", R"({"mode": "telepathy"})").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(line_count(r.err), 1u) << r.err;
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u);
}

TEST_F(Cli, TrainCompactEvalPipeline) {
  const auto cfg = tiny_config().string();
  const auto metrics = path("metrics.csv").string(), ckpt = path("model.ckpt").string();
  const Outcome t = run("train " + cfg + " --metrics " + metrics + " --checkpoint " + ckpt + " --salience " +
                    path("salience.csv").string());
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(slurp(metrics).rfind("epoch,split,task_loss,shrink_loss,accuracy,lambda,", 0), 0u);
  EXPECT_TRUE(fs::exists(path("salience.csv")));

  const auto compacted = path("compact.ckpt").string(), plan = path("plan.json").string(),
             graph = path("graph.json").string();
  const Outcome c = run("compact " + ckpt + " --out " + compacted + " --plan " + plan + " --graph " + graph);
  ASSERT_EQ(c.code, 0) << c.err;

  const Outcome e1 = run("eval " + ckpt + " " + cfg + " --predictions " + path("p1.csv").string());
  const Outcome e2 = run("eval " + compacted + " " + cfg + " --json --predictions " + path("p2.csv").string());
  ASSERT_EQ(e1.code, 0) << e1.err;
  ASSERT_EQ(e2.code, 0) << e2.err;
  EXPECT_EQ(slurp(path("p1.csv")), slurp(path("p2.csv")));
  EXPECT_NO_THROW(nlohmann::json::parse(e2.out));

  const Outcome pruned = run("cost " + graph + " --plan " + plan + " --json");
  ASSERT_EQ(pruned.code, 0) << pruned.err;
  EXPECT_TRUE(nlohmann::json::parse(pruned.out).contains("pruned_total"));

  // Same config twice: identical metrics and compacted bytes.
  const Outcome again = run("train " + cfg + " --metrics " + path("m2.csv").string() + " --checkpoint " +
                        path("model2.ckpt").string());
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(slurp(metrics), slurp(path("m2.csv")));
  ASSERT_EQ(run("compact " + path("model2.ckpt").string() + " --out " + path("compact2.ckpt").string()).code, 0);
  EXPECT_EQ(slurp(compacted), slurp(path("compact2.ckpt")));
}

TEST_F(Cli, CompactRejectsUnknownMode) {
  const auto cfg = tiny_config().string();
  ASSERT_EQ(run("train " + cfg + " --checkpoint " + path("m.ckpt").string()).code, 0);
  EXPECT_EQ(run("compact " + path("m.ckpt").string() + " --out x --mode sparse").code, 2);
}

TEST_F(Cli, AblateWritesReport) {
  const auto cfg = write("abl.json", R"({"seed": 3, "classes": 4, "train_samples": 64, "val_samples": 32,
    "image_size": 8, "lambda_base": 1.0, "t_max": 2, "fine_tune_epochs": 0, "batch_size": 16})");
  const Outcome r = run("ablate " + cfg.string() + " --out " + path("report.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("input-dependent"), std::string::npos);
  const auto report = nlohmann::json::parse(slurp(path("report.json")));
  EXPECT_EQ(report.at("modes").size(), 4u);
}
