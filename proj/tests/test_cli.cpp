#include <gtest/gtest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("rfcn_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args) const {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(RFCN_CLI_PATH) + " " + args + " > " +
                            (dir_ / "stdout.txt").string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(err);
    return r;
  }

  std::string write_config(const std::string& name, const json& j) const {
    const fs::path p = dir_ / name;
    std::ofstream(p) << j.dump();
    return p.string();
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  static json small_config() {
    return json{{"stage_widths", {8, 8}}, {"reduce_width", 8},  {"image_size", 48},
                {"n_proposals", 32},      {"batch_rois", 16},   {"lr_schedule", {{{"steps", 3}, {"lr", 0.01}}, {{"steps", 3}, {"lr", 0.001}}}}};
  }

  fs::path dir_;
};

bool one_error_line(const std::string& err) {
  return err.rfind("error: ", 0) == 0 && err.find('\n') == err.size() - 1;
}

}  // namespace

TEST_F(CliTest, TrainZeroStepsWritesInitialCheckpointOnly) {
  const std::string cfg = write_config("c.json", small_config());
  const Result r = run("train --steps 0 --config " + cfg + " --out " + (dir_ / "run").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "run" / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "config.json"));
  EXPECT_EQ(slurp(dir_ / "run" / "train_log.csv"), "step,loss,lr\n");
}

TEST_F(CliTest, TrainIsByteDeterministic) {
  const std::string cfg = write_config("c.json", small_config());
  ASSERT_EQ(run("train --seed 4 --config " + cfg + " --out " + (dir_ / "a").string()).code, 0);
  ASSERT_EQ(run("train --seed 4 --config " + cfg + " --out " + (dir_ / "b").string()).code, 0);
  ASSERT_EQ(run("train --seed 5 --config " + cfg + " --out " + (dir_ / "c").string()).code, 0);
  const std::string a = slurp(dir_ / "a" / "checkpoint.bin");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir_ / "b" / "checkpoint.bin"));
  EXPECT_NE(a, slurp(dir_ / "c" / "checkpoint.bin"));
  EXPECT_EQ(slurp(dir_ / "a" / "train_log.csv"), slurp(dir_ / "b" / "train_log.csv"));
}

TEST_F(CliTest, LogFollowsSchedule) {
  const std::string cfg = write_config("c.json", small_config());
  ASSERT_EQ(run("train --config " + cfg + " --out " + (dir_ / "run").string()).code, 0);
  std::ifstream log(dir_ / "run" / "train_log.csv");
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, "step,loss,lr");
  std::vector<double> lrs;
  while (std::getline(log, line)) {
    std::stringstream ss(line);
    std::string step, loss, lr;
    std::getline(ss, step, ',');
    std::getline(ss, loss, ',');
    std::getline(ss, lr, ',');
    EXPECT_EQ(std::stoul(step), lrs.size());
    lrs.push_back(std::stod(lr));
  }
  EXPECT_EQ(lrs, (std::vector<double>{0.01, 0.01, 0.01, 0.001, 0.001, 0.001}));
}

TEST_F(CliTest, ConfigIsStrict) {
  json bad = small_config();
  bad["learning_rate"] = 0.1;
  const Result r = run("train --steps 0 --config " + write_config("bad.json", bad) + " --out " +
                       (dir_ / "run").string());
  EXPECT_NE(r.code, 0);
  EXPECT_TRUE(one_error_line(r.err)) << r.err;
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos);

  json wrong_type = small_config();
  wrong_type["k"] = "three";
  const Result t = run("train --steps 0 --config " + write_config("t.json", wrong_type) +
                       " --out " + (dir_ / "run").string());
  EXPECT_NE(t.code, 0);
  EXPECT_TRUE(one_error_line(t.err)) << t.err;
}

TEST_F(CliTest, UnwritableOutputFailsBeforeTraining) {
  const fs::path blocker = dir_ / "file";
  std::ofstream(blocker) << "x";
  const Result r = run("train --steps 2 --out " + (blocker / "sub").string());
  EXPECT_NE(r.code, 0);
  EXPECT_TRUE(one_error_line(r.err)) << r.err;
}

TEST_F(CliTest, BadFlagsGiveOneLineError) {
  const Result r = run("train --k notanumber");
  EXPECT_NE(r.code, 0);
  EXPECT_TRUE(one_error_line(r.err)) << r.err;
  const Result none = run("");
  EXPECT_NE(none.code, 0);
  EXPECT_TRUE(one_error_line(none.err)) << none.err;
}

TEST_F(CliTest, EvalUntrainedAndOracle) {
  const fs::path out = dir_ / "eval";
  ASSERT_EQ(run("eval --n-scenes 20 --out " + out.string()).code, 0);
  const json m = json::parse(slurp(out / "metrics.json"));
  EXPECT_LT(m["mean_ap"].get<double>(), 0.1);
  EXPECT_EQ(slurp(out / "detections.csv").rfind("image_id,class,score,x0,y0,w,h\n", 0), 0u);

  ASSERT_EQ(run("eval --oracle --n-scenes 20 --out " + (dir_ / "oracle").string()).code, 0);
  const json o = json::parse(slurp(dir_ / "oracle" / "metrics.json"));
  EXPECT_DOUBLE_EQ(o["mean_ap"].get<double>(), 1.0);
}

TEST_F(CliTest, EvalIsIdempotent) {
  const std::string cfg = write_config("c.json", small_config());
  ASSERT_EQ(run("train --config " + cfg + " --out " + (dir_ / "run").string()).code, 0);
  const std::string ckpt = (dir_ / "run" / "checkpoint.bin").string();
  const fs::path out = dir_ / "eval";
  ASSERT_EQ(run("eval --n-scenes 5 --checkpoint " + ckpt + " --out " + out.string()).code, 0);
  const std::string first = slurp(out / "detections.csv");
  ASSERT_EQ(run("eval --n-scenes 5 --checkpoint " + ckpt + " --out " + out.string()).code, 0);
  EXPECT_EQ(first, slurp(out / "detections.csv"));
}

TEST_F(CliTest, VisualizeZeroBanksIsGrayAndDeterministic) {
  ASSERT_EQ(run("train --steps 0 --out " + (dir_ / "run").string()).code, 0);
  const std::string ckpt = (dir_ / "run" / "checkpoint.bin").string();
  ASSERT_EQ(run("visualize --seed 3 --checkpoint " + ckpt + " --out " + (dir_ / "v1").string()).code, 0);
  ASSERT_EQ(run("visualize --seed 3 --checkpoint " + ckpt + " --out " + (dir_ / "v2").string()).code, 0);
  int maps = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "v1")) {
    const std::string name = e.path().filename().string();
    EXPECT_EQ(slurp(e.path()), slurp(dir_ / "v2" / name)) << name;
    if (name.rfind("map_", 0) != 0) continue;
    ++maps;
    const std::string bytes = slurp(e.path());
    const std::string header = "P6\n96 96\n255\n";
    ASSERT_EQ(bytes.rfind(header, 0), 0u);
    for (std::size_t i = header.size(); i < bytes.size(); ++i) ASSERT_EQ(bytes[i], char(128));
  }
  EXPECT_EQ(maps, 9);
  EXPECT_TRUE(fs::exists(dir_ / "v1" / "overlay.ppm"));
}

TEST_F(CliTest, VisualizeRejectsBadRoi) {
  ASSERT_EQ(run("train --steps 0 --out " + (dir_ / "run").string()).code, 0);
  const Result r = run("visualize --roi 0 0 -4 5 --checkpoint " +
                       (dir_ / "run" / "checkpoint.bin").string() + " --out " + (dir_ / "v").string());
  EXPECT_NE(r.code, 0);
  EXPECT_TRUE(one_error_line(r.err)) << r.err;
}

TEST_F(CliTest, BenchWritesReports) {
  const fs::path out = dir_ / "bench";
  ASSERT_EQ(run("bench --variant psroi_head --n-values 10,20 --reps 10 --out " + out.string()).code, 0);
  std::ifstream csv(out / "bench.csv");
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 3);
  EXPECT_TRUE(fs::exists(out / "bench.md"));
  const Result r = run("bench --variant psroi_head --n-values 10 --reps 3 --out " + out.string());
  EXPECT_NE(r.code, 0);
  EXPECT_TRUE(one_error_line(r.err)) << r.err;
}

TEST_F(CliTest, ExportDataset) {
  const fs::path out = dir_ / "data";
  ASSERT_EQ(run("export-dataset --n-scenes 3 --classes 2 --seed 9 --out " + out.string()).code, 0);
  for (int i = 0; i < 3; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d.ppm", i);
    EXPECT_TRUE(fs::exists(out / name));
  }
  const std::string gt = slurp(out / "ground_truth.csv");
  EXPECT_EQ(gt.rfind("image_id,class,x0,y0,w,h\n", 0), 0u);
  EXPECT_GT(std::count(gt.begin(), gt.end(), '\n'), 3);
}
