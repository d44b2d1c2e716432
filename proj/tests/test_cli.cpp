#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>

#include "support.hpp"

#ifndef FLOWDISTILL_CLI
#error "FLOWDISTILL_CLI must name the flowdistill executable"
#endif

namespace fs = std::filesystem;
using testing_support::read_file;

namespace {

constexpr const char* kTinyConfig = R"({
  "seed": 5,
  "model": {"d": 1, "hidden": 16, "blocks": 2},
  "teacher": {"iterations": 60, "batch_size": 64, "lr": 0.003},
  "store": {"count": 48, "steps": 10},
  "distill": {"m": 2, "traj_batch": 16, "adv_batch": 8, "queue_capacity": 8, "rounds": 4},
  "checkpoint_every": 1,
  "kd": {"windows": 2, "pool_size": 32, "iterations": 5, "batch_size": 16},
  "analysis": {"t_samples": 32, "mismatch": [0, 2], "seeds": [1], "eval_samples": 32}
})";

struct CliRun {
  int code;
  std::string output;
};

class CliTest : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    dir = testing_support::scratch_dir(std::string("cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::ofstream(dir / "config.json") << kTinyConfig;
  }

  CliRun run(const std::string& args) const {
    const auto log = dir / "log.txt";
    const std::string cmd = std::string("\"") + FLOWDISTILL_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(log)};
  }

  std::string common(const std::string& out) const {
    return "--config \"" + (dir / "config.json").string() + "\" --out \"" + (dir / out).string() + "\"";
  }

  // Teacher and store in <dir>/base.
  void prepare() const {
    ASSERT_EQ(run("train-teacher " + common("base")).code, 0);
    ASSERT_EQ(run("synth " + common("base") + " --teacher \"" + (dir / "base/teacher.json").string() + "\"").code, 0);
  }

  std::string distill_args(const std::string& out) const {
    return "distill " + common(out) + " --teacher \"" + (dir / "base/teacher.json").string() + "\" --store \"" +
           (dir / "base/store.jsonl").string() + "\"";
  }
};

}  // namespace

TEST_F(CliTest, SameSeedSameBytes) {
  ASSERT_EQ(run("train-teacher " + common("a")).code, 0);
  ASSERT_EQ(run("train-teacher " + common("b")).code, 0);
  EXPECT_EQ(read_file(dir / "a/teacher.json"), read_file(dir / "b/teacher.json"));
  EXPECT_EQ(read_file(dir / "a/teacher_loss.csv"), read_file(dir / "b/teacher_loss.csv"));
  ASSERT_EQ(run("train-teacher " + common("c") + " --seed 6").code, 0);
  EXPECT_NE(read_file(dir / "a/teacher.json"), read_file(dir / "c/teacher.json"));
}

TEST_F(CliTest, FullPipelineAndInputsUntouched) {
  prepare();
  const std::string teacher = read_file(dir / "base/teacher.json");
  const std::string store = read_file(dir / "base/store.jsonl");
  ASSERT_EQ(run(distill_args("d")).code, 0);
  for (const char* f : {"student.json", "heads.json", "distill_metrics.csv", "distill_state.json"}) {
    EXPECT_TRUE(fs::exists(dir / "d" / f)) << f;
  }
  const std::string metrics = read_file(dir / "d/distill_metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "iter,k,traj_loss,d_loss,g_loss,p_real,p_fake,adv_applied,q_0,q_1,q_2");

  const auto r = run("sample " + common("d") + " --model \"" + (dir / "d/student.json").string() + "\" --count 7 --steps 2");
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string samples = read_file(dir / "d/samples.csv");
  EXPECT_EQ(samples.substr(0, samples.find('\n')), "# nfe=2 steps=2");
  EXPECT_EQ(std::count(samples.begin(), samples.end(), '\n'), 9);

  ASSERT_EQ(run("eval " + common("d") + " --teacher \"" + (dir / "base/teacher.json").string() + "\" --model \"" +
                (dir / "d/student.json").string() + "\"")
                .code,
            0);
  EXPECT_TRUE(fs::exists(dir / "d/eval.csv"));
  ASSERT_EQ(run("kd-baseline " + common("d") + " --teacher \"" + (dir / "base/teacher.json").string() + "\" --mismatch 2").code, 0);
  EXPECT_TRUE(fs::exists(dir / "d/kd_student.json"));
  const auto sweep = run("analyze-mismatch " + common("d") + " --teacher \"" + (dir / "base/teacher.json").string() +
                         "\" --store \"" + (dir / "base/store.jsonl").string() + "\"");
  ASSERT_EQ(sweep.code, 0) << sweep.output;
  const std::string csv = read_file(dir / "d/sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);

  EXPECT_EQ(read_file(dir / "base/teacher.json"), teacher);
  EXPECT_EQ(read_file(dir / "base/store.jsonl"), store);
}

TEST_F(CliTest, ResumeMatchesUninterruptedRun) {
  prepare();
  ASSERT_EQ(run(distill_args("whole")).code, 0);
  ASSERT_EQ(run(distill_args("split") + " --set distill.rounds=2").code, 0);
  const auto r = run(distill_args("split") + " --resume");
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"student.json", "heads.json", "distill_metrics.csv", "distill_state.json"}) {
    EXPECT_EQ(read_file(dir / "whole" / f), read_file(dir / "split" / f)) << f;
  }
}

TEST_F(CliTest, ResumeRejectsChangedConfig) {
  prepare();
  ASSERT_EQ(run(distill_args("x") + " --set distill.rounds=2").code, 0);
  const auto r = run(distill_args("x") + " --resume --set distill.lambda_adv=0.5");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("different distill config"), std::string::npos) << r.output;
}

TEST_F(CliTest, NoAdvEqualsZeroLambda) {
  prepare();
  ASSERT_EQ(run(distill_args("flag") + " --no-adv").code, 0);
  ASSERT_EQ(run(distill_args("zero") + " --set distill.lambda_adv=0").code, 0);
  EXPECT_EQ(read_file(dir / "flag/student.json"), read_file(dir / "zero/student.json"));
}

TEST_F(CliTest, MissingTeacherIsConfigError) {
  const auto r = run("synth " + common("m") + " --teacher \"" + (dir / "absent.json").string() + "\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("teacher file not found"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir / "m/store.jsonl"));
}

TEST_F(CliTest, StoreFromOtherTeacherIsRejected) {
  prepare();
  ASSERT_EQ(run("train-teacher " + common("other") + " --seed 99").code, 0);
  const auto r = run("distill " + common("o") + " --teacher \"" + (dir / "other/teacher.json").string() + "\" --store \"" +
                     (dir / "base/store.jsonl").string() + "\"");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("fingerprint"), std::string::npos) << r.output;
}

TEST_F(CliTest, MalformedConfigNamesField) {
  std::ofstream(dir / "bad.json") << R"({"distill": {"rounds": 3, "lambda": 0.2}})";
  const auto r = run("print-config --config \"" + (dir / "bad.json").string() + "\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("distill.lambda"), std::string::npos) << r.output;
}

TEST_F(CliTest, PrintConfigAppliesOverrides) {
  const auto r = run("print-config --config \"" + (dir / "config.json").string() + "\" --set distill.m=5");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.output.find("\"m\": 5"), std::string::npos) << r.output;
}

TEST_F(CliTest, SampleRejectsNonPositiveCount) {
  prepare();
  const auto r = run("sample " + common("s") + " --model \"" + (dir / "base/teacher.json").string() + "\" --count 0");
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, UnknownSubcommandIsUsageError) {
  EXPECT_EQ(run("transmogrify").code, 2);
}
