#include <cstdlib>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vlctl/text.hpp"

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(VLCTL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Cli, ExitCodes) {
  vlctl::test::TempDir dir;
  const auto d = dir.file("d.csv");
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("synth"), 1); // --out missing
  EXPECT_EQ(run("synth --out " + d), 0);
  EXPECT_EQ(run("--config " + dir.file("missing.json") + " synth --out " + d), 1);

  vlctl::text::write_file(dir.file("bad.json"), R"({"train":{"epochs":0}})");
  EXPECT_EQ(run("--config " + dir.file("bad.json") + " suite --out " + dir.file("runs")), 1);

  vlctl::text::write_file(dir.file("broken.csv"), "scenario_id,rx_x_m\n");
  EXPECT_EQ(run("perturb --in " + dir.file("broken.csv") + " --nf 2 --out " + dir.file("p.csv")), 1);

  EXPECT_EQ(run("transfer --base " + dir.file("none.ckpt.json") + " --out " + dir.file("tl")), 2);
  EXPECT_EQ(run("evaluate --checkpoint " + dir.file("none.ckpt.json") + " --data " + d), 2);
}

TEST(Cli, TrainTransferEvaluatePipeline) {
  vlctl::test::TempDir dir;
  vlctl::text::write_file(dir.file("cfg.json"), R"({"fast":{"epochs":2,"hidden_sizes":[8,8]}})");
  const std::string g = "--config " + dir.file("cfg.json") + " --fast ";
  ASSERT_EQ(run(g + "synth --out " + dir.file("d.csv")), 0);
  ASSERT_EQ(run(g + "train --data " + dir.file("d.csv") + " --out " + dir.file("base")), 0);
  ASSERT_EQ(run(g + "transfer --base " + dir.file("base/checkpoint.ckpt.json") + " --data " + dir.file("d.csv") +
                " --nf 4 --out " + dir.file("tl")),
            0);
  ASSERT_EQ(run("evaluate --checkpoint " + dir.file("tl/checkpoint.ckpt.json") + " --data " + dir.file("tl/val.csv") +
                " --out " + dir.file("eval.json")),
            0);
  ASSERT_EQ(run("cdf --checkpoint " + dir.file("tl/checkpoint.ckpt.json") + " --data " + dir.file("tl/val.csv") +
                " --out " + dir.file("cdf.csv")),
            0);
  const auto eval = vlctl::text::read_file(dir.file("eval.json"));
  EXPECT_NE(eval.find("TL as Base Model"), std::string::npos);
  EXPECT_EQ(vlctl::text::read_file(dir.file("cdf.csv")).rfind("error_m,cum_fraction\n", 0), 0u);
}
