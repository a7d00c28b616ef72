// Drives the flowlab executable on the smoke config; the tiny model keeps every run
// to a few seconds.

#include "flowlab/commands.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace flowlab {
namespace {

namespace fs = std::filesystem;

const fs::path kCli = FLOWLAB_CLI;
const fs::path kSmoke = fs::path(FLOWLAB_CONFIG_DIR) / "smoke.json";

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

CliRun cli(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = kCli.string() + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("flowlab_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

// corpus -> pretrain -> finetune -> sample -> eval -> diagnose in `dir`.
void pipeline(const fs::path& dir, const std::string& extra = "") {
  const std::string cfg = "--config " + kSmoke.string() + extra;
  const std::string d = dir.string();
  ASSERT_EQ(cli("corpus " + cfg + " --out " + d + "/data", dir).code, 0);
  ASSERT_EQ(cli("pretrain " + cfg + " --data " + d + "/data --out " + d + "/teacher.ckpt --log " + d + "/pre.tsv", dir)
                .code,
            0);
  ASSERT_EQ(cli("finetune " + cfg + " --data " + d + "/data --teacher " + d + "/teacher.ckpt --out " + d +
                    "/flow.ckpt --log " + d + "/ft.tsv",
                dir)
                .code,
            0);
  const CliRun s = cli("sample " + cfg + " --checkpoint " + d + "/flow.ckpt --data " + d + "/data --out " + d +
                        "/out.jsonl --record-trajectory " + d + "/traj.csv",
                    dir);
  ASSERT_EQ(s.code, 0) << s.err;
  ASSERT_EQ(cli("eval " + cfg + " --input " + d + "/out.jsonl --references " + d + "/data/test.jsonl --out " + d +
                    "/metrics.csv",
                dir)
                .code,
            0);
  const CliRun g = cli("diagnose " + cfg + " --data " + d + "/data --teacher " + d + "/teacher.ckpt --checkpoint " + d +
                        "/flow.ckpt --log " + d + "/pre.tsv --log " + d + "/ft.tsv --out " + d + "/diag --no-timing",
                    dir);
  ASSERT_EQ(g.code, 0) << g.err;
}

TEST(Cli, FullPipelineEmitsEveryArtifact) {
  const fs::path dir = fresh_dir("pipeline");
  pipeline(dir);
  for (const char* f : {"data/train.jsonl", "data/valid.jsonl", "data/test.jsonl", "data/vocab.txt", "teacher.ckpt",
                        "flow.ckpt", "pre.tsv", "ft.tsv", "out.jsonl", "traj.csv", "metrics.csv",
                        "diag/grad_norms.csv", "diag/quartiles.csv", "diag/straightness.csv"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_EQ(first_line(slurp(dir / "metrics.csv")), "mbr_n,bleu,rouge_l,dist1,n_samples");
  EXPECT_EQ(first_line(slurp(dir / "diag/quartiles.csv")), "model,q0,q1,q2,q3");
  EXPECT_EQ(first_line(slurp(dir / "diag/grad_norms.csv")), "run,steps,mean,p95,max");
  const std::string traj = slurp(dir / "traj.csv");
  EXPECT_EQ(traj.rfind("# sampler=flow-avg steps=3", 0), 0u);
  EXPECT_EQ(std::count(traj.begin(), traj.end(), '\n'), 2 + 4);  // comment, header, N+1 snapshots
  // mbr 3 in the smoke config: three sweep rows
  const std::string metrics = slurp(dir / "metrics.csv");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 4);
  const auto outputs = load_jsonl(dir / "out.jsonl");
  EXPECT_EQ(outputs.size(), load_jsonl(dir / "data/test.jsonl").size());

  // timing table on request
  const CliRun t = cli("diagnose --config " + kSmoke.string() + " --data " + (dir / "data").string() + " --checkpoint " +
                        (dir / "flow.ckpt").string() + " --out " + (dir / "diag_t").string(),
                    dir);
  ASSERT_EQ(t.code, 0) << t.err;
  const std::string timing = slurp(dir / "diag_t/timing.csv");
  EXPECT_EQ(first_line(timing), "sampler,steps,batch,repeats,seconds_per_sample,forwards_per_repeat");
  EXPECT_NE(timing.find("flow-avg,1,"), std::string::npos);
  EXPECT_NE(timing.find("flow-avg,5,"), std::string::npos);
}

TEST(Cli, SameSeedSameBytes) {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  pipeline(a);
  pipeline(b);
  for (const char* f : {"data/train.jsonl", "data/test.jsonl", "data/vocab.txt", "teacher.ckpt", "flow.ckpt",
                        "out.jsonl", "traj.csv", "metrics.csv", "diag/quartiles.csv", "diag/straightness.csv"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  // logs differ only if training did; compare them too
  EXPECT_EQ(slurp(a / "pre.tsv"), slurp(b / "pre.tsv"));
  const fs::path c = fresh_dir("det_c");
  pipeline(c, " --seed 99");
  EXPECT_NE(slurp(a / "data/train.jsonl"), slurp(c / "data/train.jsonl"));
}

TEST(Cli, SingleStepIsOneForwardPerItem) {
  const fs::path dir = fresh_dir("steps1");
  pipeline(dir);
  const RunConfig rc = load_run_config(kSmoke);
  SampleOptions o;
  o.checkpoint = dir / "flow.ckpt";
  o.data_dir = dir / "data";
  o.out = dir / "one.jsonl";
  o.steps = 1;
  o.mbr = 1;
  std::ostringstream msg;
  const auto summary = cmd_sample(rc, o, msg);
  EXPECT_EQ(summary.forwards, static_cast<long>(summary.items));
  EXPECT_GT(summary.items, 0u);
  o.mbr = 4;
  EXPECT_EQ(cmd_sample(rc, o, msg).forwards, static_cast<long>(4 * summary.items));
  o.sampler = SamplerKind::kDiffusionAncestral;
  o.steps.reset();
  o.mbr = 1;
  o.checkpoint = dir / "teacher.ckpt";
  EXPECT_EQ(cmd_sample(rc, o, msg).forwards, static_cast<long>(20 * summary.items));
}

TEST(Cli, TypedFailures) {
  const fs::path dir = fresh_dir("errors");
  pipeline(dir);
  const std::string d = dir.string();

  // velocity checkpoint into the average-velocity sampler
  Checkpoint k = load_checkpoint(dir / "flow.ckpt");
  k.model.net.target = k.ema.net.target = PredTarget::kVelocity;
  save_checkpoint(dir / "velocity.ckpt", k);
  CliRun r = cli("sample --config " + kSmoke.string() + " --checkpoint " + d + "/velocity.ckpt --data " + d +
                  "/data --out " + d + "/v.jsonl --sampler flow-avg",
              dir);
  EXPECT_EQ(r.code, 6);
  EXPECT_EQ(r.err.rfind("error: sampler_mismatch: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  r = cli("sample --config " + kSmoke.string() + " --checkpoint " + d + "/velocity.ckpt --data " + d + "/data --out " +
              d + "/v.jsonl --sampler flow-instant",
          dir);
  EXPECT_EQ(r.code, 0) << r.err;

  // unknown config key
  std::ofstream(dir / "bad.json") << R"({"pretrain": {"epochz": 3}})";
  r = cli("corpus --config " + d + "/bad.json --out " + d + "/x", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("epochz"), std::string::npos);

  // a corpus with a different vocabulary
  std::ofstream(dir / "other.json") << R"({"seed": 1, "data": {"task": "COPY", "pairs": 50, "min_len": 3,
      "max_len": 4, "vocab_size": 7}})";
  ASSERT_EQ(cli("corpus --config " + d + "/other.json --out " + d + "/other", dir).code, 0);
  r = cli("sample --config " + kSmoke.string() + " --checkpoint " + d + "/flow.ckpt --data " + d + "/other --out " + d +
              "/o.jsonl",
          dir);
  EXPECT_EQ(r.code, 5);
  EXPECT_EQ(r.err.rfind("error: vocab_mismatch: ", 0), 0u) << r.err;

  // corrupt checkpoint
  std::ofstream(dir / "junk.ckpt") << "garbage";
  r = cli("sample --checkpoint " + d + "/junk.ckpt --data " + d + "/data --out " + d + "/j.jsonl", dir);
  EXPECT_EQ(r.code, 4);

  // malformed input data
  std::ofstream(dir / "broken.jsonl") << "{\"src\": 1}\n";
  r = cli("eval --input " + d + "/broken.jsonl --references " + d + "/data/test.jsonl --out " + d + "/m.csv", dir);
  EXPECT_EQ(r.code, 3);

  // usage errors
  EXPECT_EQ(cli("sample --out x", dir).code, 64);
  EXPECT_EQ(cli("teleport", dir).code, 64);
  EXPECT_EQ(cli("sample --checkpoint a --data b --out c --sampler euler", dir).code, 64);
  EXPECT_EQ(cli("--help", dir).code, 0);
}

}  // namespace
}  // namespace flowlab
