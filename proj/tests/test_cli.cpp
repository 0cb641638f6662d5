#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hiera/hierarchy.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "hiera_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(HIERA_SEG_BIN) + " " + args + " > " +
                          (kRoot / "stdout.txt").string() + " 2> " + (kRoot / "stderr.txt").string();
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::string dir(const std::string& name) { return (kRoot / name).string(); }

std::string bundled(const std::string& file) { return (hiera::bundled_data_dir() / file).string(); }

struct Workspace {
  Workspace() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

}  // namespace

TEST_CASE_FIXTURE(Workspace, "validate-hierarchy prints the summary and maps errors to exit codes") {
  CHECK(run("validate-hierarchy " + bundled("mm5b.json")) == 0);
  CHECK(slurp(kRoot / "stdout.txt").find("3 levels, 4/9/18 classes, 18 paths") != std::string::npos);
  CHECK(run("validate-hierarchy /nonexistent/tree.json") == 4);
  std::ofstream(kRoot / "bad.json") << R"({"levels":[{"name":"A","classes":["x","x"]}],"edges":[]})";
  CHECK(run("validate-hierarchy " + dir("bad.json")) == 2);
  CHECK(run("validate-hierarchy " + bundled("crop.json") + " --out " + dir("v")) == 0);
  CHECK(fs::exists(kRoot / "v" / "summary.json"));
  CHECK(fs::exists(kRoot / "v" / "config.json"));
  CHECK(run("no-such-command") == 2);
  CHECK(run("train --data") == 2);
}

TEST_CASE_FIXTURE(Workspace, "generate, train, decode and evaluate end to end") {
  const std::string gen = "gen-data --images 4 --size 12 --regions 4 --seed 3 --out ";
  REQUIRE(run(gen + dir("train")) == 0);
  REQUIRE(run(gen + dir("train2")) == 0);
  CHECK(slurp(kRoot / "train" / "manifest.json") == slurp(kRoot / "train2" / "manifest.json"));
  REQUIRE(run("gen-data --images 2 --size 12 --regions 4 --seed 4 --out " + dir("test")) == 0);

  const std::string train = "train --data " + dir("train") + " --test " + dir("test") +
                            " --widths 4,6 --dec-channels 6 --iterations 5 --batch 2 --seed 1 --out ";
  REQUIRE(run(train + dir("m1")) == 0);
  REQUIRE(run(train + dir("m2")) == 0);
  CHECK(fs::exists(kRoot / "m1" / "checkpoint" / "manifest.json"));
  CHECK(fs::exists(kRoot / "m1" / "config.json"));
  CHECK(slurp(kRoot / "m1" / "summary.json") == slurp(kRoot / "m2" / "summary.json"));

  REQUIRE(run("decode --model " + dir("m1") + "/checkpoint --data " + dir("test") +
              " --mode jsps --png --out " + dir("pred")) == 0);
  const auto dec = nlohmann::json::parse(slurp(kRoot / "pred" / "summary.json"));
  CHECK(dec["consistency_rate"] == 1.0);
  REQUIRE(run("eval --pred " + dir("pred") + " --data " + dir("test") + " --out " + dir("eval")) == 0);
  const auto rep = nlohmann::json::parse(slurp(kRoot / "eval" / "report.json"));
  CHECK(rep["levels"].size() == 3);
  CHECK(slurp(kRoot / "eval" / "report.txt").find("mIoU") != std::string::npos);

  // Re-decoding the saved logits gives the same labels.
  REQUIRE(run("decode --logits " + dir("pred") + "/logits --hierarchy " + bundled("mm5b.json") +
              " --mode jsps --out " + dir("pred2")) == 0);
  CHECK(slurp(kRoot / "pred" / "pred" / "L3" / "0001.htf") == slurp(kRoot / "pred2" / "pred" / "L3" / "0001.htf"));

  CHECK(run("train --data " + dir("train") + " --head flat --fusion c2f --out " + dir("bad")) == 2);
  CHECK(run("train --data " + dir("train") + " --head bhccm --loss ce --out " + dir("bad")) == 2);
  CHECK(run("train --data " + dir("missing") + " --out " + dir("bad")) == 4);
  CHECK(run("eval --pred " + dir("pred") + " --data " + dir("train") + " --out " + dir("bad")) == 2);
}

TEST_CASE_FIXTURE(Workspace, "derive-labels fills the coarse levels") {
  REQUIRE(run("gen-data --images 2 --size 8 --regions 3 --seed 5 --out " + dir("d")) == 0);
  REQUIRE(run("derive-labels --labels " + dir("d") + "/labels/L3 --out " + dir("derived")) == 0);
  for (const char* l : {"L1", "L2"})
    CHECK(slurp(kRoot / "derived" / "labels" / l / "0001.htf") == slurp(kRoot / "d" / "labels" / l / "0001.htf"));
}

TEST_CASE_FIXTURE(Workspace, "transfer runs against a saved Branch 2") {
  REQUIRE(run("gen-data --images 2 --size 8 --regions 3 --seed 6 --out " + dir("src")) == 0);
  REQUIRE(run("train --data " + dir("src") + " --widths 4,6 --dec-channels 6 --iterations 2 --batch 1 --out " +
              dir("b2")) == 0);
  REQUIRE(run("gen-data --kind crop --hierarchy " + bundled("crop.json") +
              " --images 2 --size 8 --regions 3 --seed 7 --out " + dir("tgt")) == 0);
  REQUIRE(run("transfer --branch2 " + dir("b2") + "/checkpoint --data " + dir("tgt") + " --test " +
              dir("tgt") + " --mapping " + bundled("crop_mapping.json") +
              " --iterations 2 --batch 1 --out " + dir("t")) == 0);
  CHECK(fs::exists(kRoot / "t" / "summary.json"));
  CHECK(nlohmann::json::parse(slurp(kRoot / "t" / "config.json"))["cdsa_residual"] == true);
  const std::string short_run = "transfer --branch2 " + dir("b2") + "/checkpoint --data " + dir("tgt") +
                                " --iterations 1 --batch 1 --out ";
  REQUIRE(run(short_run + dir("tp1") + " --cdsa-fuse product") == 0);
  CHECK(nlohmann::json::parse(slurp(kRoot / "tp1" / "config.json"))["cdsa_residual"] == false);
  REQUIRE(run(short_run + dir("tp2") + " --cdsa off") == 0);
  CHECK(nlohmann::json::parse(slurp(kRoot / "tp2" / "config.json"))["cdsa_residual"] == false);
  CHECK(run(short_run + dir("tp3") + " --cdsa-fuse sum") == 2);
  REQUIRE(run("decode --model " + dir("t") + "/checkpoint --data " + dir("tgt") + " --out " + dir("tp")) == 0);
  // A flat Branch 2 has no per-level logits to interact with.
  REQUIRE(run("train --data " + dir("src") + " --head flat --loss ce --widths 4,6 --dec-channels 6 "
              "--iterations 1 --batch 1 --out " + dir("flat")) == 0);
  CHECK(run("transfer --branch2 " + dir("flat") + "/checkpoint --data " + dir("tgt") +
            " --iterations 1 --out " + dir("bad")) == 2);
  CHECK(run("transfer --branch2 " + dir("nowhere") + " --data " + dir("tgt") + " --out " + dir("bad")) == 4);
}

TEST_CASE_FIXTURE(Workspace, "ablate writes a table and a summary") {
  REQUIRE(run("ablate --suite jsps --seeds 1 --iterations 3 --out " + dir("ab")) == 0);
  CHECK(slurp(kRoot / "ab" / "table.txt").find("jsps") != std::string::npos);
  const auto s = nlohmann::json::parse(slurp(kRoot / "ab" / "summary.json"));
  CHECK(s["suite"] == "jsps");
  CHECK(run("ablate --suite nope --out " + dir("ab2")) == 2);
}
