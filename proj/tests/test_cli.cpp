#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kTmp = FLASHD_TEST_TMP;

struct Result {
  int code;
  std::string out;
};

Result lab(const std::string& args) {
  fs::create_directories(kTmp);
  const fs::path capture = kTmp / "stdout.txt";
  const std::string cmd = std::string(FLASHD_LAB_PATH) + " " + args + " > " + capture.string() +
                          " 2> " + (kTmp / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  std::ifstream in(capture);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string path(const std::string& name) { return (kTmp / name).string(); }

// Drops the trailing runtime_ns column from every CSV line.
std::string strip_runtime(const std::string& csv) {
  std::stringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

}  // namespace

TEST_CASE("gen is deterministic") {
  REQUIRE(lab("gen --seed 7 --n 32 --d 8 --queries 3 --out " + path("g1")).code == 0);
  REQUIRE(lab("gen --seed 7 --n 32 --d 8 --queries 3 --out " + path("g2")).code == 0);
  for (const char* f : {"q.atn", "k.atn", "v.atn"}) {
    CHECK(slurp(kTmp / "g1" / f) == slurp(kTmp / "g2" / f));
    CHECK(slurp(kTmp / "g1" / f).size() > 0);
  }
  REQUIRE(lab("gen --seed 8 --n 32 --d 8 --queries 3 --out " + path("g3")).code == 0);
  CHECK(slurp(kTmp / "g1" / "k.atn") != slurp(kTmp / "g3" / "k.atn"));
}

TEST_CASE("usage errors exit 2") {
  CHECK(lab("gen --seed 1").code == 2);
  CHECK(lab("run --kernel bogus --seed 1").code == 2);
  CHECK(lab("run").code == 2);
  CHECK(lab("run --seed 1 --mode log --nonlinear pwl").code == 2);
  CHECK(lab("run --seed 1 --skip on --skip-lo 3 --skip-hi 2").code == 2);
  CHECK(lab("nonsense").code == 2);
}

TEST_CASE("run then compare: reference vs flashd") {
  REQUIRE(lab("gen --seed 11 --n 256 --d 64 --queries 4 --out " + path("p")).code == 0);
  REQUIRE(lab("run --kernel reference --in " + path("p") + " --out " + path("ref.atn")).code == 0);
  const auto fd = lab("run --kernel flashd --skip off --in " + path("p") + " --out " + path("fd.atn"));
  REQUIRE(fd.code == 0);
  const json j = json::parse(fd.out);
  CHECK(j["summary"]["division_free"] == true);
  CHECK(j["summary"]["max_free"] == true);
  CHECK(j["nonfinite"] == false);

  const auto cmp = lab("compare " + path("fd.atn") + " " + path("ref.atn") + " --tol 1e-12");
  CHECK(cmp.code == 0);
  CHECK(json::parse(cmp.out)["pass"] == true);

  // A zero tolerance fails on outputs that differ by rounding.
  REQUIRE(lab("run --kernel alg1 --in " + path("p") + " --out " + path("a1.atn")).code == 0);
  const auto strict = lab("compare " + path("a1.atn") + " " + path("ref.atn") + " --tol 0");
  REQUIRE(slurp(kTmp / "a1.atn") != slurp(kTmp / "ref.atn"));
  CHECK(strict.code == 1);
}

TEST_CASE("compare exit codes") {
  REQUIRE(lab("run --kernel flashd --seed 1 --n 8 --d 4 --queries 2 --out " + path("s1.atn"))
              .code == 0);
  REQUIRE(lab("run --kernel flashd --seed 1 --n 8 --d 5 --queries 2 --out " + path("s2.atn"))
              .code == 0);
  CHECK(lab("compare " + path("s1.atn") + " " + path("s2.atn")).code == 4);
  CHECK(lab("compare " + path("s1.atn") + " " + path("missing.atn")).code == 3);
  {
    std::ofstream junk(path("junk.atn"), std::ios::binary);
    junk << "not a tensor";
  }
  CHECK(lab("compare " + path("junk.atn") + " " + path("s1.atn")).code == 3);
  CHECK(lab("run --in " + path("no_such_dir")).code == 3);
}

TEST_CASE("alg2 performs exactly d divisions per query") {
  const auto r = lab("run --kernel alg2 --seed 3 --n 100 --d 16 --queries 5");
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["summary"]["counts"]["div"] == 5 * 16);
  CHECK(j["output_update_counts"]["div"] == 5 * 16);
}

TEST_CASE("fp8 with PWL nonlinearities stays finite") {
  const auto r =
      lab("run --kernel flashd --precision fp8e4m3 --nonlinear pwl --skip on --seed 4 --n 256 "
          "--d 16 --queries 4 --vs-reference");
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["nonfinite"] == false);
  CHECK(j.contains("error_vs_fp64_reference"));
}

TEST_CASE("fit-pwl") {
  const auto r = lab("fit-pwl --function sigmoid --segments 8 --out " + path("fit.json"));
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["breakpoints"].size() == 9);
  CHECK(j["slopes"].size() == 8);
  CHECK(j["max_abs_error"].get<double>() <= 0.0102);
  CHECK(json::parse(slurp(kTmp / "fit.json")) == j);
  CHECK(lab("fit-pwl --function ln --lo 0").code == 2);
}

TEST_CASE("sweep") {
  const std::string args = "sweep --seed 5 --n 64 --dims 16,32,64 --out ";
  REQUIRE(lab(args + path("s1.csv")).code == 0);
  REQUIRE(lab(args + path("s2.csv")).code == 0);
  const std::string a = slurp(kTmp / "s1.csv");
  CHECK(strip_runtime(a) == strip_runtime(slurp(kTmp / "s2.csv")));

  std::stringstream lines(a);
  std::string line;
  std::getline(lines, line);
  CHECK(line.rfind("kernel,precision,N,d,skip", 0) == 0);
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    if (line.rfind("flashd,", 0) == 0) {
      std::stringstream cells(line);
      std::string cell;
      for (int c = 0; c <= 10; ++c) std::getline(cells, cell, ',');
      CHECK(cell == "0");  // div column
    }
    CHECK(line.find("error:") == std::string::npos);
  }
  CHECK(rows == 4 * 3 * 3);

  const auto both = lab("sweep --seed 5 --n 32 --kernels flashd --precisions fp64 --dims 16 "
                        "--skips off,on");
  REQUIRE(both.code == 0);
  CHECK(std::count(both.out.begin(), both.out.end(), '\n') == 3);
}
