#include "doctest.h"

#include "vqw2v/token_stream.hpp"

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace vqw2v;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(VQW2V_CLI) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == ' ')) s.pop_back();
  return s;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("vqw2v_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("eval-bitrate prints the formula value") {
  auto r = run("eval-bitrate --groups 1 --vars 40");
  CHECK(r.code == 0);
  CHECK(trim(r.out) == "532.19");
  CHECK(trim(run("eval-bitrate --groups 2 --vars 320").out) == "1664.39");
  CHECK(trim(run("eval-bitrate --groups 32 --vars 1280").out) == "33030.17");

  auto sweep = run("eval-bitrate --sweep-groups 1,2 --sweep-vars 40,320");
  CHECK(sweep.code == 0);
  std::istringstream lines(sweep.out);
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].find('\t') != std::string::npos);
  CHECK(sweep.out.find("532.19") != std::string::npos);
}

TEST_CASE("errors exit nonzero with one error line") {
  for (const std::string args : {"eval-bitrate --groups 1 --vars 1", "eval-bitrate --bogus 3", "",
                                 "codebook-stats --tokens /nonexistent/file.tok", "no-such-command"}) {
    auto r = run(args);
    INFO("args: " << args << " output: " << r.out);
    CHECK(r.code != 0);
    CHECK(r.out.rfind("error: ", 0) == 0);
    CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);
  }
}

TEST_CASE("codebook-stats counts distinct tuples") {
  auto dir = scratch("stats");
  TokenStream s;
  s.header.groups = 2;
  s.header.vars = 4;
  s.header.codebook_hash = "00000001";
  for (int rep = 0; rep < 8; ++rep) s.indices.insert(s.indices.end(), {0, 1, 2, 3, 1, 0});
  write_tokens(s, dir / "crafted.tok", TokenFormat::kText);
  auto r = run("codebook-stats --tokens " + (dir / "crafted.tok").string());
  CHECK(r.code == 0);
  CHECK(r.out.find("unique=3 ") != std::string::npos);
  CHECK(r.out.find("fraction=0.1875") != std::string::npos);
  CHECK(r.out.find("tokens=24") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("the full pipeline composes through files") {
  auto dir = scratch("pipeline");
  const std::string d = dir.string();
  auto gen = run("gen-synth --out-dir " + d + "/wav --clips 3 --seconds 0.5 --seed 2");
  REQUIRE_MESSAGE(gen.code == 0, gen.out);
  CHECK(std::distance(fs::directory_iterator(dir / "wav"), fs::directory_iterator{}) == 3);

  auto train = run("train-vq --input " + d + "/wav --out " + d + "/vq.ckpt --preset small --channels 8 --vars 8 "
                   "--steps 3 --batch 2 --crop 1600 --precision float64 --telemetry " + d + "/vq.log");
  REQUIRE_MESSAGE(train.code == 0, train.out);
  std::ifstream log(dir / "vq.log");
  std::string line;
  int records = 0;
  while (std::getline(log, line)) records += line.rfind("step=", 0) == 0;
  CHECK(records == 3);

  auto tok = run("tokenize --checkpoint " + d + "/vq.ckpt --input " + d + "/wav --out-dir " + d + "/tok");
  REQUIRE_MESSAGE(tok.code == 0, tok.out);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir / "tok")) files.push_back(e.path().string());
  REQUIRE(files.size() == 3);
  auto stream = read_tokens(files[0]);
  CHECK(stream.frames() == 50);
  CHECK(stream.header.vars == 8);

  std::string all;
  for (const auto& f : files) all += " " + f;
  auto stats = run("codebook-stats --tokens" + all);
  CHECK(stats.code == 0);
  CHECK(stats.out.find("tokens=150") != std::string::npos);

  auto vocab = run("build-vocab --tokens" + all + " --out " + d + "/vocab.txt");
  REQUIRE_MESSAGE(vocab.code == 0, vocab.out);
  auto mlm = run("train-mlm --tokens" + all + " --vocab " + d + "/vocab.txt --out " + d +
                 "/mlm.ckpt --steps 2 --seq-len 20 --mask-prob 0.1 --span 3 --telemetry " + d + "/mlm.log");
  REQUIRE_MESSAGE(mlm.code == 0, mlm.out);

  auto feat = run("extract-features --checkpoint " + d + "/mlm.ckpt --vocab " + d + "/vocab.txt --tokens " +
                  files[0] + " --out " + d + "/feat.tsv");
  REQUIRE_MESSAGE(feat.code == 0, feat.out);
  std::ifstream tsv(dir / "feat.tsv");
  int rows = 0;
  std::size_t cols = 0;
  while (std::getline(tsv, line)) {
    ++rows;
    cols = std::size_t(std::count(line.begin(), line.end(), '\t')) + 1;
  }
  CHECK(rows == 64);
  CHECK(cols == 50);

  // A token file from another model is rejected against this vocabulary.
  auto foreign = stream;
  foreign.header.codebook_hash = "ffffffff";
  write_tokens(foreign, dir / "foreign.tok", TokenFormat::kBinary);
  auto bad = run("extract-features --checkpoint " + d + "/mlm.ckpt --vocab " + d + "/vocab.txt --tokens " + d +
                 "/foreign.tok --out " + d + "/x.tsv");
  CHECK(bad.code != 0);
  CHECK(bad.out.rfind("error: ", 0) == 0);
  fs::remove_all(dir);
}
