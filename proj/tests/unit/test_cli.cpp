#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "vmos/io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "vmos_test_cli";

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + VMOS_CLI_PATH + "\" " + args + " > \"" + (kRoot / "last.log").string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string p(const fs::path& path) { return "\"" + path.string() + "\""; }

}  // namespace

TEST_CASE("cli exit codes and the generate / evaluate flow") {
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);

  CHECK(run("") == 1);
  CHECK(run("--help") == 0);
  CHECK(run("frobnicate") == 1);
  CHECK(run("generate") == 1);  // --out missing
  CHECK(run("generate --scene nope --out " + p(kRoot / "x")) == 1);

  REQUIRE(run("generate --scene three --frames 4 --seed 3 --out " + p(kRoot / "gt")) == 0);
  CHECK(fs::exists(kRoot / "gt" / "manifest.json"));
  CHECK(fs::exists(kRoot / "gt" / "scene.json"));
  CHECK(vmos::read_video(kRoot / "gt").frames.size() == 4);

  // The scene description written next to the video reproduces it.
  REQUIRE(run("generate --scene " + p(kRoot / "gt" / "scene.json") + " --out " + p(kRoot / "again")) == 0);
  CHECK(vmos::read_video(kRoot / "again").masks == vmos::read_video(kRoot / "gt").masks);

  REQUIRE(run("evaluate --pred " + p(kRoot / "gt") + " --gt " + p(kRoot / "gt") + " --out " + p(kRoot / "r.json")) == 0);
  const auto report = nlohmann::json::parse(vmos::read_text(kRoot / "r.json"));
  CHECK(report.at("JF_mean").get<double>() == 1.0);

  CHECK(run("evaluate --pred " + p(kRoot / "missing") + " --gt " + p(kRoot / "gt")) == 2);
  REQUIRE(run("generate --scene three --frames 3 --out " + p(kRoot / "gt3")) == 0);
  CHECK(run("evaluate --pred " + p(kRoot / "gt3") + " --gt " + p(kRoot / "gt")) == 2);

  vmos::write_text(kRoot / "bad.json", "{\"bogus\": 1}");
  CHECK(run("bench --frames 2 --config " + p(kRoot / "bad.json")) == 2);
  vmos::write_text(kRoot / "junk.bin", "junk");
  CHECK(run("segment --data " + p(kRoot / "gt") + " --params " + p(kRoot / "junk.bin") + " --out " + p(kRoot / "o")) == 2);
}

TEST_CASE("cli train, segment and bench on a tiny budget") {
  fs::create_directories(kRoot);
  vmos::write_text(kRoot / "tiny.json", R"({"training": {"epochs": 1}})");
  REQUIRE(run("generate --scene single --frames 3 --out " + p(kRoot / "single")) == 0);
  REQUIRE(run("train-heads --data " + p(kRoot / "single") + " --config " + p(kRoot / "tiny.json") + " --out " +
              p(kRoot / "m.bin")) == 0);
  REQUIRE(run("segment --data " + p(kRoot / "single") + " --params " + p(kRoot / "m.bin") + " --out " +
              p(kRoot / "seg")) == 0);
  CHECK(vmos::read_video(kRoot / "seg").masks.size() == 3);
  CHECK(fs::exists(kRoot / "seg" / "run_record.json"));
  REQUIRE(run("bench --scene single --frames 2 --params " + p(kRoot / "m.bin") + " --out " + p(kRoot / "t.json")) == 0);
  const auto t = nlohmann::json::parse(vmos::read_text(kRoot / "t.json"));
  CHECK(t.at("frames").get<int>() == 2);
}
