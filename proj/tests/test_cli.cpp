#include "doctest.h"

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "aufa/trainer.hpp"
#include "json.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace aufa;

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(AUFA_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Small synthetic pair shared by the CLI cases.
fs::path synth_dir() {
  static const fs::path dir = [] {
    const fs::path root = testutil::scratch_dir("cli_data");
    REQUIRE(cli("--serial -o " + q(root / "d") + " synth --n-per-class 8 --target-n-per-class 8 --n-rois 8 --length 60") == 0);
    return root / "d";
  }();
  return dir;
}

const char* kTiny = "--n-layers 1 --n-heads 2 --ffn-hidden 8 --classifier-hidden 16 --batch-size 8 --lr 1e-3";

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with 2") {
    CHECK(cli("--no-such-flag") == 2);
    CHECK(cli("pretrain") == 2);
    const fs::path out = testutil::scratch_dir("cli_bad");
    CHECK(cli("-o " + q(out / "x") + " pretrain --source " + q(synth_dir() / "source.json") + " --lr -1") == 2);
    CHECK(cli("-o " + q(out / "y") + " pretrain --source " + q(synth_dir() / "source.json") + " --epsilon 0.3") == 2);
    CHECK(cli("-o " + q(out / "z") + " export-features --mode encoded --data " + q(synth_dir() / "source.json")) == 2);
  }

  TEST_CASE("runtime failures exit with 1") {
    const fs::path out = testutil::scratch_dir("cli_missing");
    CHECK(cli("-o " + q(out / "x") + " pretrain --source " + q(out / "nope.json")) == 1);
    CHECK_FALSE(fs::exists(out / "x"));
  }

  TEST_CASE("existing output needs --overwrite") {
    const fs::path out = testutil::scratch_dir("cli_overwrite");
    fs::create_directories(out / "x");
    const std::string rest = " synth --n-per-class 2 --n-rois 4 --length 20";
    CHECK(cli("-o " + q(out / "x") + rest) != 0);
    CHECK(cli("--overwrite -o " + q(out / "x") + rest) == 0);
    CHECK(fs::exists(out / "x" / "source.json"));
  }

  TEST_CASE("eval of an untrained checkpoint writes valid metrics") {
    const fs::path out = testutil::scratch_dir("cli_eval");
    REQUIRE(cli("--serial -o " + q(out / "p") + " pretrain --source " + q(synth_dir() / "source.json") +
                " --epochs-pretrain 0 " + kTiny) == 0);
    REQUIRE(cli("--serial -o " + q(out / "e") + " eval --checkpoint " + q(out / "p" / "checkpoint.json") +
                " --data " + q(synth_dir() / "target.json")) == 0);
    const auto m = nlohmann::json::parse(testutil::read_text(out / "e" / "metrics.json"));
    const double acc = m.at("accuracy").get<double>();
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    CHECK(m.at("n_subjects").get<int>() == 16);
    CHECK(fs::exists(out / "e" / "predictions.csv"));
    CHECK(fs::exists(out / "e" / "run_manifest.json"));
  }

  TEST_CASE("adapt with zero weights equals continued pretraining") {
    const fs::path out = testutil::scratch_dir("cli_lambda0");
    const std::string src = q(synth_dir() / "source.json"), tgt = q(synth_dir() / "target.json");
    REQUIRE(cli("--serial -o " + q(out / "p") + " pretrain --source " + src + " --epochs-pretrain 2 " + kTiny) == 0);
    const std::string ck = q(out / "p" / "checkpoint.json");
    REQUIRE(cli("--serial -o " + q(out / "a") + " adapt --source " + src + " --target " + tgt + " --checkpoint " + ck +
                " --epochs-adapt 2 --lambda1 0 --lambda2 0 " + kTiny) == 0);
    REQUIRE(cli("--serial -o " + q(out / "c") + " pretrain --source " + src + " --checkpoint " + ck +
                " --epochs-pretrain 2 " + kTiny) == 0);
    const auto a = nlohmann::json::parse(testutil::read_text(out / "a" / "checkpoint.json"));
    const auto c = nlohmann::json::parse(testutil::read_text(out / "c" / "checkpoint.json"));
    CHECK(a.at("params") == c.at("params"));
    CHECK(a.at("optimizer") == c.at("optimizer"));
    CHECK(a.at("epochs_done") == c.at("epochs_done"));
  }

  TEST_CASE("attention ranking and feature exports") {
    const fs::path out = testutil::scratch_dir("cli_exports");
    REQUIRE(cli("--serial -o " + q(out / "p") + " pretrain --source " + q(synth_dir() / "source.json") +
                " --epochs-pretrain 1 " + kTiny) == 0);
    const std::string ck = q(out / "p" / "checkpoint.json");
    REQUIRE(cli("-o " + q(out / "t") + " attn-top --checkpoint " + ck + " --data " +
                q(synth_dir() / "target.json")) == 0);
    const std::string top = testutil::read_text(out / "t" / "attention_top.csv");
    CHECK(std::count(top.begin(), top.end(), '\n') == 11);
    REQUIRE(cli("-o " + q(out / "r") + " export-features --mode raw --data " + q(synth_dir() / "source.json")) == 0);
    REQUIRE(cli("-o " + q(out / "f") + " export-features --mode encoded --checkpoint " + ck + " --data " +
                q(synth_dir() / "source.json")) == 0);
  }
}
