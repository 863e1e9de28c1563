#include "catch_amalgamated.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ecpp/cli.hpp"

using namespace ecpp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "ecpp");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string f; std::getline(is, f, ',');) out.push_back(f);
  return out;
}

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / ("ecpp_cli_" + name); }

fs::path tiny_config() {
  RunConfig c;
  c.dataset.classes = 2;
  c.dataset.per_class = 16;
  c.dataset.test_per_class = 8;
  c.dataset.resolution = 16;
  c.views = uniform_config(2, 16, DatasetStyle::Cifar);
  c.encoder.widths = {4, 8};
  c.encoder.representation_dim = 8;
  c.encoder.input_resolution = 16;
  c.projection = {2, 8, 8};
  c.batch_size = 8;
  c.epochs = 1;
  c.constant_lr_mode = true;
  c.optim.warmup_epochs = 0;
  c.probe.epochs = 2;
  const auto path = tmp("tiny.json");
  std::ofstream(path) << dump_run_config(c);
  return path;
}

}  // namespace

TEST_CASE("pairs subcommand", "[cli]") {
  const auto r = run({"pairs", "--k-range", "2..8", "--strategies", "full_graph,multi_crop"});
  REQUIRE(r.code == 0);
  const auto rows = lines(r.out);
  REQUIRE(rows.size() == 15);
  CHECK(rows[0] == kPairsHeader);
  const auto last = split(rows.back());
  CHECK(last[0] == "multi_crop");
  CHECK(last[1] == "8");
  CHECK(last[4] == "13");

  const auto all = run({"pairs", "--k-range", "2..4"});
  CHECK(lines(all.out).size() == 1 + 3 * 4 + 1);  // two_view only accepts k = 2
}

TEST_CASE("cost subcommand", "[cli]") {
  const auto r = run({"cost", "--k", "6", "--ratio", "0.1837", "--strategy", "ecpp"});
  REQUIRE(r.code == 0);
  const auto rows = lines(r.out);
  REQUIRE(rows.size() == 2);
  const auto f = split(rows[1]);
  CHECK(f[0] == "ecpp");
  CHECK(f[4] == "15");
  CHECK(std::stod(f[5]) == Catch::Approx(2.7348).margin(1e-9));
  CHECK(std::stod(f[6]) == Catch::Approx(5.484861781483107).epsilon(1e-12));

  const auto out = tmp("cost.csv");
  CHECK(run({"cost", "--k", "4", "--out", out.string()}).code == 0);
  CHECK(fs::exists(out));
}

TEST_CASE("exit codes", "[cli]") {
  CHECK(run({"train", "--config", "missing.cfg"}).code == 1);
  CHECK(run({"train"}).code == 1);
  CHECK(run({"pairs", "--k", "4", "--bogus"}).code == 1);
  CHECK(run({"nonsense"}).code == 1);
  CHECK(run({"pairs", "--k", "4", "--strategies", "star"}).code == 1);
  CHECK(run({"cost", "--k", "4", "--ratio", "2"}).code == 1);
  CHECK(run({"probe", "--checkpoint", tmp("absent.ckpt").string()}).code == 2);
  const auto e = run({"train", "--config", "missing.cfg"});
  CHECK_FALSE(e.err.empty());
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("train and probe subcommands", "[cli]") {
  const auto cfg = tiny_config();
  const auto ck = tmp("run.ckpt");
  const auto csv = tmp("run.csv");
  const auto r = run({"train", "--config", cfg.string(), "--out", csv.string(), "--checkpoint", ck.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.empty());
  const auto rows = lines(std::string(std::istreambuf_iterator<char>(std::ifstream(csv).rdbuf()), {}));
  CHECK(rows.size() == 1 + 4);
  CHECK(rows[0] == kMetricsHeader);

  const auto to_stdout = run({"train", "--config", cfg.string(), "--max-steps", "2"});
  REQUIRE(to_stdout.code == 0);
  CHECK(lines(to_stdout.out).size() == 3);
  CHECK(lines(to_stdout.out)[1] == rows[1]);

  const auto p = run({"probe", "--checkpoint", ck.string()});
  REQUIRE(p.code == 0);
  const auto pr = lines(p.out);
  REQUIRE(pr.size() == 2);
  const double top1 = std::stod(split(pr[1])[1]);
  CHECK(top1 >= 0.0);
  CHECK(top1 <= 1.0);
  CHECK(run({"probe", "--checkpoint", ck.string()}).out == p.out);

  CHECK(run({"train", "--config", cfg.string(), "--dataset", "cifar10"}).code == 1);
}

TEST_CASE("speed subcommand", "[cli]") {
  const auto cfg = tiny_config();
  const auto r = run({"speed", "--config", cfg.string(), "--k-range", "2..3", "--budget-pairs", "48", "--milestone-pairs",
                      "24"});
  REQUIRE(r.code == 0);
  const auto rows = lines(r.out);
  CHECK(rows[0] == kSpeedHeader);
  CHECK(rows.size() == 1 + 3 + 3);
}

TEST_CASE("augment-preview subcommand", "[cli]") {
  const auto dir = tmp("preview");
  fs::remove_all(dir);
  const auto r = run({"augment-preview", "--out", dir.string(), "--n", "3", "--dataset", "blobs"});
  REQUIRE(r.code == 0);
  for (int i = 0; i < 3; ++i) {
    const auto img = read_ppm((dir / ("view_" + std::to_string(i) + ".ppm")).string());
    CHECK(img.height == 32);
  }
  CHECK(run({"augment-preview", "--out", dir.string(), "--pipeline", "nope"}).code == 1);
  const auto input = dir / "view_0.ppm";
  const auto again = run({"augment-preview", "--input", input.string(), "--out", (dir / "b").string(), "--n", "1",
                          "--pipeline", "crop_only_cifar", "--seed", "4"});
  CHECK(again.code == 0);
  CHECK(fs::exists(dir / "b" / "view_0.ppm"));
}

TEST_CASE("installed binary", "[cli]") {
  const std::string bin = ECPP_CLI_PATH;
  CHECK(std::system((bin + " cost --k 6 --strategy ecpp > /dev/null").c_str()) == 0);
  const int missing = std::system((bin + " train --config missing.cfg 2> /dev/null").c_str());
  CHECK(WEXITSTATUS(missing) == 1);
}
