#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "qdz/config.hpp"
#include "qdz/dataset.hpp"
#include "qdz/net.hpp"
#include "qdz/train.hpp"

using namespace qdz;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& contents) {
  const fs::path path = fs::temp_directory_path() / name;
  std::ofstream out(path);
  out << contents;
  return path;
}

}  // namespace

TEST_CASE("synthetic datasets are seeded and split deterministically") {
  const Dataset a = synth_dataset(SynthKind::spirals, 400, 3, 0.2, 11);
  const Dataset b = synth_dataset(SynthKind::spirals, 400, 3, 0.2, 11);
  const Dataset c = synth_dataset(SynthKind::spirals, 400, 3, 0.2, 12);
  REQUIRE(a.train_x.data == b.train_x.data);
  REQUIRE(a.test_y == b.test_y);
  REQUIRE(a.train_x.data != c.train_x.data);
  REQUIRE(a.train_x.rows + a.test_x.rows == 400);
  REQUIRE(a.test_x.rows == 100);
  REQUIRE(a.classes == 3);
}

TEST_CASE("zero-noise blobs are linearly separable") {
  const Dataset data = synth_dataset(SynthKind::blobs, 300, 3, 0.0, 5);
  // One linear layer trained briefly must fit the train split exactly.
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.lr = 0.5;
  cfg.seed = 1;
  const Network init =
      Network::dense_classifier(2, std::vector<std::size_t>{}, 3, 1);
  const TrainResult result = train_full_precision(init, data, cfg);
  REQUIRE(result.train_accuracy == 1.0);
}

TEST_CASE("blob labels round-robin over classes") {
  const Dataset data = synth_dataset(SynthKind::blobs, 90, 3, 0.05, 5);
  std::array<int, 3> counts{0, 0, 0};
  for (int y : data.train_y) ++counts[y];
  for (int y : data.test_y) ++counts[y];
  REQUIRE(counts == std::array<int, 3>{30, 30, 30});
}

TEST_CASE("csv loading standardizes with train statistics") {
  const fs::path path = temp_file(
      "qdz_test_ok.csv", "x0,x1,label\n1,5,0\n2,5,1\n3,5,0\n4,5,1\n");
  const Dataset data = load_csv(path, "label", 3, 0.25);
  REQUIRE(data.train_x.rows == 3);
  REQUIRE(data.test_x.rows == 1);
  REQUIRE(data.classes == 2);

  // Train columns have mean 0; the constant column stays at zero because
  // the zero std clamps to 1.
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < data.train_x.rows; ++r) {
      mean += data.train_x.at(r, c);
    }
    REQUIRE(mean / 3.0 == Catch::Approx(0.0).margin(1e-12));
  }
  for (std::size_t r = 0; r < data.train_x.rows; ++r) {
    REQUIRE(data.train_x.at(r, 1) == 0.0);
  }
  fs::remove(path);
}

TEST_CASE("csv errors name the offending cell") {
  SECTION("non-numeric cell") {
    const fs::path path = temp_file("qdz_test_bad.csv",
                                    "x0,label\n1,0\nfoo,1\n");
    try {
      load_csv(path, "label", 1);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      REQUIRE(std::string(e.what()).find("row 3") != std::string::npos);
    }
    fs::remove(path);
  }
  SECTION("missing label column") {
    const fs::path path = temp_file("qdz_test_nolabel.csv", "x0,x1\n1,2\n");
    REQUIRE_THROWS_AS(load_csv(path, "label", 1), ConfigError);
    fs::remove(path);
  }
}

TEST_CASE("key=value config parsing") {
  const fs::path path = temp_file("qdz_test.conf",
                                  "# comment line\n"
                                  "epochs = 12\n"
                                  "lr = 0.25   # trailing comment\n"
                                  "synth.kind = spirals\n"
                                  "bits = 2,4,8\n"
                                  "lr_halving = on\n");
  KeyValueConfig cfg = KeyValueConfig::parse_file(path);
  REQUIRE(cfg.get_int("epochs", 0) == 12);
  REQUIRE(cfg.get_double("lr", 0) == 0.25);
  REQUIRE(cfg.get_string("synth.kind", "") == "spirals");
  REQUIRE(cfg.get_u32_list("bits", {}) == std::vector<std::uint32_t>{2, 4, 8});
  REQUIRE(cfg.get_bool("lr_halving", false));
  REQUIRE(cfg.get_int("absent", 7) == 7);

  SECTION("overrides win") {
    cfg.set("epochs=99");
    REQUIRE(cfg.get_int("epochs", 0) == 99);
  }
  SECTION("typed accessors validate") {
    cfg.set("epochs=abc");
    REQUIRE_THROWS_AS(cfg.get_int("epochs", 0), ConfigError);
    REQUIRE_THROWS_AS(cfg.get_bool("synth.kind", false), ConfigError);
    REQUIRE_THROWS_AS(cfg.require_string("absent"), ConfigError);
  }
  SECTION("serialization is sorted and reparses identically") {
    const std::string text = cfg.serialize();
    const fs::path round = temp_file("qdz_test_round.conf", text);
    const KeyValueConfig reparsed = KeyValueConfig::parse_file(round);
    REQUIRE(reparsed.serialize() == text);
    REQUIRE(text.find("bits = 2,4,8") != std::string::npos);
    fs::remove(round);
  }
  fs::remove(path);
}
