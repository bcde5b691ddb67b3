// Flat key=value run configuration: parsing, comments, typed getters,
// documented-key enforcement, and the pretrain/finetune profile loaders.
#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <string>

#include "affseg/config.hpp"

#include "test_support.hpp"

using namespace affseg;

namespace {

std::string temp_path(const std::string& stem) {
  static int counter = 0;
  return support::temp_dir() + "/config-" + stem + "-" + std::to_string(counter++) + ".cfg";
}

}  // namespace

TEST_CASE("key=value parsing handles comments, blanks, and whitespace", "[config]") {
  const KeyValueConfig cfg = KeyValueConfig::parse_string(
      "alpha = 1\n"
      "# a full-line comment\n"
      "\n"
      "   \t \n"
      "beta=two # trailing comment\n"
      "  gamma   =   spaced value  \n"
      "expr = a=b\n"
      "empty =\n");
  CHECK(cfg.has("alpha"));
  CHECK(cfg.get_string("alpha", "") == "1");
  CHECK(cfg.get_string("beta", "") == "two");
  CHECK(cfg.get_string("gamma", "") == "spaced value");
  CHECK(cfg.get_string("expr", "") == "a=b");  // only the first '=' splits
  CHECK(cfg.has("empty"));
  CHECK(cfg.get_string("empty", "fallback").empty());
  CHECK_FALSE(cfg.has("delta"));
  CHECK(cfg.get_string("delta", "fallback") == "fallback");
  CHECK(cfg.values().size() == 5);

  SECTION("a hash cuts the rest of the line, even inside a value") {
    const KeyValueConfig c = KeyValueConfig::parse_string("name = abc#def\n");
    CHECK(c.get_string("name", "") == "abc");
  }

  SECTION("malformed lines carry their line number") {
    try {
      KeyValueConfig::parse_string("ok = 1\nnot a pair\n", "test.cfg");
      FAIL("expected InvalidConfig");
    } catch (const InvalidConfig& e) {
      const std::string msg = e.what();
      CHECK(msg.find("test.cfg") != std::string::npos);
      CHECK(msg.find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(KeyValueConfig::parse_string(" = 3\n"), InvalidConfig);
  }

  SECTION("duplicate keys are rejected") {
    CHECK_THROWS_AS(KeyValueConfig::parse_string("a = 1\na = 2\n"), InvalidConfig);
  }
}

TEST_CASE("typed getters validate their formats", "[config]") {
  const KeyValueConfig cfg = KeyValueConfig::parse_string(
      "pi = 3.5\n"
      "tiny = 1e-4\n"
      "count = 7\n"
      "negative = -2\n"
      "frac = 7.5\n"
      "word = abc\n"
      "trailing = 3.5x\n"
      "big = 9999999999\n");

  CHECK(cfg.get_double("pi", 0.0) == 3.5);
  CHECK(cfg.get_double("tiny", 0.0) == 1e-4);
  CHECK(cfg.get_double("missing", 2.25) == 2.25);
  CHECK_THROWS_AS(cfg.get_double("word", 0.0), InvalidConfig);
  CHECK_THROWS_AS(cfg.get_double("trailing", 0.0), InvalidConfig);

  CHECK(cfg.get_int("count", 0) == 7);
  CHECK(cfg.get_int("negative", 0) == -2);
  CHECK(cfg.get_int("missing", 9) == 9);
  CHECK_THROWS_AS(cfg.get_int("frac", 0), InvalidConfig);  // must be integral
  CHECK_THROWS_AS(cfg.get_int("word", 0), InvalidConfig);

  CHECK(cfg.get_u64("big", 0) == 9999999999ULL);
  CHECK(cfg.get_u64("missing", 5) == 5);
  CHECK_THROWS_AS(cfg.get_u64("word", 0), InvalidConfig);
  CHECK_THROWS_AS(cfg.get_u64("trailing", 0), InvalidConfig);
}

TEST_CASE("config files parse like strings and name their origin", "[config]") {
  const std::string path = temp_path("basic");
  {
    std::ofstream out(path);
    out << "epochs = 5\n# comment\nseed = 3\n";
  }
  const KeyValueConfig cfg = KeyValueConfig::parse_file(path);
  CHECK(cfg.get_int("epochs", 0) == 5);
  CHECK(cfg.get_u64("seed", 0) == 3);

  CHECK_THROWS_AS(KeyValueConfig::parse_file(support::temp_dir() + "/no-such.cfg"), IoError);

  const std::string dup = temp_path("dup");
  {
    std::ofstream out(dup);
    out << "a = 1\na = 2\n";
  }
  try {
    KeyValueConfig::parse_file(dup);
    FAIL("expected InvalidConfig");
  } catch (const InvalidConfig& e) {
    CHECK(std::string(e.what()).find(dup) != std::string::npos);
  }
}

TEST_CASE("unknown keys are rejected against the documented set", "[config]") {
  const KeyValueConfig cfg = KeyValueConfig::parse_string("epochs = 5\nlr = 0.1\n");
  CHECK_NOTHROW(cfg.require_known_keys({"epochs", "lr", "seed"}));
  try {
    cfg.require_known_keys({"epochs"});
    FAIL("expected InvalidConfig");
  } catch (const InvalidConfig& e) {
    CHECK(std::string(e.what()).find("'lr'") != std::string::npos);
  }
}

TEST_CASE("profile selection is limited to paper and toy", "[config]") {
  CHECK(parse_profile(KeyValueConfig::parse_string("")) == "toy");
  CHECK(parse_profile(KeyValueConfig::parse_string("profile = paper\n")) == "paper");
  CHECK(parse_profile(KeyValueConfig::parse_string("profile = toy\n")) == "toy");
  CHECK_THROWS_AS(parse_profile(KeyValueConfig::parse_string("profile = huge\n")), InvalidConfig);
}

TEST_CASE("pretrain config loader applies profiles then overrides", "[config]") {
  SECTION("toy defaults") {
    const PretrainRunConfig run = load_pretrain_config(KeyValueConfig::parse_string(""));
    CHECK(run.profile == "toy");
    CHECK(run.backbone.depth == 4);
    CHECK(run.backbone.embed_dim == 64);
    CHECK(run.backbone.patches == 16);
    CHECK(run.backbone.mask_ratio == 0.6);
    CHECK(run.pretrain.epochs == 30);
    CHECK(run.pretrain.warmup_epochs == 3);
    CHECK(run.pretrain.batch_size == 8);
    CHECK(run.pretrain.lambda_rec == 1.0);
    CHECK(run.pretrain.lambda_aff == 0.1);
    CHECK(run.pretrain.lambda_div == 0.2);
    CHECK(run.teacher_dim == 16);
  }

  SECTION("paper profile") {
    const PretrainRunConfig run =
        load_pretrain_config(KeyValueConfig::parse_string("profile = paper\n"));
    CHECK(run.backbone.depth == 12);
    CHECK(run.backbone.embed_dim == 384);
    CHECK(run.backbone.heads == 6);
    CHECK(run.backbone.patches == 64);
    CHECK(run.backbone.group_size == 32);
    CHECK(run.pretrain.epochs == 150);
    CHECK(run.pretrain.warmup_epochs == 15);
    CHECK(run.pretrain.batch_size == 128);
    CHECK(run.pretrain.lr == 1e-4);
  }

  SECTION("overrides replace individual fields") {
    const PretrainRunConfig run = load_pretrain_config(KeyValueConfig::parse_string(
        "lambda_div = 0\n"
        "epochs = 5\n"
        "batch_size = 2\n"
        "lr = 0.001\n"
        "warmup_epochs = 1\n"
        "mask_ratio = 0.5\n"
        "seed = 77\n"));
    CHECK(run.pretrain.lambda_div == 0.0);
    CHECK(run.pretrain.lambda_rec == 1.0);  // untouched default
    CHECK(run.pretrain.epochs == 5);
    CHECK(run.pretrain.batch_size == 2);
    CHECK(run.pretrain.lr == 0.001);
    CHECK(run.pretrain.warmup_epochs == 1);
    CHECK(run.backbone.mask_ratio == 0.5);
    CHECK(run.pretrain.seed == 77);
  }

  SECTION("unknown keys and invalid values are rejected") {
    CHECK_THROWS_AS(load_pretrain_config(KeyValueConfig::parse_string("lambda_typo = 1\n")),
                    InvalidConfig);
    CHECK_THROWS_AS(load_pretrain_config(KeyValueConfig::parse_string("epochs = 0\n")),
                    InvalidConfig);
    CHECK_THROWS_AS(load_pretrain_config(KeyValueConfig::parse_string("epochs = 2.5\n")),
                    InvalidConfig);
    CHECK_THROWS_AS(load_pretrain_config(KeyValueConfig::parse_string("mask_ratio = 1.2\n")),
                    InvalidConfig);
    CHECK_THROWS_AS(
        load_pretrain_config(KeyValueConfig::parse_string("warmup_epochs = 40\n")),  // > toy epochs
        InvalidConfig);
  }
}

TEST_CASE("finetune config loader applies profiles then overrides", "[config]") {
  SECTION("toy defaults") {
    const FinetuneRunConfig run = load_finetune_config(KeyValueConfig::parse_string(""));
    CHECK(run.profile == "toy");
    CHECK(run.finetune.epochs == 60);
    CHECK(run.finetune.batch_size == 8);
    CHECK(run.finetune.lr_backbone == 1e-5);
    CHECK(run.finetune.lr_new == 1e-4);
    CHECK(run.cast.fusion_depth == 2);
    CHECK(run.cast.shared_dim == 64);
    CHECK(run.cast.lambda_focal == run.finetune.lambda_focal);
    CHECK(run.cast.lambda_dice == run.finetune.lambda_dice);
  }

  SECTION("paper profile") {
    const FinetuneRunConfig run =
        load_finetune_config(KeyValueConfig::parse_string("profile = paper\n"));
    CHECK(run.finetune.epochs == 100);
    CHECK(run.finetune.batch_size == 16);
    CHECK(run.cast.fusion_depth == 6);
    CHECK(run.cast.shared_dim == 384);
    CHECK(run.backbone.depth == 12);
  }

  SECTION("overrides replace individual fields and stay consistent") {
    const FinetuneRunConfig run = load_finetune_config(KeyValueConfig::parse_string(
        "epochs = 4\n"
        "batch_size = 2\n"
        "lr_backbone = 0\n"
        "lr_new = 0.002\n"
        "lambda_focal = 0.25\n"
        "lambda_dice = 0.5\n"
        "fusion_depth = 1\n"
        "seed = 12\n"));
    CHECK(run.finetune.epochs == 4);
    CHECK(run.finetune.batch_size == 2);
    CHECK(run.finetune.lr_backbone == 0.0);
    CHECK(run.finetune.lr_new == 0.002);
    CHECK(run.finetune.lambda_focal == 0.25);
    CHECK(run.finetune.lambda_dice == 0.5);
    CHECK(run.cast.fusion_depth == 1);
    CHECK(run.cast.lambda_focal == 0.25);  // mirrored into the model config
    CHECK(run.cast.lambda_dice == 0.5);
    CHECK(run.finetune.seed == 12);
  }

  SECTION("unknown keys and invalid values are rejected") {
    CHECK_THROWS_AS(load_finetune_config(KeyValueConfig::parse_string("mask_ratio = 0.5\n")),
                    InvalidConfig);  // a pretrain key, not documented here
    CHECK_THROWS_AS(load_finetune_config(KeyValueConfig::parse_string("lr_new = 0\n")),
                    InvalidConfig);
    CHECK_THROWS_AS(load_finetune_config(KeyValueConfig::parse_string("fusion_depth = 0\n")),
                    InvalidConfig);
    CHECK_THROWS_AS(load_finetune_config(KeyValueConfig::parse_string("lambda_dice = -1\n")),
                    InvalidConfig);
  }
}
