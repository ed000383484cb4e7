#include "doctest.h"
#include "mvhand/config.hpp"

using namespace mvhand;

TEST_CASE("config text round-trips and hashes are stable") {
  ExperimentConfig c;
  c.set("sima.beta", "0.25");
  c.set("model.decoder=48, 32,16");
  c.set("fusion.vertex = pool");
  const auto back = ExperimentConfig::parse(c.to_text());
  CHECK(back.entries() == c.entries());
  CHECK(back.config_hash() == c.config_hash());
  CHECK(back.structural_hash() == c.structural_hash());
  CHECK(back.model.decoder == std::vector<int>{48, 32, 16});
  CHECK(back.model.vertex_fusion == fusion::Mode::kPool);
  CHECK(back.beta == 0.25);
}

TEST_CASE("config parser: comments, blank lines, booleans, errors") {
  const auto c = ExperimentConfig::parse("# header\n\ntrain.iterations = 12  # trailing\nsima.enabled = off\n");
  CHECK(c.iterations == 12);
  CHECK_FALSE(c.sima);
  ExperimentConfig d;
  CHECK_THROWS_AS(d.set("train.nonexistent", "1"), ConfigError);
  CHECK_THROWS_AS(d.set("train.iterations", "12x"), ConfigError);
  CHECK_THROWS_AS(d.set("sima.enabled", "maybe"), ConfigError);
  CHECK_THROWS_AS(d.set("sima.variant", "vi"), ConfigError);
  CHECK_THROWS_AS(d.set("fusion.vertex", "mean"), ConfigError);
  CHECK_THROWS_AS(d.set("no equals sign"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("just words\n"), ConfigError);
  CHECK(d.get("train.target_view") == "sampled");
}

TEST_CASE("structural hash tracks shapes only") {
  ExperimentConfig a, b;
  b.set("train.lr", "0.5");
  CHECK(a.structural_hash() == b.structural_hash());
  CHECK(a.config_hash() != b.config_hash());
  b.set("model.c_v", "96");
  CHECK(a.structural_hash() != b.structural_hash());
  ExperimentConfig c;
  c.set("fusion.vertex", "concat");
  CHECK(a.structural_hash() != c.structural_hash());
}

TEST_CASE("config validation") {
  ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  c.beta = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.beta = 1;
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.batch = 4;
  c.model.image_size = 48;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
