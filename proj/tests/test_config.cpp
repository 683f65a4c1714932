#include <doctest.h>

#include <filesystem>

#include "panp/core/config.hpp"

using namespace panp;

TEST_CASE("config reader fills defaults and collects every problem") {
  auto j = nlohmann::json::parse(R"({"a": 3, "b": "x", "c": {"d": true, "zz": 1}, "extra": 0})");
  int a = 0, b = 7;
  bool d = false;
  double e = 2.5;
  ConfigReader r(j);
  r.get("a", a).get("b", b).get("e", e);
  auto c = r.child("c");
  c.get("d", d);
  c.reject_unknown();
  r.reject_unknown();
  CHECK(a == 3);
  CHECK(b == 7);
  CHECK(d);
  CHECK(e == 2.5);
  REQUIRE(r.errors().size() == 3);
  try {
    r.finish();
    FAIL("expected ConfigError");
  } catch (const ConfigError& err) {
    const std::string msg = err.what();
    CHECK(msg.find("b: expected integer") != std::string::npos);
    CHECK(msg.find("c.zz: unknown key") != std::string::npos);
    CHECK(msg.find("extra: unknown key") != std::string::npos);
  }
}

TEST_CASE("fnv1a reference vectors") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
  // Key order does not matter for the canonical dump.
  CHECK(json_hash(nlohmann::json::parse(R"({"x":1,"y":2})")) == json_hash(nlohmann::json::parse(R"({"y":2,"x":1})")));
}

TEST_CASE("json files") {
  const auto path = (std::filesystem::temp_directory_path() / "panp_cfg_test.json").string();
  write_json(path, {{"k", 1}});
  CHECK(read_json(path)["k"] == 1);
  CHECK_THROWS_AS(read_json(path + ".missing"), ConfigError);
  std::filesystem::remove(path);
}
