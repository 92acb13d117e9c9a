#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "pathscan/checkpoint.hpp"
#include "pathscan/config.hpp"
#include "pathscan/error.hpp"
#include "pathscan/io.hpp"
#include "pathscan/optim.hpp"
#include "support/fixtures.hpp"

using namespace pathscan;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kContract;
}

std::string message_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("trajectory jsonl") {
  SUBCASE("round trip groups by slide and reader") {
    std::mt19937_64 rng(4);
    std::vector<RawTrajectory> in{fx::random_traj(rng, 20), fx::random_traj(rng, 5)};
    in[1].reader_id = "r2";
    in[1].expertise = Expertise::kSpecialist;
    std::stringstream ss;
    write_trajectories(ss, in);
    const auto back = read_trajectories(ss);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(back[i].wsi_id == in[i].wsi_id);
      CHECK(back[i].reader_id == in[i].reader_id);
      CHECK(back[i].expertise == in[i].expertise);
      REQUIRE(back[i].samples.size() == in[i].samples.size());
      for (std::size_t k = 0; k < in[i].samples.size(); ++k) {
        CHECK(back[i].samples[k].x == in[i].samples[k].x);
        CHECK(back[i].samples[k].t_ms == in[i].samples[k].t_ms);
        CHECK(back[i].samples[k].mag == in[i].samples[k].mag);
      }
    }
  }
  SUBCASE("interleaved records and blank lines") {
    std::istringstream in(
        R"({"wsi":"a","reader":"r","expertise":"resident","x":1,"y":2,"mag":1,"t_ms":0})"
        "\n\n"
        R"({"wsi":"b","reader":"r","expertise":"general","x":1,"y":2,"mag":2,"t_ms":0})"
        "\n"
        R"({"wsi":"a","reader":"r","expertise":"resident","x":3,"y":4,"mag":2,"t_ms":10})"
        "\n");
    const auto t = read_trajectories(in);
    REQUIRE(t.size() == 2);
    CHECK(t[0].samples.size() == 2);
    CHECK(t[1].wsi_id == "b");
  }
  SUBCASE("errors name the line") {
    std::istringstream bad_mag(
        R"({"wsi":"a","reader":"r","expertise":"resident","x":1,"y":2,"mag":1,"t_ms":0})"
        "\n"
        R"({"wsi":"a","reader":"r","expertise":"resident","x":1,"y":2,"mag":3,"t_ms":5})");
    const std::string msg = message_of([&] { read_trajectories(bad_mag); });
    CHECK(msg.find("line 2") != std::string::npos);
    std::istringstream bad_json("{\"wsi\":");
    CHECK(kind_of([&] { read_trajectories(bad_json); }) == ErrorKind::kFormat);
    std::istringstream missing(R"({"wsi":"a","reader":"r","expertise":"resident","x":1,"mag":1,"t_ms":0})");
    CHECK(message_of([&] { read_trajectories(missing); }).find("'y'") != std::string::npos);
    std::istringstream expertise(R"({"wsi":"a","reader":"r","expertise":"chief","x":1,"y":1,"mag":1,"t_ms":0})");
    CHECK(kind_of([&] { read_trajectories(expertise); }) == ErrorKind::kFormat);
    std::istringstream neg(R"({"wsi":"a","reader":"r","expertise":"resident","x":1,"y":1,"mag":1,"t_ms":-1})");
    CHECK(kind_of([&] { read_trajectories(neg); }) == ErrorKind::kFormat);
  }
  SUBCASE("empty input") {
    std::istringstream empty("");
    CHECK(read_trajectories(empty).empty());
  }
}

TEST_CASE("scanpath jsonl") {
  const Scanpath sp = fx::path({fx::fix(1.5, 2, 1, 100), fx::fix(3, 4.25, 10, 0)});
  std::stringstream ss;
  write_scanpaths(ss, {sp, sp}, nlohmann::json{{"k", 1}});
  const auto back = read_scanpaths(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].fixations == sp.fixations);
  CHECK(scanpath_to_json(sp, {{"k", 1}})["meta"]["k"] == 1);
  CHECK_FALSE(scanpath_to_json(sp).contains("meta"));

  std::istringstream bad(R"({"wsi":"a","reader":"r","fixations":[{"x":1,"y":1,"mag":5}]})");
  const std::string msg = message_of([&] { read_scanpaths(bad); });
  CHECK(msg.find("line 1") != std::string::npos);
  CHECK(kind_of([] { read_scanpaths(std::filesystem::path("/nonexistent/x.jsonl")); }) ==
        ErrorKind::kInvalidInput);
}

TEST_CASE("config") {
  const Config c = Config::parse(
      "seed = 7  # top level\n"
      "name = \"a # not a comment\"\n"
      "\n"
      "[scanpath]\n"
      "lr = 3e-3\n"
      "class_weights = [1, 2, 0.5]\n"
      "flag = true\n");
  CHECK(c.get_u64("seed", 0) == 7);
  CHECK(c.get_string("name", "") == "a # not a comment");
  CHECK(c.get_double("scanpath.lr", 0) == doctest::Approx(3e-3));
  CHECK(c.get_doubles("scanpath.class_weights", {}) == std::vector<double>{1, 2, 0.5});
  CHECK(c.get_bool("scanpath.flag", false));
  CHECK(c.get_int("scanpath.missing", -3) == -3);
  CHECK(c.to_json()["scanpath"]["lr"] == 3e-3);
  CHECK(Config::parse(c.to_text()).to_json() == c.to_json());

  CHECK(kind_of([] { Config::parse("a = 1\na = 2\n"); }) == ErrorKind::kFormat);
  CHECK(message_of([] { Config::parse("a = 1\na = 2\n"); }).find("config line 2") != std::string::npos);
  CHECK(kind_of([] { Config::parse("a = \n"); }) == ErrorKind::kFormat);
  CHECK(kind_of([] { Config::parse("a = [[1]]\n"); }) == ErrorKind::kFormat);
  CHECK(kind_of([] { Config::parse("[broken\n"); }) == ErrorKind::kFormat);
  CHECK(kind_of([&] { c.get_double("name", 0); }) != ErrorKind::kContract);
  CHECK(kind_of([&] { Config::parse("n = -1").get_size("n", 0); }) != ErrorKind::kContract);
}

TEST_CASE("checkpoint") {
  nn::ParamStore ps;
  ps.add("w", {2, 3}, {0.5, -1.25, 2, 3, 4, 5});
  ps.add("b", {3}, {0.125, 0, 1});
  ad::backward(ad::sum(ad::mul(ps.get("w"), ps.get("w"))));
  nn::AdamState adam;
  nn::adam_step(ps, adam, nn::AdamConfig{});

  Checkpoint ck;
  ck.metadata = R"({"kind":"test"})";
  store_params(ck, ps, &adam);
  const auto bytes = encode_checkpoint(ck);
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.metadata == ck.metadata);
  CHECK(encode_checkpoint(back) == bytes);

  nn::ParamStore ps2;
  ps2.add("w", {2, 3}, std::vector<double>(6, 0.0));
  ps2.add("b", {3}, std::vector<double>(3, 0.0));
  nn::AdamState adam2;
  restore_params(back, ps2, &adam2);
  CHECK(adam2.step == adam.step);

  SUBCASE("restored state continues bit-identically") {
    auto step = [](nn::ParamStore& p, nn::AdamState& a) {
      p.zero_grad();
      ad::backward(ad::sum(ad::mul(p.get("w"), p.get("w"))));
      nn::adam_step(p, a, nn::AdamConfig{});
    };
    step(ps, adam);
    step(ps2, adam2);
    for (const char* name : {"w", "b"}) {
      const auto a = ps.get(name).values();
      const auto b = ps2.get(name).values();
      CHECK(std::vector<double>(a.begin(), a.end()) == std::vector<double>(b.begin(), b.end()));
    }
  }
  SUBCASE("corruption is detected") {
    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x10;
    CHECK(kind_of([&] { decode_checkpoint(flipped); }) == ErrorKind::kFormat);
    auto cut = bytes;
    cut.resize(cut.size() - 5);
    CHECK(kind_of([&] { decode_checkpoint(cut); }) == ErrorKind::kFormat);
  }
  SUBCASE("shape mismatch on restore") {
    nn::ParamStore wrong;
    wrong.add("w", {3, 2}, std::vector<double>(6, 0.0));
    wrong.add("b", {3}, std::vector<double>(3, 0.0));
    CHECK(kind_of([&] { restore_params(back, wrong); }) == ErrorKind::kShape);
  }
}
