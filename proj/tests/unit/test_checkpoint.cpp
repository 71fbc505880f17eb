#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "pidimt/core/rng.hpp"
#include "pidimt/model/checkpoint.hpp"
#include "pidimt/model/denoiser.hpp"

using namespace pidimt;

namespace {

DimtConfig tiny_config() {
  DimtConfig cfg;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.n_blocks = 1;
  cfg.n_state = 2;
  cfg.expand = 2;
  cfg.e_shallow = 2;
  cfg.e_deep = 1;
  cfg.top_k = 1;
  cfg.channels = 4;
  cfg.max_agents = 3;
  cfg.max_frames = 4;
  cfg.time_freqs = 2;
  return cfg;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/pidimt_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("checkpoint round-trip restores every parameter bitwise") {
  auto cfg = tiny_config();
  Denoiser<float> model;
  model.build(cfg);
  Rng rng(81);
  model.init(rng);
  ParamMap<float> pm;
  model.collect(pm, "model");

  TempFile f("roundtrip.ckpt");
  nlohmann::json header{{"step", 1234}, {"seed", 99}, {"model", dimt_config_to_json(cfg)}};
  save_checkpoint(f.path, pm, header);

  Denoiser<float> loaded;
  loaded.build(cfg);
  Rng rng2(500);
  loaded.init(rng2);
  ParamMap<float> pm2;
  loaded.collect(pm2, "model");
  auto hdr = load_checkpoint(f.path, pm2);

  REQUIRE(hdr.at("step").get<int>() == 1234);
  REQUIRE(hdr.at("seed").get<int>() == 99);
  auto cfg2 = dimt_config_from_json(hdr.at("model"));
  REQUIRE(cfg2.d == cfg.d);
  REQUIRE(cfg2.top_k == cfg.top_k);
  REQUIRE(block_order_string(cfg2.block_order) == block_order_string(cfg.block_order));

  REQUIRE(pm.entries.size() == pm2.entries.size());
  for (std::size_t i = 0; i < pm.entries.size(); ++i) {
    REQUIRE(pm.entries[i].first == pm2.entries[i].first);
    const auto& a = *pm.entries[i].second;
    const auto& b = *pm2.entries[i].second;
    REQUIRE(a.shape() == b.shape());
    for (std::size_t j = 0; j < a.numel(); ++j) REQUIRE(a[j] == b[j]);
  }
}

TEST_CASE("config json round-trip preserves every field") {
  DimtConfig cfg = tiny_config();
  cfg.gate_noise_sigma0 = 0.25;
  cfg.gate_noise_end_step = 777;
  cfg.block_order = parse_block_order("moe,gated_mlp,mamba");
  auto j = dimt_config_to_json(cfg);
  auto back = dimt_config_from_json(j);
  REQUIRE(back.d == cfg.d);
  REQUIRE(back.heads == cfg.heads);
  REQUIRE(back.n_blocks == cfg.n_blocks);
  REQUIRE(back.n_state == cfg.n_state);
  REQUIRE(back.expand == cfg.expand);
  REQUIRE(back.e_shallow == cfg.e_shallow);
  REQUIRE(back.e_deep == cfg.e_deep);
  REQUIRE(back.top_k == cfg.top_k);
  REQUIRE(back.channels == cfg.channels);
  REQUIRE(back.max_agents == cfg.max_agents);
  REQUIRE(back.max_frames == cfg.max_frames);
  REQUIRE(back.time_freqs == cfg.time_freqs);
  REQUIRE(back.gate_noise_sigma0 == cfg.gate_noise_sigma0);
  REQUIRE(back.gate_noise_end_step == cfg.gate_noise_end_step);
  REQUIRE(back.block_order == cfg.block_order);
}

TEST_CASE("rejects files that are not checkpoints") {
  TempFile f("notckpt.bin");
  {
    std::ofstream os(f.path, std::ios::binary);
    os << "NOTACKPTxxxxxxxxxxxxxxxx";
  }
  Tensor<float> t(Shape{2, 2});
  ParamMap<float> pm;
  pm.add("t", &t);
  REQUIRE_THROWS_WITH(load_checkpoint(f.path, pm),
                      Catch::Matchers::ContainsSubstring("not a checkpoint"));
}

TEST_CASE("rejects an unsupported container version") {
  auto cfg = tiny_config();
  Denoiser<float> model;
  model.build(cfg);
  Rng rng(82);
  model.init(rng);
  ParamMap<float> pm;
  model.collect(pm, "model");
  TempFile f("badver.ckpt");
  save_checkpoint(f.path, pm, nlohmann::json::object());
  {
    std::fstream fs(f.path, std::ios::in | std::ios::out | std::ios::binary);
    fs.seekp(6);
    fs.write("99", 2);
  }
  REQUIRE_THROWS_WITH(load_checkpoint(f.path, pm),
                      Catch::Matchers::ContainsSubstring("version"));
}

TEST_CASE("rejects mismatched architectures") {
  auto cfg = tiny_config();
  Denoiser<float> model;
  model.build(cfg);
  Rng rng(83);
  model.init(rng);
  ParamMap<float> pm;
  model.collect(pm, "model");
  TempFile f("mismatch.ckpt");
  save_checkpoint(f.path, pm, nlohmann::json::object());

  SECTION("different shapes") {
    auto cfg2 = cfg;
    cfg2.d = 12;
    cfg2.heads = 2;
    Denoiser<float> other;
    other.build(cfg2);
    ParamMap<float> pm2;
    other.collect(pm2, "model");
    REQUIRE_THROWS_AS(load_checkpoint(f.path, pm2), std::runtime_error);
  }
  SECTION("different parameter count") {
    auto cfg2 = cfg;
    cfg2.n_blocks = 2;
    Denoiser<float> other;
    other.build(cfg2);
    ParamMap<float> pm2;
    other.collect(pm2, "model");
    REQUIRE_THROWS_WITH(load_checkpoint(f.path, pm2),
                        Catch::Matchers::ContainsSubstring("parameters"));
  }
  SECTION("different names") {
    Denoiser<float> other;
    other.build(cfg);
    ParamMap<float> pm2;
    other.collect(pm2, "other");
    REQUIRE_THROWS_WITH(load_checkpoint(f.path, pm2),
                        Catch::Matchers::ContainsSubstring("unknown parameter"));
  }
}

TEST_CASE("rejects truncated files") {
  auto cfg = tiny_config();
  Denoiser<float> model;
  model.build(cfg);
  Rng rng(84);
  model.init(rng);
  ParamMap<float> pm;
  model.collect(pm, "model");
  TempFile f("trunc.ckpt");
  save_checkpoint(f.path, pm, nlohmann::json::object());
  std::string data;
  {
    std::ifstream is(f.path, std::ios::binary);
    data.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  }
  {
    std::ofstream os(f.path, std::ios::binary | std::ios::trunc);
    os.write(data.data(), static_cast<std::streamsize>(data.size() / 2));
  }
  REQUIRE_THROWS_AS(load_checkpoint(f.path, pm), std::runtime_error);
}

TEST_CASE("missing checkpoint file throws") {
  Tensor<float> t(Shape{2});
  ParamMap<float> pm;
  pm.add("t", &t);
  REQUIRE_THROWS_AS(load_checkpoint("/tmp/pidimt_no_such_file.ckpt", pm), std::runtime_error);
}
