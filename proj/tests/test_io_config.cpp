#include <doctest.h>
#include <mfr/blocks.hpp>
#include <mfr/checkpoint.hpp>
#include <mfr/config.hpp>
#include <mfr/image.hpp>

#include <filesystem>
#include <fstream>

using namespace mfr;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("mfr_io_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("ppm round trip") {
  auto dir = fresh_dir("ppm");
  Image img = Image::solid(7, 5, 1, 2, 3);
  img.at(6, 4)[0] = 255;
  img.at(0, 0)[2] = 77;
  const auto path = (dir / "img.ppm").string();
  write_ppm(path, img);
  Image r = read_ppm(path);
  CHECK(r.width == 7);
  CHECK(r.height == 5);
  CHECK(r.pix == img.pix);

  int w = 0, h = 0;
  read_ppm_size(path, &w, &h);
  CHECK(w == 7);
  CHECK(h == 5);
}

TEST_CASE("ppm parser rejects malformed input") {
  auto dir = fresh_dir("ppm_bad");
  auto write_text = [&](const std::string& name, const std::string& text) {
    std::ofstream f(dir / name, std::ios::binary);
    f << text;
    f.close();
    return (dir / name).string();
  };
  CHECK_THROWS_AS(read_ppm((dir / "absent.ppm").string()), IoError);
  CHECK_THROWS_AS(read_ppm(write_text("p3.ppm", "P3\n2 2\n255\n")), ParseError);
  CHECK_THROWS_AS(read_ppm(write_text("max.ppm", "P6\n2 2\n65535\n")), ParseError);
  CHECK_THROWS_AS(read_ppm(write_text("neg.ppm", "P6\n-2 2\n255\n")), ParseError);
  CHECK_THROWS_AS(read_ppm(write_text("trunc.ppm", "P6\n2 2\n255\nab")), ParseError);
  // comments in the header are legal
  Image ok = read_ppm(write_text("comment.ppm", "P6\n# size\n1 1\n255\nabc"));
  CHECK(ok.width == 1);
  CHECK(ok.pix[0] == 'a');
}

TEST_CASE("weight file round trip is exact") {
  auto dir = fresh_dir("mfrw");
  std::vector<NamedTensorData> tensors(2);
  tensors[0].name = "layer.weight";
  tensors[0].shape = {2, 3};
  tensors[0].data = {1.5f, -2.0f, 0.25f, 1e-8f, 3e7f, -0.0f};
  tensors[1].name = "layer.bias";
  tensors[1].shape = {3};
  tensors[1].data = {0.0f, 1.0f, 2.0f};
  const auto path = (dir / "w.ckpt").string();
  write_weights(path, tensors);
  auto r = read_weights(path);
  REQUIRE(r.size() == 2);
  CHECK(r[0].name == "layer.weight");
  CHECK(r[0].shape == Shape{2, 3});
  CHECK(r[0].data == tensors[0].data);
  CHECK(r[1].shape == Shape{3});
  CHECK(r[1].data == tensors[1].data);

  CHECK_THROWS_AS(read_weights((dir / "absent.ckpt").string()), IoError);
  std::ofstream bad(dir / "bad.ckpt", std::ios::binary);
  bad << "WHAT";
  bad.close();
  CHECK_THROWS_AS(read_weights((dir / "bad.ckpt").string()), ParseError);
}

TEST_CASE("collect and apply weights over a model") {
  Rng rng(101);
  Backbone<float> a, b;
  a.init(BackboneConfig::toy(), rng);
  b.init(BackboneConfig::toy(), rng);  // different init draw

  // make running stats meaningful before the snapshot
  auto x = Tensor<float>::randn({2, 3, 112, 112}, rng);
  a.forward(x, Mode::train, rng);

  auto snap = collect_weights(a.params(), a.buffers());
  apply_weights(snap, b.params(), b.buffers());

  Rng r1(1);
  auto ea = a.forward(x, Mode::eval, r1);
  auto eb = b.forward(x, Mode::eval, r1);
  for (std::int64_t i = 0; i < ea.size(); ++i) CHECK(ea.data()[i] == eb.data()[i]);
}

TEST_CASE("apply_weights validation names the offender") {
  Rng rng(102);
  Backbone<float> net;
  net.init(BackboneConfig::toy(), rng);
  auto snap = collect_weights(net.params(), net.buffers());

  auto missing = snap;
  missing.erase(missing.begin());  // drop one tensor
  try {
    apply_weights(missing, net.params(), net.buffers());
    FAIL("expected KeyError");
  } catch (const KeyError& e) {
    CHECK(std::string(e.what()).find("stem.c1.conv.weight") != std::string::npos);
  }

  auto shape_clash = snap;
  shape_clash[0].shape = {1, 1, 1, 1};
  shape_clash[0].data = {0.0f};
  try {
    apply_weights(shape_clash, net.params(), net.buffers());
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("stem.c1.conv.weight") != std::string::npos);
  }

  auto extra = snap;
  NamedTensorData stray;
  stray.name = "not.in.model";
  stray.shape = {1};
  stray.data = {1.0f};
  extra.push_back(stray);
  CHECK_THROWS_AS(apply_weights(extra, net.params(), net.buffers()), KeyError);
}

TEST_CASE("config text parsing") {
  auto kv = parse_config_text("a.b = 1\n# comment\n  c.d=hello # trailing\n\n", "test");
  CHECK(kv.size() == 2);
  CHECK(kv.at("a.b") == "1");
  CHECK(kv.at("c.d") == "hello");

  CHECK_THROWS_AS(parse_config_text("keyonly\n", "test"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("= 3\n", "test"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("x = 1\nx = 2\n", "test"), ConfigError);
  try {
    parse_config_text("ok = 1\nbroken\n", "file.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("file.cfg:2") != std::string::npos);
  }
}

TEST_CASE("run config defaults and overrides") {
  RunConfig def = RunConfig::from_map({});
  CHECK(def.model_preset == "toy");
  CHECK(def.loss_family == "arcface");
  CHECK(def.loss_margin == doctest::Approx(0.5));
  CHECK(def.train_batch_size == 64);
  CHECK(def.eval_far_targets.size() == 3);
  CHECK_NOTHROW(def.validate());

  RunConfig cos = RunConfig::from_map({{"loss.family", "cosface"}});
  CHECK(cos.loss_margin == doctest::Approx(0.35));  // family default kicks in
  RunConfig soft = RunConfig::from_map({{"loss.family", "softmax"}});
  CHECK(soft.loss_margin == doctest::Approx(0.0));
  RunConfig pinned =
      RunConfig::from_map({{"loss.family", "cosface"}, {"loss.margin", "0.2"}});
  CHECK(pinned.loss_margin == doctest::Approx(0.2));

  RunConfig fars = RunConfig::from_map({{"eval.far_targets", "0.01,0.001"}});
  REQUIRE(fars.eval_far_targets.size() == 2);
  CHECK(fars.eval_far_targets[1] == doctest::Approx(0.001));

  CHECK_THROWS_AS(RunConfig::from_map({{"no.such.key", "1"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_map({{"train.batch_size", "many"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_map({{"model.se_enabled", "yes"}}), ConfigError);
}

TEST_CASE("run config validation") {
  auto with = [](std::map<std::string, std::string> kv) { return RunConfig::from_map(kv); };
  CHECK_THROWS_AS(with({{"train.batch_size", "1"}}).validate(), ConfigError);
  CHECK_THROWS_AS(with({{"optim.momentum", "1.0"}}).validate(), ConfigError);
  CHECK_THROWS_AS(with({{"ema.decay", "1.0"}}).validate(), ConfigError);
  CHECK_THROWS_AS(with({{"sampler.mask_ratio_cap", "1.0"}}).validate(), ConfigError);
  CHECK_THROWS_AS(with({{"eval.convention", "percent"}}).validate(), ConfigError);
  CHECK_THROWS_AS(with({{"eval.track_far", "0"}}).validate(), ConfigError);
  CHECK_THROWS_AS(with({{"model.preset", "resnet99"}}).backbone(), ConfigError);
  CHECK_THROWS_AS(with({{"loss.family", "triplet"}}), ConfigError);
}

TEST_CASE("config echo round trips through the parser") {
  RunConfig cfg = RunConfig::from_map({{"optim.base_lr", "0.05"},
                                       {"train.seed", "1234"},
                                       {"data.manifest", "/tmp/m.csv"},
                                       {"loss.margin", "0.45"}});
  const std::string echoed = cfg.echo_text();
  RunConfig back = RunConfig::from_map(parse_config_text(echoed, "echo"));
  CHECK(back.optim_base_lr == cfg.optim_base_lr);
  CHECK(back.train_seed == cfg.train_seed);
  CHECK(back.data_manifest == cfg.data_manifest);
  CHECK(back.loss_margin == cfg.loss_margin);
  CHECK(back.echo_text() == echoed);  // fixed point
}

TEST_CASE("run config materializes sub-configs") {
  RunConfig cfg = RunConfig::from_map({{"model.preset", "toy"}});
  auto bb = cfg.backbone();
  CHECK(bb.stem_out == 16);
  CHECK_NOTHROW(bb.validate());

  auto margin = cfg.margin(42);
  CHECK(margin.class_count == 42);
  CHECK(margin.family == LossFamily::arcface);
  CHECK_NOTHROW(margin.validate());

  auto sched = cfg.schedule(10);
  CHECK(sched.steps_per_epoch == 10);
  CHECK_NOTHROW(sched.validate());

  auto aug = cfg.photometric_aug();
  CHECK(aug.crop_pad == 0);  // the random crop runs after alignment instead
  CHECK(aug.p_hflip == doctest::Approx(0.5));

  auto samp = cfg.sampler(99);
  CHECK(samp.seed == 99);
  CHECK(samp.mask_ratio_cap == doctest::Approx(0.10));

  auto resnet = RunConfig::from_map({{"model.preset", "resnet34"}}).backbone();
  CHECK(resnet.widths.size() == 4);
  CHECK(resnet.widths[3] == 512);
}
