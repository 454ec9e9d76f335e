#include <doctest.h>

#include <filesystem>

#include "csam/checkpoint.hpp"
#include "csam/config.hpp"

using namespace csam;

namespace {

constexpr const char* kFull = R"(seed = 42

[model]
levels = 3
base_channels = 4
num_classes = 2
slices = 6
wiring = unetpp
csam_levels = 1,0,1
rank = 2
kernel = 5

[pipeline]
f_pre = stack
stack_neighbors = 2
f_mid = csam
f_post = slice_attention

[train]
lr = 0.001
epochs = 3
loss = focal
focal_gamma = 1.5

[augment]
crop_height = 24
crop_width = 24
hflip = true
gamma = yes

[phantom]
slices = 6
height = 32
width = 32
spacing_z = 4.5
num_classes = 2
intensities = 0, 0.8

[eval]
mc_samples = 5
bins = 10
uncertainty = false

[data]
manifest = data/manifest.tsv
train_folds = 0,1,2
eval_folds = 3
)";

}  // namespace

TEST_CASE("full config parses") {
  const RunConfig c = parse_run_config(kFull);
  CHECK(c.require_seed() == 42);
  CHECK(c.train.seed == 42);
  CHECK(c.phantom.seed == 42);
  const auto& b = c.network.backbone;
  CHECK(b.levels == 3);
  CHECK(b.wiring == Wiring::kUNetPlusPlus);
  CHECK(b.csam_levels == std::vector<bool>{true, false, true});
  CHECK(b.kernel == 5);
  CHECK(c.network.pipeline.f_pre == PreStage::kStack);
  CHECK(c.network.pipeline.stack_neighbors == 2);
  CHECK(c.network.pipeline.f_post == PostStage::kSliceAttention);
  CHECK(c.train.adam.lr == 0.001);
  CHECK(c.train.loss == LossKind::kFocal);
  CHECK(c.train.focal_gamma == 1.5);
  CHECK(c.train.augment.crop_height == 24u);
  CHECK(c.train.augment.hflip);
  CHECK(c.train.augment.gamma);
  CHECK(c.phantom.spacing.z_mm == 4.5);
  CHECK(c.phantom.intensities == std::vector<double>{0.0, 0.8});
  CHECK(c.eval.mc_samples == 5);
  CHECK_FALSE(c.eval.uncertainty);
  CHECK(c.data.train_folds == std::vector<std::size_t>{0, 1, 2});
  CHECK(c.data.eval_folds == std::vector<std::size_t>{3});
}

TEST_CASE("empty config gives defaults and no seed") {
  const RunConfig c = parse_run_config("");
  CHECK_FALSE(c.seed.has_value());
  CHECK_THROWS_AS(c.require_seed(), ConfigError);
  CHECK(c.network.backbone.levels == BackboneConfig{}.levels);
  CHECK(c.train.adam.lr == 1e-4);
  CHECK(c.eval.mc_samples == 20);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_run_config("[model]\nlayers = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[optimizer]\nlr = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("colour = red\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[model]\nlevels = three\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[model]\nlevels = 3x\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[model]\nwiring = resnet\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[train]\nlr = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[train]\nloss = hinge\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[model]\nrank = 9\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[model]\ncsam_levels = 1,0\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[phantom]\nslices = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("seed = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[model\n"), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.ini"), ConfigError);
}

TEST_CASE("config text round trip") {
  const RunConfig c = parse_run_config(kFull);
  const std::string text = to_text(c);
  CHECK(to_text(parse_run_config(text)) == text);
  const NetworkConfig n = parse_network_config(network_to_text(c.network));
  CHECK(network_to_text(n) == network_to_text(c.network));
  CHECK_THROWS_AS(parse_network_config("[train]\nlr = 1\n"), ConfigError);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const RunConfig c = parse_run_config(kFull);
  SegmentationNet net(c.network, 7);
  const auto bytes = encode_checkpoint(net);
  SegmentationNet back = decode_checkpoint(bytes);
  CHECK(network_to_text(back.config()) == network_to_text(net.config()));
  auto a = net.parameters(), b = back.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    const auto da = a[i].tensor->data(), db = b[i].tensor->data();
    CHECK(std::equal(da.begin(), da.end(), db.begin(), db.end()));
  }
  CHECK(encode_checkpoint(back) == bytes);
  SegmentationNet same_seed(c.network, 7);
  CHECK(encode_checkpoint(same_seed) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "csam_test_ckpt.bin";
  save_checkpoint(net, path);
  SegmentationNet loaded = load_checkpoint(path);
  CHECK(encode_checkpoint(loaded) == bytes);
}

TEST_CASE("checkpoint corruption is detected") {
  NetworkConfig n;
  n.backbone.levels = 2;
  n.backbone.base_channels = 2;
  n.backbone.kernel = 3;
  SegmentationNet net(n, 1);
  const auto bytes = encode_checkpoint(net);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
  bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), CheckpointError);
}
