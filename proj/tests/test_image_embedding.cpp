#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "doctest.h"
#include "hetddi/image_embedding.hpp"
#include "hetddi/vecmath.hpp"

using namespace hetddi;

namespace {

std::filesystem::path tmpPath(const std::string& stem) {
  return std::filesystem::temp_directory_path() / stem;
}

std::vector<unsigned char> slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(static_cast<bool>(is));
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(is),
                                    std::istreambuf_iterator<char>());
}

// 16x16 input: two conv/pool stages end at 2x2x8 = 32 flattened features.
TowerConfig tinyConfig() {
  TowerConfig cfg;
  cfg.inputH = 16;
  cfg.inputW = 16;
  cfg.convFilters = {4, 8};
  cfg.kernel = 3;
  cfg.pool = 2;
  cfg.fcSizes = {32, 100};
  return cfg;
}

Tensor noiseImage(int size, Rng& rng) {
  std::vector<double> px(static_cast<std::size_t>(size) * size);
  for (auto& v : px) v = rng.uniform();
  return Tensor({size, size, 1}, std::move(px));
}

// Striped test images: class 0 has horizontal bands, class 1 vertical.
Tensor stripeImage(int size, int cls, Rng& rng) {
  std::vector<double> px(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const int band = (cls == 0 ? y : x) % 4 < 2;
      double v = (band ? 0.85 : 0.15) + 0.08 * (rng.uniform() - 0.5);
      px[static_cast<std::size_t>(y) * size + x] = std::clamp(v, 0.0, 1.0);
    }
  }
  return Tensor({size, size, 1}, std::move(px));
}

double maxAbsDiff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

const Parameter* findParam(const SiameseModel& m, const std::string& name) {
  for (const Parameter* p : m.params.list()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

}  // namespace

TEST_CASE("full-scale tower narrows 500 pixels to a 1024-wide flatten") {
  const TowerConfig cfg = TowerConfig::fullScale();
  const auto trace = cfg.spatialTrace();
  const std::vector<std::pair<int, int>> expect{
      {500, 500}, {492, 492}, {164, 164}, {156, 156}, {52, 52},
      {44, 44},   {14, 14},   {6, 6},     {2, 2}};
  CHECK(trace == expect);
  CHECK(cfg.flattenDim() == 1024);
  CHECK(cfg.fcSizes.back() == 100);
}

TEST_CASE("64-pixel inputs do not fit the full-scale tower") {
  TowerConfig cfg;
  cfg.inputH = 64;
  cfg.inputW = 64;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("conv layer 3"),
                       ConfigError);
}

TEST_CASE("desk preset keeps the 100-dim embedding contract") {
  const TowerConfig cfg = TowerConfig::deskScale();
  CHECK(cfg.inputH == 64);
  CHECK(cfg.flattenDim() == 128);

  Rng rng(11);
  SiameseModel m = buildSiamese(cfg, false, rng);
  CHECK(m.params.list().size() == 4 * 4 + 3 * 2);
  CHECK(m.bnStates.size() == 4);
  const Parameter* lastFc = findParam(m, "tower.fc3.W");
  REQUIRE(lastFc != nullptr);
  CHECK(lastFc->shape == std::vector<int>{100, 128});

  Rng imgRng(5);
  const auto emb = embedImage(m, noiseImage(64, imgRng));
  CHECK(emb.size() == 100);
}

TEST_CASE("config validation rejects broken towers") {
  TowerConfig cfg = tinyConfig();
  cfg.fcSizes = {32, 64};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tinyConfig();
  cfg.convFilters.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tinyConfig();
  cfg.pool = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("both towers evaluate the same shared function") {
  Rng rng(3);
  SiameseModel m = buildSiamese(tinyConfig(), false, rng);

  Rng imgRng(8);
  std::vector<double> buf;
  for (int i = 0; i < 2; ++i) {
    const auto img = noiseImage(16, imgRng).values();
    buf.insert(buf.end(), img.begin(), img.end());
  }
  const Tensor batch({2, 16, 16, 1}, std::move(buf));

  Tape tape;
  BoundParams bp(m.params, &tape);
  const Tensor e1 = siameseForward(m, &tape, bp, batch, true);
  const Tensor e2 = siameseForward(m, &tape, bp, batch, true);
  REQUIRE(e1.size() == e2.size());
  for (std::size_t i = 0; i < e1.values().size(); ++i) {
    CHECK(e1.values()[i] == e2.values()[i]);
  }

  const Tensor loss = contrastiveLoss(&tape, e1, e2, {1.0, 1.0}, 1.0);
  CHECK(loss.values()[0] == 0.0);
}

TEST_CASE("initial localisation output is the identity transform") {
  Rng rng(21);
  SiameseModel m = buildSiamese(tinyConfig(), true, rng);
  REQUIRE(findParam(m, "stn.fc2.b") != nullptr);

  Rng imgRng(4);
  std::vector<double> buf;
  for (int i = 0; i < 2; ++i) {
    const auto img = noiseImage(16, imgRng).values();
    buf.insert(buf.end(), img.begin(), img.end());
  }
  const Tensor batch({2, 16, 16, 1}, std::move(buf));

  BoundParams bp(m.params, nullptr);
  const Tensor theta = locnetTheta(nullptr, bp, batch);
  REQUIRE(theta.ndim() == 3);
  CHECK(theta.dim(0) == 2);
  CHECK(theta.dim(1) == 2);
  CHECK(theta.dim(2) == 3);
  const std::vector<double> identity{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
  for (int b = 0; b < 2; ++b) {
    for (int i = 0; i < 6; ++i) {
      CHECK(theta.values()[static_cast<std::size_t>(b) * 6 + i] ==
            identity[static_cast<std::size_t>(i)]);
    }
  }
}

TEST_CASE("identity resampling leaves initial embeddings unchanged") {
  Rng rng(21);
  SiameseModel m = buildSiamese(tinyConfig(), true, rng);
  Rng imgRng(4);
  const Tensor img = noiseImage(16, imgRng);

  const auto withStn = embedImage(m, img);
  m.useStn = false;
  const auto withoutStn = embedImage(m, img);
  CHECK(maxAbsDiff(withStn, withoutStn) == 0.0);
}

TEST_CASE("zero training epochs reproduce the freshly built model") {
  SiameseTrainConfig tc;
  tc.epochs = 0;
  tc.seed = 7;
  SiameseModel trained = trainSiamese({}, {}, tinyConfig(), tc);

  Rng rng(7);
  SiameseModel fresh = buildSiamese(tinyConfig(), false, rng);
  auto a = trained.params.list();
  auto b = fresh.params.list();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK(a[i]->value == b[i]->value);
  }
}

TEST_CASE("training is deterministic for a fixed seed") {
  Rng imgRng(42);
  std::unordered_map<std::string, Tensor> images;
  std::vector<PairExample> pairs;
  for (int i = 0; i < 6; ++i) {
    images.emplace("d" + std::to_string(i), stripeImage(16, i % 2, imgRng));
  }
  pairs.push_back({"d0", "d2", 1});
  pairs.push_back({"d1", "d3", 1});
  pairs.push_back({"d2", "d4", 1});
  pairs.push_back({"d0", "d1", 0});
  pairs.push_back({"d2", "d3", 0});
  pairs.push_back({"d4", "d5", 0});

  SiameseTrainConfig tc;
  tc.epochs = 2;
  tc.batchSize = 4;
  tc.seed = 123;
  SiameseModel m1 = trainSiamese(pairs, images, tinyConfig(), tc);
  SiameseModel m2 = trainSiamese(pairs, images, tinyConfig(), tc);

  const auto e1 = embedImage(m1, images.at("d0"));
  const auto e2 = embedImage(m2, images.at("d0"));
  CHECK(e1 == e2);

  const auto p1 = tmpPath("siamese_det1.bin");
  const auto p2 = tmpPath("siamese_det2.bin");
  saveSiamese(m1, p1.string());
  saveSiamese(m2, p2.string());
  CHECK(slurp(p1) == slurp(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("contrastive training pulls same-class images together") {
  Rng imgRng(9);
  std::unordered_map<std::string, Tensor> images;
  std::vector<std::string> cls0, cls1;
  for (int i = 0; i < 6; ++i) {
    const std::string id0 = "h" + std::to_string(i);
    const std::string id1 = "v" + std::to_string(i);
    images.emplace(id0, stripeImage(16, 0, imgRng));
    images.emplace(id1, stripeImage(16, 1, imgRng));
    cls0.push_back(id0);
    cls1.push_back(id1);
  }
  std::vector<PairExample> pairs;
  for (std::size_t i = 0; i < cls0.size(); ++i) {
    for (std::size_t j = i + 1; j < cls0.size(); ++j) {
      pairs.push_back({cls0[i], cls0[j], 1});
      pairs.push_back({cls1[i], cls1[j], 1});
    }
    for (std::size_t j = 0; j < cls1.size(); ++j) {
      pairs.push_back({cls0[i], cls1[j], 0});
    }
  }

  SiameseTrainConfig tc;
  tc.epochs = 10;
  tc.batchSize = 8;
  tc.lr = 1e-3;
  tc.seed = 17;
  SiameseModel m = trainSiamese(pairs, images, tinyConfig(), tc);

  std::vector<std::vector<double>> emb0, emb1;
  for (const auto& id : cls0) emb0.push_back(embedImage(m, images.at(id)));
  for (const auto& id : cls1) emb1.push_back(embedImage(m, images.at(id)));

  double within = 0.0, cross = 0.0;
  int nw = 0, nc = 0;
  for (std::size_t i = 0; i < emb0.size(); ++i) {
    for (std::size_t j = i + 1; j < emb0.size(); ++j) {
      within += euclidean(emb0[i], emb0[j]);
      within += euclidean(emb1[i], emb1[j]);
      nw += 2;
    }
    for (std::size_t j = 0; j < emb1.size(); ++j) {
      cross += euclidean(emb0[i], emb1[j]);
      ++nc;
    }
  }
  within /= nw;
  cross /= nc;
  CHECK(within < cross);
}

TEST_CASE("training avoids singleton batches") {
  Rng imgRng(2);
  std::unordered_map<std::string, Tensor> images;
  for (int i = 0; i < 4; ++i) {
    images.emplace("d" + std::to_string(i), noiseImage(16, imgRng));
  }
  // five pairs with a batch size of four would leave one behind
  std::vector<PairExample> pairs{{"d0", "d1", 1},
                                 {"d0", "d2", 0},
                                 {"d0", "d3", 1},
                                 {"d1", "d2", 0},
                                 {"d1", "d3", 1}};
  SiameseTrainConfig tc;
  tc.epochs = 1;
  tc.batchSize = 4;
  CHECK_NOTHROW(trainSiamese(pairs, images, tinyConfig(), tc));
}

TEST_CASE("stn models train end to end") {
  Rng imgRng(6);
  std::unordered_map<std::string, Tensor> images;
  for (int i = 0; i < 4; ++i) {
    images.emplace("d" + std::to_string(i), stripeImage(16, i % 2, imgRng));
  }
  std::vector<PairExample> pairs{{"d0", "d2", 1},
                                 {"d1", "d3", 1},
                                 {"d0", "d1", 0},
                                 {"d2", "d3", 0}};
  SiameseTrainConfig tc;
  tc.epochs = 1;
  tc.batchSize = 4;
  tc.useStn = true;
  SiameseModel m = trainSiamese(pairs, images, tinyConfig(), tc);
  CHECK(m.useStn);
  CHECK(embedImage(m, images.at("d0")).size() == 100);
}

TEST_CASE("checkpoints restore the exact model") {
  Rng imgRng(13);
  std::unordered_map<std::string, Tensor> images;
  for (int i = 0; i < 4; ++i) {
    images.emplace("d" + std::to_string(i), stripeImage(16, i % 2, imgRng));
  }
  std::vector<PairExample> pairs{{"d0", "d2", 1},
                                 {"d1", "d3", 1},
                                 {"d0", "d1", 0},
                                 {"d2", "d3", 0}};
  SiameseTrainConfig tc;
  tc.epochs = 1;
  tc.batchSize = 4;
  tc.seed = 31;
  SiameseModel m = trainSiamese(pairs, images, tinyConfig(), tc);

  const auto path = tmpPath("siamese_ckpt.bin");
  saveSiamese(m, path.string());
  SiameseModel back = loadSiamese(path.string());

  CHECK(back.config.inputH == 16);
  CHECK(back.config.convFilters == std::vector<int>{4, 8});
  CHECK(back.config.fcSizes == std::vector<int>{32, 100});
  CHECK_FALSE(back.useStn);
  REQUIRE(back.bnStates.size() == m.bnStates.size());
  for (std::size_t i = 0; i < m.bnStates.size(); ++i) {
    CHECK(back.bnStates[i].runningMean == m.bnStates[i].runningMean);
    CHECK(back.bnStates[i].runningVar == m.bnStates[i].runningVar);
  }

  const Tensor probe = images.at("d0");
  CHECK(embedImage(m, probe) == embedImage(back, probe));

  const auto path2 = tmpPath("siamese_ckpt2.bin");
  saveSiamese(back, path2.string());
  CHECK(slurp(path) == slurp(path2));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("f32 checkpoints quantize parameters to single precision") {
  Rng rng(19);
  SiameseModel m = buildSiamese(tinyConfig(), false, rng);
  const auto path = tmpPath("siamese_f32.bin");
  saveSiamese(m, path.string(), CheckpointDtype::F32);
  SiameseModel back = loadSiamese(path.string());

  auto orig = m.params.list();
  auto loaded = back.params.list();
  REQUIRE(orig.size() == loaded.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    REQUIRE(orig[i]->value.size() == loaded[i]->value.size());
    for (std::size_t j = 0; j < orig[i]->value.size(); ++j) {
      const double expect =
          static_cast<double>(static_cast<float>(orig[i]->value[j]));
      CHECK(loaded[i]->value[j] == expect);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("bad inputs are rejected with descriptive errors") {
  Rng rng(1);
  SiameseModel m = buildSiamese(tinyConfig(), false, rng);

  Rng imgRng(1);
  CHECK_THROWS_AS(embedImage(m, noiseImage(8, imgRng)), DimensionError);

  std::unordered_map<std::string, Tensor> images;
  images.emplace("d0", noiseImage(16, imgRng));
  std::vector<PairExample> pairs{{"d0", "ghost", 1}};
  SiameseTrainConfig tc;
  CHECK_THROWS_WITH_AS(trainSiamese(pairs, images, tinyConfig(), tc),
                       doctest::Contains("ghost"), DataError);

  tc.batchSize = 1;
  CHECK_THROWS_AS(trainSiamese({}, {}, tinyConfig(), tc), ConfigError);

  const auto path = tmpPath("not_siamese.bin");
  saveCheckpoint(path.string(), {{"w", {2}, {1.0, 2.0}}});
  CHECK_THROWS_AS(loadSiamese(path.string()), IoError);
  std::filesystem::remove(path);
}
