#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "doctest.h"
#include "hetddi/baselines.hpp"
#include "hetddi/rng.hpp"

using namespace hetddi;

namespace {

std::string tmpPath(const std::string& name) {
  return std::string(std::getenv("TMPDIR") ? std::getenv("TMPDIR") : "/tmp") +
         "/" + name;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Tensor randomImage(Rng& rng, int h, int w) {
  std::vector<double> px(static_cast<std::size_t>(h) * w);
  for (auto& v : px) v = rng.uniform();
  return Tensor({h, w, 1}, std::move(px));
}

Tensor constImage(double v, int h = 4, int w = 4) {
  return Tensor::full({h, w, 1}, v);
}

// Raw-moment reference implementation of the similarity ratio, accumulated
// differently from the library's centered-moment version.
double ssimReference(const Tensor& a, const Tensor& b, double C1, double C2) {
  const std::int64_t n = a.size();
  double s1 = 0.0, s2 = 0.0, s11 = 0.0, s22 = 0.0, s12 = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    s1 += a[i];
    s2 += b[i];
    s11 += a[i] * a[i];
    s22 += b[i] * b[i];
    s12 += a[i] * b[i];
  }
  const double mu1 = s1 / n, mu2 = s2 / n;
  const double var1 = s11 / n - mu1 * mu1;
  const double var2 = s22 / n - mu2 * mu2;
  const double cov = s12 / n - mu1 * mu2;
  return (2.0 * mu1 * mu2 + C1) * (2.0 * cov + C2) /
         ((mu1 * mu1 + mu2 * mu2 + C1) * (var1 + var2 + C2));
}

// 8x8 binary patterns for autoencoder fixtures.
Tensor patternImage(int kind) {
  std::vector<double> px(64, 0.0);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      bool on = false;
      switch (kind) {
        case 0: on = x < 4; break;
        case 1: on = y < 4; break;
        case 2: on = ((x / 2) + (y / 2)) % 2 == 0; break;
        default: on = x == y || x == 7 - y; break;
      }
      px[static_cast<std::size_t>(y * 8 + x)] = on ? 1.0 : 0.0;
    }
  }
  return Tensor({8, 8, 1}, px);
}

AutoencoderConfig smallAeConfig() {
  AutoencoderConfig cfg;
  cfg.inputH = 8;
  cfg.inputW = 8;
  cfg.convFilters = {4, 8};
  cfg.kernel = 3;
  cfg.bottleneck = 8;
  cfg.epochs = 100;
  cfg.batchSize = 4;
  cfg.lr = 2e-2;
  cfg.seed = 0;
  return cfg;
}

std::vector<Tensor> patternSet() {
  std::vector<Tensor> images;
  for (int k = 0; k < 4; ++k) {
    images.push_back(patternImage(k));
    images.push_back(patternImage(k));
  }
  return images;
}

}  // namespace

TEST_CASE("structural similarity is exactly one on identical images") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = randomImage(rng, 8, 8);
    CHECK(ssim(x, x) == 1.0);
  }
  CHECK(ssim(constImage(0.5), constImage(0.5)) == 1.0);
}

TEST_CASE("structural similarity of constant images follows the formula") {
  SsimParams p;
  p.C1 = 1e-4;
  const Tensor zeros = constImage(0.0);
  const Tensor ones = constImage(1.0);
  // means 0 and 1, all variances zero: ratio reduces to C1 / (1 + C1)
  CHECK(ssim(zeros, ones, p) ==
        doctest::Approx(p.C1 / (1.0 + p.C1)).epsilon(1e-12));

  // means 0.25 and 0.75: (2 * 0.1875 + C1) / (0.0625 + 0.5625 + C1)
  CHECK(ssim(constImage(0.25), constImage(0.75), p) ==
        doctest::Approx((0.375 + 1e-4) / (0.625 + 1e-4)).epsilon(1e-12));
}

TEST_CASE("structural similarity is symmetric and bounded") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor a = randomImage(rng, 8, 8);
    const Tensor b = randomImage(rng, 8, 8);
    const double s = ssim(a, b);
    CHECK(s == ssim(b, a));
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }

  // inverted images anticorrelate
  const Tensor a = randomImage(rng, 8, 8);
  std::vector<double> inv(a.values());
  for (auto& v : inv) v = 1.0 - v;
  CHECK(ssim(a, Tensor({8, 8, 1}, inv)) < 0.0);
}

TEST_CASE("structural similarity matches a raw-moment reference") {
  Rng rng(5);
  SsimParams p;
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor a = randomImage(rng, 8, 8);
    const Tensor b = randomImage(rng, 8, 8);
    CHECK_MESSAGE(
        std::abs(ssim(a, b, p) - ssimReference(a, b, p.C1, p.C2)) <= 1e-12,
        "trial ", trial);
  }
}

TEST_CASE("structural similarity rejects bad inputs") {
  CHECK_THROWS_AS(ssim(constImage(0.1, 4, 4), constImage(0.1, 4, 5)),
                  DimensionError);
  CHECK_THROWS_AS(ssim(Tensor(), Tensor()), DataError);
  SsimParams bad;
  bad.C1 = 0.0;
  CHECK_THROWS_AS(ssim(constImage(0.1), constImage(0.1), bad), ConfigError);
  bad = SsimParams{};
  bad.C2 = -1.0;
  CHECK_THROWS_AS(ssim(constImage(0.1), constImage(0.1), bad), ConfigError);
}

TEST_CASE("mean thresholding splits scores at their average") {
  const std::vector<PairExample> pairs{{"a", "b", 0}, {"c", "d", 1}};
  const auto preds = meanThresholdPredictions(pairs, {0.2, 0.8});
  REQUIRE(preds.size() == 2);
  CHECK(preds[0].predicted == 0);
  CHECK(preds[1].predicted == 1);
  CHECK(preds[0].score == 0.2);
  CHECK(preds[1].pair == pairs[1]);

  // ties at the threshold count as positive
  const auto tied = meanThresholdPredictions(pairs, {0.7, 0.7});
  CHECK(tied[0].predicted == 1);
  CHECK(tied[1].predicted == 1);

  CHECK_THROWS_AS(meanThresholdPredictions({}, {}), DataError);
  CHECK_THROWS_AS(meanThresholdPredictions(pairs, {0.5}), DimensionError);
}

TEST_CASE("prediction metrics score decisions against pair labels") {
  std::vector<Prediction> preds{
      {{"a", "b", 1}, 0.9, 1},  // tp
      {{"a", "c", 0}, 0.8, 1},  // fp
      {{"b", "c", 0}, 0.1, 0},  // tn
      {{"b", "d", 1}, 0.2, 0},  // fn
  };
  const Metrics m = predictionMetrics(preds);
  CHECK(m.tp == 1);
  CHECK(m.fp == 1);
  CHECK(m.tn == 1);
  CHECK(m.fn == 1);
  CHECK(m.accuracy == 0.5);
  CHECK_THROWS_AS(predictionMetrics({}), DataError);
}

TEST_CASE("predictions export as a four-column table") {
  const std::string path = tmpPath("baseline_preds.csv");
  writePredictionsCsv(path, {{{"aspirin", "warfarin", 1}, 0.25, 1},
                             {{"b1", "b2", 0}, 3.0, 0}});
  CHECK(slurp(path) ==
        "drug_a,drug_b,score,prediction\n"
        "aspirin,warfarin,0.25,1\n"
        "b1,b2,3,0\n");
  CHECK_THROWS_AS(writePredictionsCsv(path, {}), DataError);
}

TEST_CASE("image-similarity baseline thresholds at the mean score") {
  std::unordered_map<std::string, Tensor> images;
  images.emplace("a", constImage(0.0));
  images.emplace("b", constImage(1.0));
  images.emplace("c", constImage(0.4));
  images.emplace("d", constImage(0.4));

  // scores: (a,b) ~ 1e-4, (c,d) = 1.0; mean ~ 0.5
  const auto preds =
      ssimClassify({{"a", "b", 1}, {"c", "d", 0}}, images);
  REQUIRE(preds.size() == 2);
  CHECK(preds[0].predicted == 0);
  CHECK(preds[1].predicted == 1);
  CHECK(preds[1].score == 1.0);

  // identical images everywhere: every score ties at the mean
  std::unordered_map<std::string, Tensor> same;
  same.emplace("a", constImage(0.3));
  same.emplace("b", constImage(0.3));
  same.emplace("c", constImage(0.3));
  const auto all = ssimClassify({{"a", "b", 0}, {"b", "c", 1}}, same);
  CHECK(all[0].predicted == 1);
  CHECK(all[1].predicted == 1);

  CHECK_THROWS_AS(ssimClassify({}, images), DataError);
  CHECK_THROWS_WITH_AS(ssimClassify({{"a", "zz", 0}}, images),
                       doctest::Contains("zz"), DataError);
}

TEST_CASE("autoencoder configs validate their geometry") {
  AutoencoderConfig cfg = smallAeConfig();
  cfg.validate();
  CHECK(cfg.codeH() == 2);
  CHECK(cfg.codeW() == 2);

  AutoencoderConfig bad = smallAeConfig();
  bad.convFilters = {};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = smallAeConfig();
  bad.convFilters = {4, 0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = smallAeConfig();
  bad.kernel = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = smallAeConfig();
  bad.inputH = 10;  // not divisible by 2^2
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = smallAeConfig();
  bad.bottleneck = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = smallAeConfig();
  bad.batchSize = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = smallAeConfig();
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = smallAeConfig();
  bad.epochs = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("autoencoder mirrors its encoder parameters") {
  AutoencoderConfig cfg = smallAeConfig();
  cfg.bottleneck = 5;
  Rng rng(1);
  Autoencoder m = buildAutoencoder(cfg, rng);
  CHECK(m.params.count() == 12);
  CHECK(m.params.find("ae.enc1.k").shape == std::vector<int>{3, 3, 1, 4});
  CHECK(m.params.find("ae.enc2.k").shape == std::vector<int>{3, 3, 4, 8});
  CHECK(m.params.find("ae.code.W").shape == std::vector<int>{5, 32});
  CHECK(m.params.find("ae.expand.W").shape == std::vector<int>{32, 5});
  CHECK(m.params.find("ae.dec2.k").shape == std::vector<int>{3, 3, 8, 4});
  CHECK(m.params.find("ae.dec1.k").shape == std::vector<int>{3, 3, 4, 1});

  BoundParams bp(m.params, nullptr);
  std::vector<double> buf(3 * 64);
  Rng prng(2);
  for (auto& v : buf) v = prng.uniform();
  const Tensor batch({3, 8, 8, 1}, buf);
  const Tensor code = autoencoderCode(m, nullptr, bp, batch);
  CHECK(code.shape() == std::vector<int>{3, 5});
  for (std::int64_t i = 0; i < code.size(); ++i) {
    CHECK(code[i] > 0.0);
    CHECK(code[i] < 1.0);
  }
  const Tensor logits = autoencoderLogits(m, nullptr, bp, batch);
  CHECK(logits.shape() == std::vector<int>{3, 8, 8, 1});

  const Tensor single = patternImage(0);
  CHECK(autoencoderCode(m, nullptr, bp, single).shape() ==
        std::vector<int>{5});
  CHECK(autoencoderLogits(m, nullptr, bp, single).shape() ==
        std::vector<int>{8, 8, 1});

  CHECK_THROWS_AS(autoencoderCode(m, nullptr, bp, constImage(0.1, 7, 8)),
                  DimensionError);
}

TEST_CASE("autoencoder training shrinks the reconstruction loss") {
  std::vector<double> losses;
  Autoencoder m = trainAutoencoder(patternSet(), smallAeConfig(), &losses);
  REQUIRE(losses.size() == 100);
  for (double l : losses) CHECK(std::isfinite(l));
  CHECK(losses.back() < 0.15);
  CHECK(losses.back() < losses.front());

  // trained codes separate the patterns they were fit on
  const auto c0 = encodeImage(m, patternImage(0));
  const auto c2 = encodeImage(m, patternImage(2));
  CHECK(pairSimilarity(c0, c0, SimilarityCriterion::Cosine) == 1.0);
  CHECK(pairSimilarity(c0, c2, SimilarityCriterion::Cosine) < 0.99);
  CHECK(pairSimilarity(c0, c0, SimilarityCriterion::Bce) <
        pairSimilarity(c0, c2, SimilarityCriterion::Bce));
}

TEST_CASE("autoencoder training is seed-deterministic") {
  AutoencoderConfig cfg = smallAeConfig();
  cfg.epochs = 5;
  const auto images = patternSet();
  Autoencoder m1 = trainAutoencoder(images, cfg);
  Autoencoder m2 = trainAutoencoder(images, cfg);
  auto p1 = m1.params.list();
  auto p2 = m2.params.list();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i]->value == p2[i]->value);
  }

  cfg.seed = 1;
  Autoencoder m3 = trainAutoencoder(images, cfg);
  bool anyDiff = false;
  for (std::size_t i = 0; i < p1.size() && !anyDiff; ++i) {
    anyDiff = p1[i]->value != m3.params.list()[i]->value;
  }
  CHECK(anyDiff);
}

TEST_CASE("autoencoder aborts on numeric blowup") {
  AutoencoderConfig cfg = smallAeConfig();
  cfg.epochs = 5;
  cfg.lr = 1e200;
  CHECK_THROWS_WITH_AS(trainAutoencoder(patternSet(), cfg),
                       doctest::Contains("training step"), NumericError);
}

TEST_CASE("autoencoder rejects malformed training sets") {
  AutoencoderConfig cfg = smallAeConfig();
  CHECK_THROWS_AS(trainAutoencoder({}, cfg), DataError);
  CHECK_THROWS_AS(trainAutoencoder({constImage(0.5, 8, 7)}, cfg),
                  DimensionError);
  CHECK_THROWS_WITH_AS(trainAutoencoder({constImage(1.5, 8, 8)}, cfg),
                       doctest::Contains("outside [0,1]"), DataError);
}

TEST_CASE("autoencoder checkpoints restore identical codes") {
  AutoencoderConfig cfg = smallAeConfig();
  cfg.epochs = 5;
  Autoencoder m = trainAutoencoder(patternSet(), cfg);
  const std::string path = tmpPath("ae_roundtrip.ckpt");
  saveAutoencoder(m, path);
  Autoencoder back = loadAutoencoder(path);
  CHECK(back.cfg.convFilters == std::vector<int>{4, 8});
  CHECK(back.cfg.bottleneck == 8);
  for (int k = 0; k < 4; ++k) {
    CHECK(encodeImage(back, patternImage(k)) ==
          encodeImage(m, patternImage(k)));
  }

  saveCheckpoint(tmpPath("not_ae.ckpt"), {{"x", {1}, {1.0}}});
  CHECK_THROWS_AS(loadAutoencoder(tmpPath("not_ae.ckpt")), IoError);
  CHECK_THROWS_AS(loadMlp(path), IoError);
}

TEST_CASE("pair similarity criteria") {
  const std::vector<double> half{0.5, 0.5};
  // symmetrized cross-entropy of matching one-half codes is ln 2
  CHECK(pairSimilarity(half, half, SimilarityCriterion::Bce) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  CHECK(pairSimilarity({1.0, 0.0}, {0.0, 1.0}, SimilarityCriterion::Cosine) ==
        0.0);
  CHECK(pairSimilarity({0.2, 0.9}, {0.2, 0.9}, SimilarityCriterion::Cosine) ==
        1.0);
  CHECK(pairSimilarity({0.0, 0.0}, {0.3, 0.4}, SimilarityCriterion::Cosine) ==
        0.0);

  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(6), b(6);
    for (auto& v : a) v = rng.uniform();
    for (auto& v : b) v = rng.uniform();
    CHECK(pairSimilarity(a, b, SimilarityCriterion::Bce) ==
          pairSimilarity(b, a, SimilarityCriterion::Bce));
  }

  CHECK_THROWS_AS(pairSimilarity({0.5}, {0.5, 0.5},
                                 SimilarityCriterion::Cosine),
                  DimensionError);
  CHECK_THROWS_AS(pairSimilarity({}, {}, SimilarityCriterion::Bce),
                  DataError);
  CHECK_THROWS_AS(pairSimilarity({1.2}, {0.5}, SimilarityCriterion::Bce),
                  DataError);

  CHECK(criterionFromString("bce") == SimilarityCriterion::Bce);
  CHECK(criterionFromString("cosine") == SimilarityCriterion::Cosine);
  CHECK(criterionName(SimilarityCriterion::Bce) == "bce");
  CHECK_THROWS_AS(criterionFromString("euclid"), ConfigError);
}

TEST_CASE("autoencoder baseline classifies by code similarity") {
  AutoencoderConfig cfg = smallAeConfig();
  Rng rng(9);
  Autoencoder m = buildAutoencoder(cfg, rng);

  std::unordered_map<std::string, Tensor> images;
  images.emplace("a", patternImage(0));
  images.emplace("b", patternImage(0));
  images.emplace("c", patternImage(2));
  images.emplace("d", patternImage(2));
  const std::vector<PairExample> pairs{
      {"a", "b", 1}, {"c", "d", 1}, {"a", "c", 0}};

  const auto cos =
      autoencoderClassify(m, pairs, images, SimilarityCriterion::Cosine);
  REQUIRE(cos.size() == 3);
  CHECK(cos[0].score == 1.0);
  CHECK(cos[1].score == 1.0);
  CHECK(cos[2].score < 1.0);
  CHECK(cos[0].predicted == 1);
  CHECK(cos[1].predicted == 1);
  CHECK(cos[2].predicted == 0);

  // cross-entropy scores run the other way: a same-image pair scores its
  // code's entropy, and a cross pair adds a KL term, so the cross pair can
  // never fall below the average of the two self pairs and the >=-mean rule
  // always flags it
  const auto bce =
      autoencoderClassify(m, pairs, images, SimilarityCriterion::Bce);
  CHECK(bce[2].score >= (bce[0].score + bce[1].score) / 2.0);
  CHECK(bce[2].predicted == 1);
  CHECK((bce[0].predicted == 0 || bce[1].predicted == 0));

  CHECK_THROWS_AS(
      autoencoderClassify(m, {}, images, SimilarityCriterion::Cosine),
      DataError);
  CHECK_THROWS_WITH_AS(
      autoencoderClassify(m, {{"a", "zz", 0}}, images,
                          SimilarityCriterion::Cosine),
      doctest::Contains("zz"), DataError);
}

TEST_CASE("distance baseline thresholds twin-tower embeddings") {
  Rng rng(10);
  SiameseModel m = buildSiamese(TowerConfig::deskScale(), false, rng);

  std::unordered_map<std::string, Tensor> images;
  images.emplace("a", constImage(0.0, 64, 64));
  images.emplace("b", constImage(0.0, 64, 64));
  Rng prng(11);
  images.emplace("c", randomImage(prng, 64, 64));

  const std::vector<PairExample> pairs{{"a", "b", 0}, {"a", "c", 1}};
  const auto preds = siameseDistanceClassify(m, pairs, images);
  REQUIRE(preds.size() == 2);
  CHECK(preds[0].score == 0.0);
  CHECK(preds[0].predicted == 0);
  CHECK(preds[1].score > 0.0);

  // a distance exactly at the threshold counts as an interaction
  const double d = preds[1].score;
  const auto atBoundary = siameseDistanceClassify(m, {{"a", "c", 1}}, images, d);
  CHECK(atBoundary[0].predicted == 1);
  const auto above = siameseDistanceClassify(
      m, {{"a", "c", 1}}, images, std::nextafter(d, 1e300));
  CHECK(above[0].predicted == 0);

  CHECK(siameseDistanceClassify(m, {}, images).empty());
  CHECK_THROWS_WITH_AS(siameseDistanceClassify(m, {{"a", "zz", 0}}, images),
                       doctest::Contains("zz"), DataError);
}
