#include "hetddi/image_embedding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hetddi {

TowerConfig TowerConfig::deskScale() {
  TowerConfig cfg;
  cfg.inputH = 64;
  cfg.inputW = 64;
  cfg.convFilters = {8, 16, 16, 32};
  cfg.kernel = 3;
  cfg.pool = 2;
  return cfg;
}

std::vector<std::pair<int, int>> TowerConfig::spatialTrace() const {
  std::vector<std::pair<int, int>> trace{{inputH, inputW}};
  int h = inputH, w = inputW;
  for (std::size_t i = 0; i < convFilters.size(); ++i) {
    try {
      h = validOutExtent(h, kernel, 1);
      w = validOutExtent(w, kernel, 1);
    } catch (const DimensionError& e) {
      throw ConfigError("conv layer " + std::to_string(i + 1) + ": " + e.what());
    }
    trace.emplace_back(h, w);
    try {
      h = validOutExtent(h, pool, pool);
      w = validOutExtent(w, pool, pool);
    } catch (const DimensionError& e) {
      throw ConfigError("pool layer " + std::to_string(i + 1) + ": " + e.what());
    }
    trace.emplace_back(h, w);
  }
  return trace;
}

int TowerConfig::flattenDim() const {
  const auto trace = spatialTrace();
  return trace.back().first * trace.back().second * convFilters.back();
}

void TowerConfig::validate() const {
  if (inputH < 1 || inputW < 1) throw ConfigError("input size must be positive");
  if (convFilters.empty()) throw ConfigError("at least one conv stage required");
  for (int f : convFilters) {
    if (f < 1) throw ConfigError("conv filter counts must be positive");
  }
  if (kernel < 1 || pool < 1) throw ConfigError("kernel and pool must be >= 1");
  if (fcSizes.empty() || fcSizes.back() != 100) {
    throw ConfigError("final fully connected size must be 100 (the embedding dim)");
  }
  for (int s : fcSizes) {
    if (s < 1) throw ConfigError("fully connected sizes must be positive");
  }
  spatialTrace();
}

namespace {

struct LocnetExtent {
  int h, w, flat;
};

// conv5/pool2 twice, 8 then 10 filters.
LocnetExtent locnetExtent(const TowerConfig& cfg) {
  int h = cfg.inputH, w = cfg.inputW;
  try {
    for (int stage = 0; stage < 2; ++stage) {
      h = validOutExtent(h, 5, 1);
      w = validOutExtent(w, 5, 1);
      h = validOutExtent(h, 2, 2);
      w = validOutExtent(w, 2, 2);
    }
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("localisation net does not fit the input: ") +
                      e.what());
  }
  return {h, w, h * w * 10};
}

}  // namespace

SiameseModel buildSiamese(const TowerConfig& cfg, bool useStn, Rng& rng) {
  cfg.validate();
  SiameseModel m;
  m.config = cfg;
  m.useStn = useStn;

  int cin = 1;
  for (std::size_t i = 0; i < cfg.convFilters.size(); ++i) {
    const int f = cfg.convFilters[i];
    const std::string n = std::to_string(i + 1);
    auto& k = m.params.create("tower.conv" + n + ".k",
                              {cfg.kernel, cfg.kernel, cin, f});
    glorotInit(k, cfg.kernel * cfg.kernel * cin, cfg.kernel * cfg.kernel * f,
               rng);
    m.params.create("tower.conv" + n + ".b", {f});
    auto& g = m.params.create("tower.bn" + n + ".gamma", {f});
    std::fill(g.value.begin(), g.value.end(), 1.0);
    m.params.create("tower.bn" + n + ".beta", {f});
    m.bnStates.emplace_back(f);
    cin = f;
  }

  int in = cfg.flattenDim();
  for (std::size_t j = 0; j < cfg.fcSizes.size(); ++j) {
    const int out = cfg.fcSizes[j];
    const std::string n = std::to_string(j + 1);
    auto& W = m.params.create("tower.fc" + n + ".W", {out, in});
    glorotInit(W, in, out, rng);
    m.params.create("tower.fc" + n + ".b", {out});
    in = out;
  }

  if (useStn) {
    const LocnetExtent loc = locnetExtent(cfg);
    auto& k1 = m.params.create("stn.conv1.k", {5, 5, 1, 8});
    glorotInit(k1, 25, 25 * 8, rng);
    m.params.create("stn.conv1.b", {8});
    auto& k2 = m.params.create("stn.conv2.k", {5, 5, 8, 10});
    glorotInit(k2, 25 * 8, 25 * 10, rng);
    m.params.create("stn.conv2.b", {10});
    auto& w1 = m.params.create("stn.fc1.W", {32, loc.flat});
    glorotInit(w1, loc.flat, 32, rng);
    m.params.create("stn.fc1.b", {32});
    // Zero weights with an identity bias: training starts from the identity
    // transform.
    m.params.create("stn.fc2.W", {6, 32});
    auto& b2 = m.params.create("stn.fc2.b", {6});
    b2.value = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
  }
  return m;
}

Tensor locnetTheta(Tape* tape, const BoundParams& bp, const Tensor& batch) {
  Tensor h = conv2d(tape, batch, bp["stn.conv1.k"], bp["stn.conv1.b"], 1);
  h = activate(tape, h, Activation::Relu);
  h = maxpool2d(tape, h, 2, 2);
  h = conv2d(tape, h, bp["stn.conv2.k"], bp["stn.conv2.b"], 1);
  h = activate(tape, h, Activation::Relu);
  h = maxpool2d(tape, h, 2, 2);
  h = reshape(tape, h, {h.dim(0), h.dim(1) * h.dim(2) * h.dim(3)});
  h = dense(tape, h, bp["stn.fc1.W"], bp["stn.fc1.b"], Activation::Relu);
  h = dense(tape, h, bp["stn.fc2.W"], bp["stn.fc2.b"], Activation::None);
  return reshape(tape, h, {h.dim(0), 2, 3});
}

Tensor siameseForward(SiameseModel& m, Tape* tape, const BoundParams& bp,
                      const Tensor& batch, bool train) {
  const auto& cfg = m.config;
  if (batch.ndim() != 4 || batch.dim(1) != cfg.inputH ||
      batch.dim(2) != cfg.inputW || batch.dim(3) != 1) {
    throw DimensionError("expected a [B," + std::to_string(cfg.inputH) + "," +
                         std::to_string(cfg.inputW) + ",1] batch, got " +
                         batch.shapeString());
  }
  Tensor h = batch;
  if (m.useStn) {
    Tensor theta = locnetTheta(tape, bp, h);
    h = affineSample(tape, h, theta);
  }
  for (std::size_t i = 0; i < cfg.convFilters.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    h = conv2d(tape, h, bp["tower.conv" + n + ".k"], bp["tower.conv" + n + ".b"],
               1);
    h = activate(tape, h, cfg.activation);
    h = maxpool2d(tape, h, cfg.pool, cfg.pool);
    h = batchnorm(tape, h, bp["tower.bn" + n + ".gamma"],
                  bp["tower.bn" + n + ".beta"], m.bnStates[i], train);
  }
  h = reshape(tape, h, {h.dim(0), cfg.flattenDim()});
  for (std::size_t j = 0; j < cfg.fcSizes.size(); ++j) {
    const std::string n = std::to_string(j + 1);
    const bool last = j + 1 == cfg.fcSizes.size();
    h = dense(tape, h, bp["tower.fc" + n + ".W"], bp["tower.fc" + n + ".b"],
              last ? Activation::None : cfg.activation);
  }
  return h;
}

SiameseModel trainSiamese(
    const std::vector<PairExample>& pairs,
    const std::unordered_map<std::string, Tensor>& images,
    const TowerConfig& cfg, const SiameseTrainConfig& tc) {
  cfg.validate();
  if (tc.batchSize < 2) throw ConfigError("batch size must be at least 2");
  if (tc.epochs < 0) throw ConfigError("epochs must be non-negative");
  for (const auto& p : pairs) {
    for (const std::string* id : {&p.a, &p.b}) {
      auto it = images.find(*id);
      if (it == images.end()) {
        throw DataError("no image for drug '" + *id + "'");
      }
      const Tensor& img = it->second;
      if (img.ndim() != 3 || img.dim(0) != cfg.inputH ||
          img.dim(1) != cfg.inputW || img.dim(2) != 1) {
        throw DimensionError("image for drug '" + *id + "' has shape " +
                             img.shapeString() + ", expected [" +
                             std::to_string(cfg.inputH) + "x" +
                             std::to_string(cfg.inputW) + "x1]");
      }
    }
  }

  Rng rng(tc.seed);
  SiameseModel m = buildSiamese(cfg, tc.useStn, rng);
  if (tc.epochs == 0 || pairs.empty()) return m;
  if (pairs.size() < 2) {
    throw DataError("training needs at least 2 pairs (train-mode batchnorm)");
  }

  AdamConfig ac;
  ac.lr = tc.lr;
  Adam opt(m.params.list(), ac);

  const int HP = cfg.inputH, WP = cfg.inputW;
  const std::size_t imgLen = static_cast<std::size_t>(HP) * WP;
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::int64_t step = 0;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    rng.shuffle(order);
    std::size_t pos = 0;
    while (pos < order.size()) {
      const std::size_t remaining = order.size() - pos;
      std::size_t n = std::min<std::size_t>(
          static_cast<std::size_t>(tc.batchSize), remaining);
      // never leave a singleton behind: batchnorm needs batches of >= 2
      if (remaining == static_cast<std::size_t>(tc.batchSize) + 1) n = remaining;

      std::vector<double> bufA(n * imgLen), bufB(n * imgLen);
      std::vector<double> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        const PairExample& pr = pairs[order[pos + i]];
        const auto& va = images.at(pr.a).values();
        const auto& vb = images.at(pr.b).values();
        std::copy(va.begin(), va.end(), bufA.begin() + i * imgLen);
        std::copy(vb.begin(), vb.end(), bufB.begin() + i * imgLen);
        labels[i] = pr.label ? 1.0 : 0.0;
      }
      Tensor batchA({static_cast<int>(n), HP, WP, 1}, std::move(bufA));
      Tensor batchB({static_cast<int>(n), HP, WP, 1}, std::move(bufB));

      ++step;
      try {
        Tape tape;
        BoundParams bp(m.params, &tape);
        Tensor e1 = siameseForward(m, &tape, bp, batchA, true);
        Tensor e2 = siameseForward(m, &tape, bp, batchB, true);
        Tensor loss = contrastiveLoss(&tape, e1, e2, labels, tc.margin);
        tape.backward(loss);
        bp.writeBackGrads(tape);
        opt.step();
      } catch (const NumericError& e) {
        throw NumericError("training step " + std::to_string(step) + ": " +
                           e.what());
      }
      pos += n;
    }
  }
  return m;
}

std::vector<double> embedImage(SiameseModel& m, const Tensor& image) {
  const auto& cfg = m.config;
  if (image.ndim() != 3 || image.dim(0) != cfg.inputH ||
      image.dim(1) != cfg.inputW || image.dim(2) != 1) {
    throw DimensionError("expected a [" + std::to_string(cfg.inputH) + "x" +
                         std::to_string(cfg.inputW) + "x1] image, got " +
                         image.shapeString());
  }
  Tensor batch = reshape(nullptr, image, {1, cfg.inputH, cfg.inputW, 1});
  BoundParams bp(m.params, nullptr);
  Tensor e = siameseForward(m, nullptr, bp, batch, false);
  const double* d = e.data();
  return std::vector<double>(d, d + e.size());
}

void saveSiamese(const SiameseModel& m, const std::string& path,
                 CheckpointDtype dtype) {
  std::vector<NamedArray> arrays;
  const auto& cfg = m.config;
  arrays.push_back(NamedArray{
      "meta.tower",
      {6},
      {static_cast<double>(cfg.inputH), static_cast<double>(cfg.inputW),
       static_cast<double>(cfg.kernel), static_cast<double>(cfg.pool),
       m.useStn ? 1.0 : 0.0, static_cast<double>(static_cast<int>(cfg.activation))}});
  {
    std::vector<double> f(cfg.convFilters.begin(), cfg.convFilters.end());
    arrays.push_back(
        NamedArray{"meta.conv_filters", {static_cast<int>(f.size())}, f});
    std::vector<double> s(cfg.fcSizes.begin(), cfg.fcSizes.end());
    arrays.push_back(
        NamedArray{"meta.fc_sizes", {static_cast<int>(s.size())}, s});
  }
  for (const Parameter* p : m.params.list()) {
    arrays.push_back(NamedArray{p->name, p->shape, p->value});
  }
  for (std::size_t i = 0; i < m.bnStates.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    arrays.push_back(NamedArray{
        "state.bn" + n + ".mean",
        {static_cast<int>(m.bnStates[i].runningMean.size())},
        m.bnStates[i].runningMean});
    arrays.push_back(NamedArray{
        "state.bn" + n + ".var",
        {static_cast<int>(m.bnStates[i].runningVar.size())},
        m.bnStates[i].runningVar});
  }
  saveCheckpoint(path, arrays, dtype);
}

SiameseModel loadSiamese(const std::string& path) {
  auto arrays = loadCheckpoint(path);
  auto find = [&](const std::string& n) -> const NamedArray* {
    for (const auto& a : arrays) {
      if (a.name == n) return &a;
    }
    return nullptr;
  };
  const NamedArray* meta = find("meta.tower");
  const NamedArray* filters = find("meta.conv_filters");
  const NamedArray* fcs = find("meta.fc_sizes");
  if (!meta || meta->data.size() != 6 || !filters || !fcs) {
    throw IoError("'" + path + "' is not an embedding-model checkpoint");
  }
  TowerConfig cfg;
  cfg.inputH = static_cast<int>(meta->data[0]);
  cfg.inputW = static_cast<int>(meta->data[1]);
  cfg.kernel = static_cast<int>(meta->data[2]);
  cfg.pool = static_cast<int>(meta->data[3]);
  const bool useStn = meta->data[4] != 0.0;
  const int actCode = static_cast<int>(meta->data[5]);
  if (actCode < 0 || actCode > 3) {
    throw IoError("'" + path + "' has an unknown activation code");
  }
  cfg.activation = static_cast<Activation>(actCode);
  cfg.convFilters.assign(filters->data.begin(), filters->data.end());
  cfg.fcSizes.assign(fcs->data.begin(), fcs->data.end());

  Rng rng(0);
  SiameseModel m = buildSiamese(cfg, useStn, rng);
  for (Parameter* p : m.params.list()) {
    const NamedArray* a = find(p->name);
    if (!a) throw IoError("checkpoint missing parameter '" + p->name + "'");
    if (a->shape != p->shape) {
      throw DimensionError("checkpoint parameter '" + p->name +
                           "' has an unexpected shape");
    }
    p->value = a->data;
  }
  for (std::size_t i = 0; i < m.bnStates.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    const NamedArray* mean = find("state.bn" + n + ".mean");
    const NamedArray* var = find("state.bn" + n + ".var");
    if (!mean || !var ||
        mean->data.size() != m.bnStates[i].runningMean.size() ||
        var->data.size() != m.bnStates[i].runningVar.size()) {
      throw IoError("checkpoint missing batchnorm state " + n);
    }
    m.bnStates[i].runningMean = mean->data;
    m.bnStates[i].runningVar = var->data;
  }
  return m;
}

}  // namespace hetddi
