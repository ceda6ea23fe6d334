#include "hetddi/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hetddi/error.hpp"
#include "hetddi/table_io.hpp"
#include "hetddi/tensor.hpp"

namespace hetddi {

// ---------------------------------------------------------------------------
// aggregation / fusion
// ---------------------------------------------------------------------------

AggMode aggModeFromString(const std::string& s) {
  if (s == "sub") return AggMode::Sub;
  if (s == "avg") return AggMode::Avg;
  if (s == "abs") return AggMode::Abs;
  throw ConfigError("unknown aggregation mode '" + s +
                    "' (expected sub, avg or abs)");
}

std::string aggModeName(AggMode m) {
  switch (m) {
    case AggMode::Sub: return "sub";
    case AggMode::Avg: return "avg";
    case AggMode::Abs: return "abs";
  }
  throw ConfigError("invalid aggregation mode");
}

std::vector<double> aggregatePair(const std::vector<double>& a,
                                  const std::vector<double>& b, AggMode mode) {
  if (a.size() != b.size()) {
    throw DimensionError("aggregatePair: embedding lengths differ (" +
                         std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    switch (mode) {
      case AggMode::Sub: out[i] = a[i] - b[i]; break;
      case AggMode::Avg: out[i] = (a[i] + b[i]) / 2.0; break;
      case AggMode::Abs: out[i] = std::abs(a[i] - b[i]); break;
    }
  }
  return out;
}

std::vector<double> fuse(const std::vector<double>& imgDiff,
                         const std::vector<double>& smilesDiff,
                         const std::vector<double>& relCounts) {
  if (imgDiff.size() != smilesDiff.size()) {
    throw DimensionError("fuse: image and string embedding lengths differ (" +
                         std::to_string(imgDiff.size()) + " vs " +
                         std::to_string(smilesDiff.size()) + ")");
  }
  std::vector<double> out;
  out.reserve(imgDiff.size() + relCounts.size());
  for (std::size_t i = 0; i < imgDiff.size(); ++i) {
    out.push_back((imgDiff[i] + smilesDiff[i]) / 2.0);
  }
  out.insert(out.end(), relCounts.begin(), relCounts.end());
  return out;
}

PairFeature makePairFeature(PairExample pair, std::vector<double> imgDiff,
                            std::vector<double> smilesDiff,
                            std::vector<double> relCounts) {
  PairFeature f;
  f.fused = fuse(imgDiff, smilesDiff, relCounts);
  f.pair = std::move(pair);
  f.imgDiff = std::move(imgDiff);
  f.smilesDiff = std::move(smilesDiff);
  f.relCounts = std::move(relCounts);
  return f;
}

void writeFeaturesCsv(const std::string& path,
                      const std::vector<PairFeature>& features) {
  if (features.empty()) throw DataError("no features to export");
  const std::size_t fusedLen = features[0].fused.size();
  const std::size_t relLen = features[0].relCounts.size();
  if (relLen > fusedLen) {
    throw DimensionError("feature has more rule counts than fused entries");
  }
  const std::size_t embLen = fusedLen - relLen;

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  for (std::size_t i = 0; i < embLen; ++i) {
    os << "fused_" << i << ",";
  }
  for (std::size_t i = 0; i < relLen; ++i) {
    os << "rel_" << i << ",";
  }
  os << "label\n";
  for (const PairFeature& f : features) {
    if (f.fused.size() != fusedLen || f.relCounts.size() != relLen) {
      throw DimensionError("feature for pair (" + f.pair.a + ", " + f.pair.b +
                           ") does not match the matrix dimensions");
    }
    for (double v : f.fused) {
      os << formatValue9(v) << ",";
    }
    os << (f.pair.label ? 1 : 0) << "\n";
  }
  if (!os.flush()) throw IoError("short write to '" + path + "'");
}

// ---------------------------------------------------------------------------
// classifier
// ---------------------------------------------------------------------------

namespace {

void validateClassifierConfig(const ClassifierConfig& cfg) {
  for (int h : cfg.hidden) {
    if (h < 1) throw ConfigError("hidden layer sizes must be >= 1");
  }
  if (cfg.activation != Activation::Relu &&
      cfg.activation != Activation::Tanh) {
    throw ConfigError("classifier activation must be relu or tanh");
  }
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.batchSize < 1) throw ConfigError("batch size must be >= 1");
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
}

std::string fcName(std::size_t layer, const char* leaf) {
  return "mlp.fc" + std::to_string(layer + 1) + "." + leaf;
}

Tensor mlpForward(const MlpModel& m, Tape* tape, const BoundParams& bp,
                  const Tensor& x) {
  Tensor h = x;
  for (std::size_t i = 0; i < m.cfg.hidden.size(); ++i) {
    h = dense(tape, h, bp[fcName(i, "W")], bp[fcName(i, "b")],
              m.cfg.activation);
  }
  const std::size_t last = m.cfg.hidden.size();
  return dense(tape, h, bp[fcName(last, "W")], bp[fcName(last, "b")],
               Activation::None);
}

}  // namespace

MlpModel buildMlp(const ClassifierConfig& cfg, int inputDim, Rng& rng) {
  validateClassifierConfig(cfg);
  if (inputDim < 1) throw ConfigError("input dimension must be >= 1");
  MlpModel m;
  m.cfg = cfg;
  m.inputDim = inputDim;
  int in = inputDim;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    const int out = cfg.hidden[i];
    Parameter& W = m.params.create(fcName(i, "W"), {out, in});
    glorotInit(W, in, out, rng);
    m.params.create(fcName(i, "b"), {out});
    in = out;
  }
  Parameter& W = m.params.create(fcName(cfg.hidden.size(), "W"), {1, in});
  glorotInit(W, in, 1, rng);
  m.params.create(fcName(cfg.hidden.size(), "b"), {1});
  return m;
}

MlpModel trainClassifierRows(const std::vector<std::vector<double>>& rows,
                             const std::vector<int>& labels,
                             const ClassifierConfig& cfg,
                             ClassifierTrace* trace) {
  validateClassifierConfig(cfg);
  if (rows.empty()) throw DataError("no training examples");
  if (labels.size() != rows.size()) {
    throw DataError("expected " + std::to_string(rows.size()) +
                    " labels, got " + std::to_string(labels.size()));
  }
  const std::size_t dim = rows[0].size();
  if (dim == 0) throw DataError("empty feature vectors");
  bool sawPos = false, sawNeg = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != dim) {
      throw DimensionError("row " + std::to_string(i) + " has length " +
                           std::to_string(rows[i].size()) + ", expected " +
                           std::to_string(dim));
    }
    if (labels[i] != 0 && labels[i] != 1) {
      throw DataError("label for row " + std::to_string(i) +
                      " must be 0 or 1");
    }
    if (labels[i]) {
      sawPos = true;
    } else {
      sawNeg = true;
    }
  }
  if (!sawPos || !sawNeg) {
    throw DataError("training set contains a single class");
  }

  Rng rng(cfg.seed);
  MlpModel m = buildMlp(cfg, static_cast<int>(dim), rng);
  if (cfg.epochs == 0) return m;

  AdamConfig ac;
  ac.lr = cfg.lr;
  Adam opt(m.params.list(), ac);

  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double lossSum = 0.0;
    std::int64_t steps = 0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      const std::size_t n = std::min<std::size_t>(
          static_cast<std::size_t>(cfg.batchSize), order.size() - pos);
      std::vector<double> buf(n * dim);
      std::vector<double> targets(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = order[pos + i];
        std::copy(rows[r].begin(), rows[r].end(), buf.begin() + i * dim);
        targets[i] = labels[r] ? 1.0 : 0.0;
      }
      Tensor batch({static_cast<int>(n), static_cast<int>(dim)},
                   std::move(buf));
      ++step;
      try {
        Tape tape;
        BoundParams bp(m.params, &tape);
        Tensor loss = bceWithLogits(&tape, mlpForward(m, &tape, bp, batch),
                                    targets);
        tape.backward(loss);
        bp.writeBackGrads(tape);
        opt.step();
        lossSum += loss[0];
        ++steps;
      } catch (const NumericError& e) {
        throw NumericError("training step " + std::to_string(step) + ": " +
                           e.what());
      }
      pos += n;
    }
    if (trace) {
      trace->epochLoss.push_back(lossSum / static_cast<double>(steps));
      std::int64_t correct = 0;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const int pred = classifierScore(m, rows[i]) >= 0.5 ? 1 : 0;
        if (pred == labels[i]) ++correct;
      }
      trace->epochAccuracy.push_back(static_cast<double>(correct) /
                                     static_cast<double>(rows.size()));
    }
  }
  return m;
}

MlpModel trainClassifier(const std::vector<PairFeature>& features,
                         const ClassifierConfig& cfg, ClassifierTrace* trace) {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  rows.reserve(features.size());
  labels.reserve(features.size());
  for (const PairFeature& f : features) {
    rows.push_back(f.fused);
    labels.push_back(f.pair.label);
  }
  return trainClassifierRows(rows, labels, cfg, trace);
}

double classifierScore(MlpModel& m, const std::vector<double>& input) {
  if (static_cast<int>(input.size()) != m.inputDim) {
    throw DimensionError("classifier input has length " +
                         std::to_string(input.size()) + ", expected " +
                         std::to_string(m.inputDim));
  }
  BoundParams bp(m.params, nullptr);
  const Tensor x({m.inputDim}, input);
  const Tensor logit = mlpForward(m, nullptr, bp, x);
  return sigmoid(logit[0]);
}

std::vector<double> classifierScores(
    MlpModel& m, const std::vector<std::vector<double>>& rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(classifierScore(m, r));
  return out;
}

void saveMlp(const MlpModel& m, const std::string& path,
             CheckpointDtype dtype) {
  std::vector<NamedArray> arrays;
  std::vector<double> meta{static_cast<double>(m.inputDim),
                           static_cast<double>(m.cfg.activation),
                           static_cast<double>(m.cfg.hidden.size())};
  for (int h : m.cfg.hidden) meta.push_back(static_cast<double>(h));
  arrays.push_back(NamedArray{
      "meta.mlp", {static_cast<int>(meta.size())}, std::move(meta)});
  for (const Parameter* p : m.params.list()) {
    arrays.push_back(NamedArray{p->name, p->shape, p->value});
  }
  saveCheckpoint(path, arrays, dtype);
}

MlpModel loadMlp(const std::string& path) {
  auto arrays = loadCheckpoint(path);
  auto find = [&](const std::string& n) -> const NamedArray* {
    for (const auto& a : arrays) {
      if (a.name == n) return &a;
    }
    return nullptr;
  };
  const NamedArray* meta = find("meta.mlp");
  if (!meta || meta->data.size() < 3) {
    throw IoError("'" + path + "' is not a classifier checkpoint");
  }
  ClassifierConfig cfg;
  const int inputDim = static_cast<int>(meta->data[0]);
  const int actCode = static_cast<int>(meta->data[1]);
  if (actCode != static_cast<int>(Activation::Relu) &&
      actCode != static_cast<int>(Activation::Tanh)) {
    throw IoError("'" + path + "' has an unknown activation code");
  }
  cfg.activation = static_cast<Activation>(actCode);
  const std::size_t nHidden = static_cast<std::size_t>(meta->data[2]);
  if (meta->data.size() != 3 + nHidden) {
    throw IoError("'" + path + "' has a malformed layer list");
  }
  cfg.hidden.clear();
  for (std::size_t i = 0; i < nHidden; ++i) {
    cfg.hidden.push_back(static_cast<int>(meta->data[3 + i]));
  }

  Rng rng(0);
  MlpModel m = buildMlp(cfg, inputDim, rng);
  for (Parameter* p : m.params.list()) {
    const NamedArray* a = find(p->name);
    if (!a) throw IoError("checkpoint missing parameter '" + p->name + "'");
    if (a->shape != p->shape) {
      throw DimensionError("checkpoint parameter '" + p->name +
                           "' has an unexpected shape");
    }
    p->value = a->data;
  }
  return m;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

Metrics confusionMetrics(std::int64_t tp, std::int64_t fp, std::int64_t tn,
                         std::int64_t fn) {
  if (tp < 0 || fp < 0 || tn < 0 || fn < 0) {
    throw DataError("negative confusion count");
  }
  const std::int64_t total = tp + fp + tn + fn;
  if (total == 0) throw DataError("empty confusion matrix");
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.tn = tn;
  m.fn = fn;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(total);
  m.precision =
      tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                  : 0.0;
  m.recall = tp + fn > 0
                 ? static_cast<double>(tp) / static_cast<double>(tp + fn)
                 : 0.0;
  m.f1 = m.precision + m.recall > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

Metrics computeMetrics(const std::vector<int>& predicted,
                       const std::vector<int>& actual) {
  if (predicted.size() != actual.size()) {
    throw DataError("prediction and label counts differ");
  }
  if (predicted.empty()) throw DataError("no predictions to score");
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] != 0 && predicted[i] != 1) {
      throw DataError("predictions must be 0 or 1");
    }
    if (actual[i] != 0 && actual[i] != 1) {
      throw DataError("labels must be 0 or 1");
    }
    if (predicted[i] == 1 && actual[i] == 1) ++tp;
    if (predicted[i] == 1 && actual[i] == 0) ++fp;
    if (predicted[i] == 0 && actual[i] == 0) ++tn;
    if (predicted[i] == 0 && actual[i] == 1) ++fn;
  }
  return confusionMetrics(tp, fp, tn, fn);
}

Metrics evaluateClassifier(MlpModel& m, const std::vector<PairFeature>& test,
                           double threshold) {
  if (test.empty()) throw DataError("empty test set");
  std::vector<int> predicted, actual;
  predicted.reserve(test.size());
  actual.reserve(test.size());
  for (const PairFeature& f : test) {
    predicted.push_back(classifierScore(m, f.fused) >= threshold ? 1 : 0);
    actual.push_back(f.pair.label);
  }
  return computeMetrics(predicted, actual);
}

std::string metricsTable(
    const std::vector<std::pair<std::string, Metrics>>& rows) {
  std::size_t nameWidth = 6;  // "Method"
  for (const auto& [name, m] : rows) {
    nameWidth = std::max(nameWidth, name.size());
  }
  std::ostringstream os;
  os << std::left;
  os.width(static_cast<std::streamsize>(nameWidth));
  os << "Method";
  os << "  Accuracy    Recall  Precision        F1\n";
  char buf[64];
  for (const auto& [name, m] : rows) {
    os.width(static_cast<std::streamsize>(nameWidth));
    os << name;
    std::snprintf(buf, sizeof buf, "  %8.3f  %8.3f  %9.3f  %8.3f\n",
                  m.accuracy, m.recall, m.precision, m.f1);
    os << buf;
  }
  return os.str();
}

std::string metricsKeyValues(const std::string& prefix, const Metrics& m) {
  std::ostringstream os;
  os << prefix << ".accuracy " << formatValue9(m.accuracy) << "\n";
  os << prefix << ".recall " << formatValue9(m.recall) << "\n";
  os << prefix << ".precision " << formatValue9(m.precision) << "\n";
  os << prefix << ".f1 " << formatValue9(m.f1) << "\n";
  os << prefix << ".tp " << m.tp << "\n";
  os << prefix << ".fp " << m.fp << "\n";
  os << prefix << ".tn " << m.tn << "\n";
  os << prefix << ".fn " << m.fn << "\n";
  return os.str();
}

}  // namespace hetddi
