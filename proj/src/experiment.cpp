#include "hetddi/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "hetddi/table_io.hpp"

namespace hetddi {

// ---------------------------------------------------------------------------
// Modalities
// ---------------------------------------------------------------------------

ModalitySet modalitiesFromString(const std::string& s) {
  if (s == "none") return ModalitySet{};
  if (s.empty()) throw ConfigError("modality list is empty");
  ModalitySet out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t comma = s.find(',', start);
    std::string tok = s.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    bool* flag = nullptr;
    if (tok == "img")
      flag = &out.image;
    else if (tok == "smiles")
      flag = &out.smiles;
    else if (tok == "rel")
      flag = &out.relational;
    else
      throw ConfigError("unknown modality '" + tok +
                        "' (expected img, smiles, rel)");
    if (*flag) throw ConfigError("duplicate modality '" + tok + "'");
    *flag = true;
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string modalitiesToString(const ModalitySet& m) {
  std::string out;
  auto add = [&out](const char* tok) {
    if (!out.empty()) out += ',';
    out += tok;
  };
  if (m.image) add("img");
  if (m.smiles) add("smiles");
  if (m.relational) add("rel");
  return out.empty() ? "none" : out;
}

// ---------------------------------------------------------------------------
// Configuration keys
// ---------------------------------------------------------------------------

namespace {

int parseIntStrict(const std::string& v) {
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected an integer, got '" + v + "'");
  }
  if (used != v.size())
    throw ConfigError("expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t parseU64Strict(const std::string& v) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected an unsigned integer, got '" + v + "'");
  }
  if (used != v.size() || v[0] == '-')
    throw ConfigError("expected an unsigned integer, got '" + v + "'");
  return out;
}

double parseDoubleStrict(const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool parseBoolStrict(const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("expected 0, 1, true or false, got '" + v + "'");
}

std::vector<int> parseIntList(const std::string& v) {
  if (v == "none") return {};
  if (v.empty()) throw ConfigError("expected a comma list of integers or "
                                   "'none', got an empty value");
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    std::size_t comma = v.find(',', start);
    std::string tok = v.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    out.push_back(parseIntStrict(tok));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string intListText(const std::vector<int>& v) {
  if (v.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

Activation activationFromString(const std::string& v) {
  if (v == "none") return Activation::None;
  if (v == "relu") return Activation::Relu;
  if (v == "tanh") return Activation::Tanh;
  if (v == "sigmoid") return Activation::Sigmoid;
  throw ConfigError("unknown activation '" + v + "'");
}

std::string activationText(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "relu";
}

struct ConfigKey {
  const char* name;
  // get is null for write-only convenience keys, which therefore do not
  // appear in configText() or the hash.
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

const std::vector<ConfigKey>& configKeys() {
  using C = ExperimentConfig;
  static const std::vector<ConfigKey> keys = {
      {"ae_batch", [](const C& c) { return std::to_string(c.autoenc.batchSize); },
       [](C& c, const std::string& v) { c.autoenc.batchSize = parseIntStrict(v); }},
      {"ae_bottleneck", [](const C& c) { return std::to_string(c.autoenc.bottleneck); },
       [](C& c, const std::string& v) { c.autoenc.bottleneck = parseIntStrict(v); }},
      {"ae_criterion", [](const C& c) { return criterionName(c.aeCriterion); },
       [](C& c, const std::string& v) { c.aeCriterion = criterionFromString(v); }},
      {"ae_epochs", [](const C& c) { return std::to_string(c.autoenc.epochs); },
       [](C& c, const std::string& v) { c.autoenc.epochs = parseIntStrict(v); }},
      {"ae_filters", [](const C& c) { return intListText(c.autoenc.convFilters); },
       [](C& c, const std::string& v) { c.autoenc.convFilters = parseIntList(v); }},
      {"ae_kernel", [](const C& c) { return std::to_string(c.autoenc.kernel); },
       [](C& c, const std::string& v) { c.autoenc.kernel = parseIntStrict(v); }},
      {"ae_lr", [](const C& c) { return formatValue9(c.autoenc.lr); },
       [](C& c, const std::string& v) { c.autoenc.lr = parseDoubleStrict(v); }},
      {"agg", [](const C& c) { return aggModeName(c.agg); },
       [](C& c, const std::string& v) { c.agg = aggModeFromString(v); }},
      {"base_url", [](const C& c) { return c.fetch.baseUrl; },
       [](C& c, const std::string& v) { c.fetch.baseUrl = v; }},
      {"classifier_activation",
       [](const C& c) { return activationText(c.classifier.activation); },
       [](C& c, const std::string& v) { c.classifier.activation = activationFromString(v); }},
      {"classifier_batch", [](const C& c) { return std::to_string(c.classifier.batchSize); },
       [](C& c, const std::string& v) { c.classifier.batchSize = parseIntStrict(v); }},
      {"classifier_epochs", [](const C& c) { return std::to_string(c.classifier.epochs); },
       [](C& c, const std::string& v) { c.classifier.epochs = parseIntStrict(v); }},
      {"classifier_hidden", [](const C& c) { return intListText(c.classifier.hidden); },
       [](C& c, const std::string& v) { c.classifier.hidden = parseIntList(v); }},
      {"classifier_lr", [](const C& c) { return formatValue9(c.classifier.lr); },
       [](C& c, const std::string& v) { c.classifier.lr = parseDoubleStrict(v); }},
      {"facts_file", [](const C& c) { return c.factsFile; },
       [](C& c, const std::string& v) { c.factsFile = v; }},
      {"image_dir", [](const C& c) { return c.imageDir; },
       [](C& c, const std::string& v) { c.imageDir = v; }},
      {"modalities", [](const C& c) { return modalitiesToString(c.modalities); },
       [](C& c, const std::string& v) { c.modalities = modalitiesFromString(v); }},
      {"offline", [](const C& c) { return std::string(c.fetch.offline ? "1" : "0"); },
       [](C& c, const std::string& v) { c.fetch.offline = parseBoolStrict(v); }},
      {"out_dir", [](const C& c) { return c.outDir; },
       [](C& c, const std::string& v) { c.outDir = v; }},
      {"pairs_file", [](const C& c) { return c.pairsFile; },
       [](C& c, const std::string& v) { c.pairsFile = v; }},
      {"politeness_ms", [](const C& c) { return std::to_string(c.fetch.politenessMs); },
       [](C& c, const std::string& v) { c.fetch.politenessMs = parseIntStrict(v); }},
      {"rrt_max_depth", [](const C& c) { return std::to_string(c.rrt.maxDepth); },
       [](C& c, const std::string& v) { c.rrt.maxDepth = parseIntStrict(v); }},
      {"rrt_min_examples", [](const C& c) { return std::to_string(c.rrt.minExamples); },
       [](C& c, const std::string& v) { c.rrt.minExamples = parseIntStrict(v); }},
      {"seed",
       [](const C& c) {
         return c.seed ? std::to_string(*c.seed) : std::string("unset");
       },
       [](C& c, const std::string& v) { c.seed = parseU64Strict(v); }},
      {"siamese_batch", [](const C& c) { return std::to_string(c.siamese.batchSize); },
       [](C& c, const std::string& v) { c.siamese.batchSize = parseIntStrict(v); }},
      {"siamese_epochs", [](const C& c) { return std::to_string(c.siamese.epochs); },
       [](C& c, const std::string& v) { c.siamese.epochs = parseIntStrict(v); }},
      {"siamese_lr", [](const C& c) { return formatValue9(c.siamese.lr); },
       [](C& c, const std::string& v) { c.siamese.lr = parseDoubleStrict(v); }},
      {"siamese_margin", [](const C& c) { return formatValue9(c.siamese.margin); },
       [](C& c, const std::string& v) { c.siamese.margin = parseDoubleStrict(v); }},
      {"siamese_threshold", [](const C& c) { return formatValue9(c.siameseThreshold); },
       [](C& c, const std::string& v) { c.siameseThreshold = parseDoubleStrict(v); }},
      {"skipgram_dim", [](const C& c) { return std::to_string(c.skipgram.dim); },
       [](C& c, const std::string& v) { c.skipgram.dim = parseIntStrict(v); }},
      {"skipgram_epochs", [](const C& c) { return std::to_string(c.skipgram.epochs); },
       [](C& c, const std::string& v) { c.skipgram.epochs = parseIntStrict(v); }},
      {"skipgram_lr", [](const C& c) { return formatValue9(c.skipgram.lr); },
       [](C& c, const std::string& v) { c.skipgram.lr = parseDoubleStrict(v); }},
      {"skipgram_negatives", [](const C& c) { return std::to_string(c.skipgram.negatives); },
       [](C& c, const std::string& v) { c.skipgram.negatives = parseIntStrict(v); }},
      {"skipgram_window", [](const C& c) { return std::to_string(c.skipgram.window); },
       [](C& c, const std::string& v) { c.skipgram.window = parseIntStrict(v); }},
      {"smiles_file", [](const C& c) { return c.smilesFile; },
       [](C& c, const std::string& v) { c.smilesFile = v; }},
      {"smiles_k", [](const C& c) { return std::to_string(c.smilesK); },
       [](C& c, const std::string& v) { c.smilesK = parseIntStrict(v); }},
      {"split_ratio", [](const C& c) { return formatValue9(c.splitRatio); },
       [](C& c, const std::string& v) { c.splitRatio = parseDoubleStrict(v); }},
      {"timeout_sec", [](const C& c) { return std::to_string(c.fetch.timeoutSec); },
       [](C& c, const std::string& v) { c.fetch.timeoutSec = parseIntStrict(v); }},
      {"tower_fc", [](const C& c) { return intListText(c.tower.fcSizes); },
       [](C& c, const std::string& v) { c.tower.fcSizes = parseIntList(v); }},
      {"tower_filters", [](const C& c) { return intListText(c.tower.convFilters); },
       [](C& c, const std::string& v) { c.tower.convFilters = parseIntList(v); }},
      {"tower_kernel", [](const C& c) { return std::to_string(c.tower.kernel); },
       [](C& c, const std::string& v) { c.tower.kernel = parseIntStrict(v); }},
      {"tower_pool", [](const C& c) { return std::to_string(c.tower.pool); },
       [](C& c, const std::string& v) { c.tower.pool = parseIntStrict(v); }},
      {"tower_scale", nullptr,
       [](C& c, const std::string& v) {
         if (v == "desk")
           c.tower = TowerConfig::deskScale();
         else if (v == "full")
           c.tower = TowerConfig::fullScale();
         else
           throw ConfigError("expected desk or full, got '" + v + "'");
       }},
      {"use_stn", [](const C& c) { return std::string(c.useStn ? "1" : "0"); },
       [](C& c, const std::string& v) { c.useStn = parseBoolStrict(v); }},
  };
  return keys;
}

std::string trimSpace(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

void applyConfigKeyValue(ExperimentConfig& cfg, const std::string& key,
                         const std::string& value) {
  for (const auto& k : configKeys()) {
    if (key == k.name) {
      try {
        k.set(cfg, value);
      } catch (const ConfigError& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string configText(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& k : configKeys()) {
    if (!k.get) continue;
    out += k.name;
    out += '=';
    out += k.get(cfg);
    out += '\n';
  }
  return out;
}

void applyEnvOverrides(ExperimentConfig& cfg) {
  for (const auto& k : configKeys()) {
    std::string env = "HETDDI_";
    for (const char* p = k.name; *p; ++p)
      env += static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
    const char* v = std::getenv(env.c_str());
    if (!v) continue;
    try {
      applyConfigKeyValue(cfg, k.name, v);
    } catch (const ConfigError& e) {
      throw ConfigError("environment variable " + env + ": " + e.what());
    }
  }
}

ExperimentConfig configFromFile(const std::string& path) {
  ExperimentConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
      ++lineNo;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::string stripped = trimSpace(line);
      if (stripped.empty() || stripped[0] == '#') continue;
      std::size_t eq = stripped.find('=');
      if (eq == std::string::npos)
        throw ParseError("expected key=value", lineNo, 1);
      std::string key = trimSpace(stripped.substr(0, eq));
      std::string value = trimSpace(stripped.substr(eq + 1));
      try {
        applyConfigKeyValue(cfg, key, value);
      } catch (const ConfigError& e) {
        throw ConfigError("config file '" + path + "' line " +
                          std::to_string(lineNo) + ": " + e.what());
      }
    }
  }
  applyEnvOverrides(cfg);
  return cfg;
}

std::string configHashHex(const ExperimentConfig& cfg) {
  std::string text = configText(cfg);
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "0x%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

void ExperimentConfig::validate() const {
  if (modalities.count() == 0)
    throw ConfigError("at least one modality must be selected");
  if (!seed)
    throw ConfigError(
        "seed is mandatory: pass --seed, config key 'seed', or HETDDI_SEED");
  if (!(splitRatio > 0.0 && splitRatio < 1.0))
    throw ConfigError("split ratio must lie strictly between 0 and 1, got " +
                      formatValue9(splitRatio));
  if (smilesK < 1)
    throw ConfigError("smiles_k must be at least 1, got " +
                      std::to_string(smilesK));
  if (siameseThreshold < 0.0)
    throw ConfigError("siamese_threshold must be non-negative, got " +
                      formatValue9(siameseThreshold));
  if (fetch.politenessMs < 0)
    throw ConfigError("politeness_ms must be non-negative");
  if (modalities.image && modalities.smiles && !tower.fcSizes.empty() &&
      tower.fcSizes.back() != skipgram.dim)
    throw ConfigError(
        "image embedding width " + std::to_string(tower.fcSizes.back()) +
        " and structure embedding width " + std::to_string(skipgram.dim) +
        " must match to fuse the two channels");
}

// ---------------------------------------------------------------------------
// Fit audit
// ---------------------------------------------------------------------------

namespace {

std::string pairKey(const PairExample& p) { return p.a + "|" + p.b; }

}  // namespace

void FitAudit::notePair(const PairExample& p) { touched_.insert(pairKey(p)); }

void FitAudit::notePairs(const std::vector<PairExample>& pairs) {
  for (const auto& p : pairs) touched_.insert(pairKey(p));
}

std::vector<std::string> FitAudit::leakedOutside(
    const std::vector<PairExample>& allowed) const {
  std::unordered_set<std::string> ok;
  ok.reserve(allowed.size());
  for (const auto& p : allowed) ok.insert(pairKey(p));
  std::vector<std::string> leaks;
  for (const auto& key : touched_)
    if (ok.find(key) == ok.end()) leaks.push_back(key);
  std::sort(leaks.begin(), leaks.end());
  return leaks;
}

// ---------------------------------------------------------------------------
// Run plumbing
// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stage trainers get decorrelated seeds derived from the master seed.
std::uint64_t subSeed(std::uint64_t master, std::uint64_t stage) {
  return splitmix64(master ^ (stage * 0x9e3779b97f4a7c15ULL));
}

constexpr std::uint64_t kSeedSiamese = 1;
constexpr std::uint64_t kSeedSkipgram = 2;
constexpr std::uint64_t kSeedClassifier = 3;
constexpr std::uint64_t kSeedAutoencoder = 4;

template <class Fn>
auto runStage(const char* name, Fn&& fn) -> decltype(fn()) {
  const std::string pre = std::string("stage ") + name + ": ";
  try {
    return fn();
  } catch (const DimensionError& e) {
    throw DimensionError(pre + e.what());
  } catch (const NumericError& e) {
    throw NumericError(pre + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(pre + e.what());
  } catch (const ParseError& e) {
    throw ParseError(pre + e.what());
  } catch (const MalformedRuleError& e) {
    throw MalformedRuleError(pre + e.what());
  } catch (const DataError& e) {
    throw DataError(pre + e.what());
  } catch (const IoError& e) {
    throw IoError(pre + e.what());
  } catch (const UnavailableError& e) {
    throw UnavailableError(pre + e.what());
  } catch (const NotFoundError& e) {
    throw NotFoundError(pre + e.what());
  } catch (const Error& e) {
    throw Error(pre + e.what());
  }
}

void leakCheck(const FitAudit& audit, const std::vector<PairExample>& train) {
  std::vector<std::string> leaks = audit.leakedOutside(train);
  if (leaks.empty()) return;
  std::string shown;
  for (std::size_t i = 0; i < leaks.size() && i < 5; ++i) {
    if (i) shown += ", ";
    shown += leaks[i];
  }
  if (leaks.size() > 5) shown += ", ...";
  throw DataError("fit audit: " + std::to_string(leaks.size()) +
                  " pair(s) outside the training split were consumed while "
                  "fitting: [" +
                  shown + "]");
}

std::pair<int, int> corpusImageSize(const Dataset& data) {
  if (data.drugs.empty()) throw DataError("dataset has no drugs");
  const Tensor& img = data.drugs.front().image;
  if (img.ndim() != 3)
    throw DimensionError("drug images must be rank-3 [H,W,1], got " +
                         img.shapeString());
  return {img.dim(0), img.dim(1)};
}

std::vector<std::string> trainDrugIds(const std::vector<PairExample>& train) {
  std::set<std::string> ids;
  for (const auto& p : train) {
    ids.insert(p.a);
    ids.insert(p.b);
  }
  return std::vector<std::string>(ids.begin(), ids.end());
}

std::string isoUtcNow() {
  std::time_t t = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string methodLabel(const ExperimentConfig& cfg) {
  const ModalitySet& m = cfg.modalities;
  if (m.count() == 1) {
    if (m.image)
      return cfg.useStn ? "Siamese distance (stn)" : "Siamese distance";
    if (m.smiles) return "Structure MLP (agg=" + aggModeName(cfg.agg) + ")";
    return "Rule-count MLP";
  }
  if (m.image && m.smiles && m.relational)
    return "Fused MLP (agg=" + aggModeName(cfg.agg) + ")";
  std::string parts;
  auto add = [&parts](const char* tok) {
    if (!parts.empty()) parts += '+';
    parts += tok;
  };
  if (m.image) add("img");
  if (m.smiles) add("smiles");
  if (m.relational) add("rel");
  return "Fused MLP (" + parts + ", agg=" + aggModeName(cfg.agg) + ")";
}

using EmbTable = std::unordered_map<std::string, std::vector<double>>;

const std::vector<double>& lookupEmbedding(const EmbTable& table,
                                           const std::string& id,
                                           const char* what) {
  auto it = table.find(id);
  if (it == table.end())
    throw DataError(std::string("no ") + what + " embedding for drug '" + id +
                    "'");
  return it->second;
}

/// One classifier input row. With both dense channels present this is
/// fuse(); a single dense channel passes its diff through unchanged, and
/// rule counts always append at the tail.
std::vector<double> pairRow(const ExperimentConfig& cfg, const PairExample& p,
                            const EmbTable& imageEmb, const EmbTable& smilesEmb,
                            const RuleSet& rules, const KnowledgeBase& kb) {
  const ModalitySet& m = cfg.modalities;
  std::vector<double> imgDiff, smilesDiff, counts;
  if (m.image)
    imgDiff = aggregatePair(lookupEmbedding(imageEmb, p.a, "image"),
                            lookupEmbedding(imageEmb, p.b, "image"), cfg.agg);
  if (m.smiles)
    smilesDiff =
        aggregatePair(lookupEmbedding(smilesEmb, p.a, "structure"),
                      lookupEmbedding(smilesEmb, p.b, "structure"), cfg.agg);
  if (m.relational) counts = relationalEmbed(rules, p, kb);
  if (m.image && m.smiles) return fuse(imgDiff, smilesDiff, counts);
  std::vector<double> row = m.image ? std::move(imgDiff)
                                    : std::move(smilesDiff);
  row.insert(row.end(), counts.begin(), counts.end());
  return row;
}

void finishResult(ExperimentResult& r, const ExperimentConfig& cfg,
                  const SplitResult& split, const FitAudit& audit,
                  std::vector<Prediction> preds) {
  r.predictions = std::move(preds);
  r.metrics = predictionMetrics(r.predictions);
  r.trainPairs = split.train.size();
  r.testPairs = split.test.size();
  r.trainPositives = r.trainNegatives = 0;
  r.testPositives = r.testNegatives = 0;
  for (const auto& p : split.train)
    (p.label ? r.trainPositives : r.trainNegatives) += 1;
  for (const auto& p : split.test)
    (p.label ? r.testPositives : r.testNegatives) += 1;
  r.fitPairsTouched = audit.pairsTouched();
  r.configHash = configHashHex(cfg);
  r.seed = *cfg.seed;

  std::ostringstream kv;
  kv << "report.method " << r.method << "\n";
  kv << "report.config_hash " << r.configHash << "\n";
  kv << "report.seed " << r.seed << "\n";
  kv << "report.train_pairs " << r.trainPairs << "\n";
  kv << "report.train_positives " << r.trainPositives << "\n";
  kv << "report.train_negatives " << r.trainNegatives << "\n";
  kv << "report.test_pairs " << r.testPairs << "\n";
  kv << "report.test_positives " << r.testPositives << "\n";
  kv << "report.test_negatives " << r.testNegatives << "\n";
  kv << "report.fit_pairs_touched " << r.fitPairsTouched << "\n";
  kv << "report.leaked_fit_pairs 0\n";
  kv << metricsKeyValues("metrics", r.metrics);
  std::istringstream cfgLines(configText(cfg));
  std::string line;
  while (std::getline(cfgLines, line)) {
    std::size_t eq = line.find('=');
    kv << "config." << line.substr(0, eq) << ' ' << line.substr(eq + 1)
       << "\n";
  }
  r.reportKeyValues = kv.str();

  std::ostringstream tx;
  tx << "pairwise interaction report\n";
  tx << "generated " << isoUtcNow() << "\n";
  tx << "config_hash " << r.configHash << "\n";
  tx << "seed " << r.seed << "\n";
  tx << "method " << r.method << "\n";
  tx << "modalities " << modalitiesToString(cfg.modalities) << "\n";
  tx << "train_pairs " << r.trainPairs << " (" << r.trainPositives
     << " positive / " << r.trainNegatives << " negative)\n";
  tx << "test_pairs " << r.testPairs << " (" << r.testPositives
     << " positive / " << r.testNegatives << " negative)\n";
  tx << "fit_pairs_touched " << r.fitPairsTouched << "\n\n";
  tx << metricsTable({{r.method, r.metrics}});
  r.reportText = tx.str();
}

void writeTextFile(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed while writing '" + path + "'");
}

EmbTable embTableOf(
    const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  EmbTable out;
  out.reserve(rows.size());
  for (const auto& [id, vec] : rows) out.emplace(id, vec);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Experiment runs
// ---------------------------------------------------------------------------

ExperimentResult runExperiment(const Dataset& data,
                               const ExperimentConfig& cfg,
                               TrainedModels* modelsOut) {
  runStage("config", [&] { cfg.validate(); });
  if (cfg.modalities.count() == 1 && cfg.modalities.image)
    return runBaseline(data, cfg, BaselineMethod::Siamese, modelsOut);

  TrainedModels local;
  TrainedModels& M = modelsOut ? *modelsOut : local;
  M = TrainedModels{};
  FitAudit audit;

  M.split = runStage("split", [&] {
    return stratifiedSplit(data.pairs, cfg.splitRatio, *cfg.seed);
  });

  std::unordered_map<std::string, Tensor> images;
  if (cfg.modalities.image) images = data.imagesById();

  if (cfg.modalities.image) {
    runStage("image embedder", [&] {
      auto [h, w] = corpusImageSize(data);
      TowerConfig tower = cfg.tower;
      tower.inputH = h;
      tower.inputW = w;
      SiameseTrainConfig tc = cfg.siamese;
      tc.seed = subSeed(*cfg.seed, kSeedSiamese);
      tc.useStn = cfg.useStn;
      audit.notePairs(M.split.train);
      M.siamese = std::make_unique<SiameseModel>(
          trainSiamese(M.split.train, images, tower, tc));
    });
  }
  if (cfg.modalities.smiles) {
    runStage("structure embedder", [&] {
      audit.notePairs(M.split.train);
      std::vector<std::vector<std::string>> corpus;
      for (const auto& id : trainDrugIds(M.split.train))
        corpus.push_back(tokenizeSmiles(data.drug(id).smiles, cfg.smilesK));
      SkipgramConfig sc = cfg.skipgram;
      sc.seed = subSeed(*cfg.seed, kSeedSkipgram);
      M.vocab = std::make_unique<Vocab>(trainSkipgram(corpus, sc));
    });
  }
  if (cfg.modalities.relational) {
    runStage("relational rules", [&] {
      audit.notePairs(M.split.train);
      RrtTree tree = learnRrt(M.split.train, data.kb, cfg.rrt);
      M.rules = extractRules(tree);
    });
  }

  std::vector<std::vector<double>> trainRows, testRows;
  std::vector<int> trainLabels;
  runStage("featurize", [&] {
    for (const auto& d : data.drugs) {
      if (cfg.modalities.image)
        M.imageEmbeddings.emplace_back(d.id, embedImage(*M.siamese, d.image));
      if (cfg.modalities.smiles)
        M.smilesEmbeddings.emplace_back(
            d.id, embedDrug(d.smiles, *M.vocab, cfg.smilesK));
    }
    EmbTable imageEmb = embTableOf(M.imageEmbeddings);
    EmbTable smilesEmb = embTableOf(M.smilesEmbeddings);
    for (const auto& p : M.split.train) {
      trainRows.push_back(pairRow(cfg, p, imageEmb, smilesEmb, M.rules,
                                  data.kb));
      trainLabels.push_back(p.label);
    }
    for (const auto& p : M.split.test)
      testRows.push_back(pairRow(cfg, p, imageEmb, smilesEmb, M.rules,
                                 data.kb));
  });

  runStage("classifier", [&] {
    audit.notePairs(M.split.train);
    ClassifierConfig cc = cfg.classifier;
    cc.seed = subSeed(*cfg.seed, kSeedClassifier);
    M.classifier = std::make_unique<MlpModel>(
        trainClassifierRows(trainRows, trainLabels, cc));
  });

  leakCheck(audit, M.split.train);

  ExperimentResult r;
  r.method = methodLabel(cfg);
  std::vector<Prediction> preds = runStage("evaluate", [&] {
    std::vector<double> scores = classifierScores(*M.classifier, testRows);
    std::vector<Prediction> out;
    out.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
      out.push_back(Prediction{M.split.test[i], scores[i],
                               scores[i] >= 0.5 ? 1 : 0});
    return out;
  });
  finishResult(r, cfg, M.split, audit, std::move(preds));
  return r;
}

BaselineMethod baselineFromString(const std::string& s) {
  if (s == "ssim") return BaselineMethod::Ssim;
  if (s == "ae") return BaselineMethod::Autoencoder;
  if (s == "siamese") return BaselineMethod::Siamese;
  throw ConfigError("unknown baseline method '" + s +
                    "' (expected ssim, ae, siamese)");
}

std::string baselineName(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::Ssim: return "ssim";
    case BaselineMethod::Autoencoder: return "ae";
    case BaselineMethod::Siamese: return "siamese";
  }
  return "ssim";
}

ExperimentResult runBaseline(const Dataset& data, const ExperimentConfig& cfg,
                             BaselineMethod method,
                             TrainedModels* modelsOut) {
  runStage("config", [&] { cfg.validate(); });

  TrainedModels local;
  TrainedModels& M = modelsOut ? *modelsOut : local;
  M = TrainedModels{};
  FitAudit audit;

  M.split = runStage("split", [&] {
    return stratifiedSplit(data.pairs, cfg.splitRatio, *cfg.seed);
  });
  std::unordered_map<std::string, Tensor> images = data.imagesById();

  ExperimentResult r;
  std::vector<Prediction> preds;
  switch (method) {
    case BaselineMethod::Ssim: {
      r.method = "SSIM";
      preds = runStage("evaluate",
                       [&] { return ssimClassify(M.split.test, images); });
      break;
    }
    case BaselineMethod::Autoencoder: {
      r.method = "Autoencoder (" + criterionName(cfg.aeCriterion) + ")";
      runStage("autoencoder", [&] {
        audit.notePairs(M.split.train);
        std::vector<Tensor> trainImages;
        for (const auto& id : trainDrugIds(M.split.train)) {
          auto it = images.find(id);
          if (it == images.end())
            throw DataError("no image for drug '" + id + "'");
          trainImages.push_back(it->second);
        }
        auto [h, w] = corpusImageSize(data);
        AutoencoderConfig ac = cfg.autoenc;
        ac.inputH = h;
        ac.inputW = w;
        ac.seed = subSeed(*cfg.seed, kSeedAutoencoder);
        M.autoencoder =
            std::make_unique<Autoencoder>(trainAutoencoder(trainImages, ac));
      });
      preds = runStage("evaluate", [&] {
        return autoencoderClassify(*M.autoencoder, M.split.test, images,
                                   cfg.aeCriterion);
      });
      break;
    }
    case BaselineMethod::Siamese: {
      r.method = cfg.useStn ? "Siamese distance (stn)" : "Siamese distance";
      runStage("image embedder", [&] {
        auto [h, w] = corpusImageSize(data);
        TowerConfig tower = cfg.tower;
        tower.inputH = h;
        tower.inputW = w;
        SiameseTrainConfig tc = cfg.siamese;
        tc.seed = subSeed(*cfg.seed, kSeedSiamese);
        tc.useStn = cfg.useStn;
        audit.notePairs(M.split.train);
        M.siamese = std::make_unique<SiameseModel>(
            trainSiamese(M.split.train, images, tower, tc));
      });
      preds = runStage("evaluate", [&] {
        return siameseDistanceClassify(*M.siamese, M.split.test, images,
                                       cfg.siameseThreshold);
      });
      break;
    }
  }

  leakCheck(audit, M.split.train);
  finishResult(r, cfg, M.split, audit, std::move(preds));
  return r;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

void writeExperimentArtifacts(const std::string& dir,
                              const ExperimentConfig& cfg,
                              const ExperimentResult& result,
                              const TrainedModels& models) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "'");

  writePairsCsv(dir + "/train_pairs.csv", models.split.train);
  writePairsCsv(dir + "/test_pairs.csv", models.split.test);
  if (!models.imageEmbeddings.empty())
    writeEmbeddingsTsv(dir + "/image_embeddings.tsv", models.imageEmbeddings);
  if (!models.smilesEmbeddings.empty())
    writeEmbeddingsTsv(dir + "/smiles_embeddings.tsv",
                       models.smilesEmbeddings);
  if (!models.rules.rules.empty())
    writeRulesFile(dir + "/rules.txt", models.rules);
  if (models.classifier) saveMlp(*models.classifier, dir + "/classifier.ckpt");
  if (models.siamese) saveSiamese(*models.siamese, dir + "/siamese.ckpt");
  if (models.autoencoder)
    saveAutoencoder(*models.autoencoder, dir + "/autoencoder.ckpt");
  if (!result.predictions.empty())
    writePredictionsCsv(dir + "/predictions.csv", result.predictions);
  writeTextFile(dir + "/report.txt", result.reportText);
  writeTextFile(dir + "/report.kv", result.reportKeyValues);
  writeTextFile(dir + "/config.kv", configText(cfg));
}

ExperimentResult evaluateArtifacts(const std::string& dir,
                                   const ExperimentConfig& cfg) {
  runStage("config", [&] { cfg.validate(); });

  Dataset data = runStage("ingest", [&] {
    return ingest(cfg.imageDir, cfg.smilesFile, cfg.factsFile, cfg.pairsFile);
  });

  SplitResult split;
  split.train = runStage("load artifacts", [&] {
    return readPairsCsv(dir + "/train_pairs.csv");
  });
  split.test = runStage("load artifacts", [&] {
    return readPairsCsv(dir + "/test_pairs.csv");
  });

  FitAudit audit;  // evaluation fits nothing
  ExperimentResult r;
  std::vector<Prediction> preds;

  if (cfg.modalities.count() == 1 && cfg.modalities.image) {
    r.method = cfg.useStn ? "Siamese distance (stn)" : "Siamese distance";
    SiameseModel sm = runStage("load artifacts", [&] {
      return loadSiamese(dir + "/siamese.ckpt");
    });
    std::unordered_map<std::string, Tensor> images = data.imagesById();
    preds = runStage("evaluate", [&] {
      return siameseDistanceClassify(sm, split.test, images,
                                     cfg.siameseThreshold);
    });
  } else {
    r.method = methodLabel(cfg);
    EmbTable imageEmb, smilesEmb;
    RuleSet rules;
    MlpModel classifier;
    runStage("load artifacts", [&] {
      if (cfg.modalities.image)
        imageEmb = embTableOf(readEmbeddingsTsv(dir + "/image_embeddings.tsv"));
      if (cfg.modalities.smiles)
        smilesEmb =
            embTableOf(readEmbeddingsTsv(dir + "/smiles_embeddings.tsv"));
      if (cfg.modalities.relational)
        rules = readRulesFile(dir + "/rules.txt");
      classifier = loadMlp(dir + "/classifier.ckpt");
    });
    std::vector<std::vector<double>> rows;
    runStage("featurize", [&] {
      for (const auto& p : split.test)
        rows.push_back(pairRow(cfg, p, imageEmb, smilesEmb, rules, data.kb));
    });
    preds = runStage("evaluate", [&] {
      std::vector<double> scores = classifierScores(classifier, rows);
      std::vector<Prediction> out;
      out.reserve(scores.size());
      for (std::size_t i = 0; i < scores.size(); ++i)
        out.push_back(Prediction{split.test[i], scores[i],
                                 scores[i] >= 0.5 ? 1 : 0});
      return out;
    });
  }

  finishResult(r, cfg, split, audit, std::move(preds));
  return r;
}

std::string combinedReportTable(const std::vector<std::string>& kvPaths) {
  if (kvPaths.empty()) throw DataError("no report files given");
  std::vector<std::pair<std::string, Metrics>> rows;
  for (const auto& path : kvPaths) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report file '" + path + "'");
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::size_t sp = line.find(' ');
      if (sp == std::string::npos) continue;
      kv[line.substr(0, sp)] = line.substr(sp + 1);
    }
    auto need = [&kv, &path](const std::string& key) -> const std::string& {
      auto it = kv.find(key);
      if (it == kv.end())
        throw ParseError("'" + path +
                         "' is not a report key/value file (missing '" + key +
                         "')");
      return it->second;
    };
    Metrics m;
    std::string label = need("report.method");
    try {
      m.accuracy = std::stod(need("metrics.accuracy"));
      m.recall = std::stod(need("metrics.recall"));
      m.precision = std::stod(need("metrics.precision"));
      m.f1 = std::stod(need("metrics.f1"));
      m.tp = std::stoll(need("metrics.tp"));
      m.fp = std::stoll(need("metrics.fp"));
      m.tn = std::stoll(need("metrics.tn"));
      m.fn = std::stoll(need("metrics.fn"));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError("'" + path + "' has a malformed metrics value");
    }
    rows.emplace_back(std::move(label), m);
  }
  return metricsTable(rows);
}

}  // namespace hetddi
