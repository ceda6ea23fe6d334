#include "hetddi/smiles_embedding.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace hetddi {

std::vector<SmilesRecord> readSmilesTsv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::vector<SmilesRecord> records;
  std::unordered_map<std::string, int> seen;
  std::string line;
  int lineNo = 0;
  while (std::getline(is, line)) {
    ++lineNo;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError("expected drug_id<TAB>smiles", lineNo, 1);
    }
    if (line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError("expected exactly two fields", lineNo,
                       static_cast<int>(tab) + 2);
    }
    SmilesRecord rec{line.substr(0, tab), line.substr(tab + 1)};
    if (rec.drugId.empty()) throw ParseError("empty drug id", lineNo, 1);
    if (rec.smiles.empty()) {
      throw ParseError("empty smiles for '" + rec.drugId + "'", lineNo,
                       static_cast<int>(tab) + 2);
    }
    for (std::size_t i = 0; i < rec.smiles.size(); ++i) {
      if (std::isspace(static_cast<unsigned char>(rec.smiles[i]))) {
        throw ParseError("whitespace inside smiles for '" + rec.drugId + "'",
                         lineNo, static_cast<int>(tab + 2 + i));
      }
    }
    auto [it, inserted] = seen.emplace(rec.drugId, lineNo);
    if (!inserted) {
      throw DataError("duplicate drug id '" + rec.drugId + "' (lines " +
                      std::to_string(it->second) + " and " +
                      std::to_string(lineNo) + ")");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<std::string> tokenizeSmiles(const std::string& smiles, int k) {
  if (k < 1) throw ConfigError("token length must be >= 1");
  if (smiles.empty()) throw DataError("cannot tokenize an empty string");
  const std::size_t len = smiles.size();
  if (len <= static_cast<std::size_t>(k)) return {smiles};
  std::vector<std::string> tokens;
  tokens.reserve(len - k + 1);
  for (std::size_t i = 0; i + k <= len; ++i) {
    tokens.push_back(smiles.substr(i, static_cast<std::size_t>(k)));
  }
  return tokens;
}

namespace {

double sigmoidStable(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Cumulative unigram^(3/4) table; sampling is a binary search over one
// uniform draw.
class NegativeSampler {
 public:
  NegativeSampler(const std::vector<std::int64_t>& counts) {
    cum_.reserve(counts.size());
    double acc = 0.0;
    for (std::int64_t c : counts) {
      acc += std::pow(static_cast<double>(c), 0.75);
      cum_.push_back(acc);
    }
  }

  int draw(Rng& rng) const {
    const double u = rng.uniform() * cum_.back();
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
    const auto idx = std::min<std::size_t>(
        static_cast<std::size_t>(it - cum_.begin()), cum_.size() - 1);
    return static_cast<int>(idx);
  }

 private:
  std::vector<double> cum_;
};

}  // namespace

Vocab trainSkipgram(const std::vector<std::vector<std::string>>& corpus,
                    const SkipgramConfig& cfg, SkipgramTrace* trace) {
  if (cfg.dim < 1) throw ConfigError("embedding dim must be >= 1");
  if (cfg.window < 1) throw ConfigError("window must be >= 1");
  if (cfg.negatives < 0) throw ConfigError("negatives must be >= 0");
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.lr <= 0.0) throw ConfigError("learning rate must be positive");

  Vocab v;
  v.dim = cfg.dim;
  std::vector<std::int64_t> counts;
  std::vector<std::vector<int>> sentences;
  sentences.reserve(corpus.size());
  for (const auto& sent : corpus) {
    std::vector<int> ids;
    ids.reserve(sent.size());
    for (const auto& tok : sent) {
      auto [it, inserted] =
          v.index.emplace(tok, static_cast<int>(v.tokens.size()));
      if (inserted) {
        v.tokens.push_back(tok);
        counts.push_back(0);
      }
      ++counts[static_cast<std::size_t>(it->second)];
      ids.push_back(it->second);
    }
    sentences.push_back(std::move(ids));
  }
  if (v.tokens.empty()) throw DataError("empty training corpus");

  const std::size_t V = v.tokens.size();
  const std::size_t D = static_cast<std::size_t>(cfg.dim);
  Rng rng(cfg.seed);
  v.embed.resize(V * D);
  for (auto& x : v.embed) x = (rng.uniform() - 0.5) / cfg.dim;
  v.context.assign(V * D, 0.0);

  std::int64_t totalPositions = 0;
  for (const auto& s : sentences) {
    totalPositions += static_cast<std::int64_t>(s.size());
  }
  const std::int64_t planned =
      std::max<std::int64_t>(1, totalPositions * cfg.epochs);
  const double minLr = cfg.lr * 1e-4;

  NegativeSampler sampler(counts);
  std::vector<double> centerGrad(D);
  std::int64_t processed = 0;

  if (trace) trace->epochLoss.clear();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epochLoss = 0.0;
    std::int64_t epochPairs = 0;
    for (const auto& sent : sentences) {
      const int n = static_cast<int>(sent.size());
      for (int i = 0; i < n; ++i, ++processed) {
        const double lr =
            std::max(minLr, cfg.lr * (1.0 - static_cast<double>(processed) /
                                                static_cast<double>(planned)));
        const int center = sent[static_cast<std::size_t>(i)];
        double* cv = v.embed.data() + static_cast<std::size_t>(center) * D;
        // shrink the window like word2vec: an effective radius in [1,window]
        const int radius = 1 + static_cast<int>(rng.below(
                                   static_cast<std::uint64_t>(cfg.window)));
        for (int j = std::max(0, i - radius);
             j <= std::min(n - 1, i + radius); ++j) {
          if (j == i) continue;
          const int target = sent[static_cast<std::size_t>(j)];
          std::fill(centerGrad.begin(), centerGrad.end(), 0.0);
          double pairLoss = 0.0;
          for (int s = 0; s <= cfg.negatives; ++s) {
            int out;
            double label;
            if (s == 0) {
              out = target;
              label = 1.0;
            } else {
              out = sampler.draw(rng);
              if (out == target) continue;
              label = 0.0;
            }
            double* ov = v.context.data() + static_cast<std::size_t>(out) * D;
            double z = 0.0;
            for (std::size_t d = 0; d < D; ++d) z += cv[d] * ov[d];
            const double p = sigmoidStable(z);
            pairLoss -= label > 0.5 ? std::log(std::max(p, 1e-12))
                                    : std::log(std::max(1.0 - p, 1e-12));
            const double g = lr * (label - p);
            for (std::size_t d = 0; d < D; ++d) {
              centerGrad[d] += g * ov[d];
              ov[d] += g * cv[d];
            }
          }
          for (std::size_t d = 0; d < D; ++d) cv[d] += centerGrad[d];
          epochLoss += pairLoss;
          ++epochPairs;
        }
      }
    }
    if (trace) {
      trace->epochLoss.push_back(epochPairs > 0 ? epochLoss / epochPairs
                                                : 0.0);
    }
  }
  return v;
}

std::vector<double> embedDrug(const std::string& smiles, const Vocab& vocab,
                              int k) {
  if (vocab.dim < 1) throw ConfigError("vocabulary has no embedding matrix");
  const auto tokens = tokenizeSmiles(smiles, k);
  std::vector<double> out(static_cast<std::size_t>(vocab.dim), 0.0);
  int hits = 0;
  for (const auto& tok : tokens) {
    const int idx = vocab.find(tok);
    if (idx < 0) continue;
    const double* row = vocab.vector(idx);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += row[d];
    ++hits;
  }
  if (hits > 0) {
    for (auto& x : out) x /= hits;
  }
  return out;
}

}  // namespace hetddi
