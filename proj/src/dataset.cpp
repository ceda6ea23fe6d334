#include "hetddi/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "hetddi/error.hpp"
#include "hetddi/image_io.hpp"
#include "hetddi/rng.hpp"
#include "hetddi/smiles_embedding.hpp"

namespace hetddi {

namespace {

std::string pairKey(const PairExample& p) { return p.a + "|" + p.b; }

bool pairLess(const PairExample& x, const PairExample& y) {
  if (x.a != y.a) return x.a < y.a;
  return x.b < y.b;
}

std::string joinIds(const std::set<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += ", ";
    out += id;
  }
  return out;
}

}  // namespace

const DrugRecord& Dataset::drug(const std::string& id) const {
  if (index_.size() != drugs.size()) {
    index_.clear();
    for (std::size_t i = 0; i < drugs.size(); ++i) index_[drugs[i].id] = i;
  }
  auto it = index_.find(id);
  if (it == index_.end()) throw DataError("unknown drug '" + id + "'");
  return drugs[it->second];
}

bool Dataset::hasDrug(const std::string& id) const {
  for (const auto& d : drugs)
    if (d.id == id) return true;
  return false;
}

std::unordered_map<std::string, Tensor> Dataset::imagesById() const {
  std::unordered_map<std::string, Tensor> out;
  out.reserve(drugs.size());
  for (const auto& d : drugs) out.emplace(d.id, d.image);
  return out;
}

namespace {

std::vector<PairExample> readPairsCsvCounting(const std::string& path,
                                              int* duplicatesDropped) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pairs file '" + path + "'");

  std::string line;
  if (!std::getline(in, line))
    throw ParseError("pairs file must start with header 'drug_a,drug_b,label'",
                     1, 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "drug_a,drug_b,label")
    throw ParseError("pairs file must start with header 'drug_a,drug_b,label'",
                     1, 1);

  std::map<std::string, PairExample> seen;
  int dropped = 0;
  int lineNo = 1;
  while (std::getline(in, line)) {
    ++lineNo;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    if (fields.size() != 3)
      throw ParseError("expected drug_a,drug_b,label", lineNo, 1);
    if (fields[0].empty() || fields[1].empty())
      throw ParseError("pair row has an empty drug id", lineNo, 1);

    int labelCol = static_cast<int>(fields[0].size() + fields[1].size()) + 3;
    if (fields[2] != "0" && fields[2] != "1")
      throw ParseError("pair label must be 0 or 1, got '" + fields[2] + "'",
                       lineNo, labelCol);
    if (fields[0] == fields[1])
      throw ParseError("pair of a drug with itself: '" + fields[0] + "'",
                       lineNo, 1);

    PairExample p = canonicalPair(fields[0], fields[1], fields[2] == "1");
    auto it = seen.find(pairKey(p));
    if (it == seen.end()) {
      seen.emplace(pairKey(p), p);
    } else if (it->second.label == p.label) {
      ++dropped;
    } else {
      throw DataError("pair (" + p.a + ", " + p.b +
                      ") is listed with both labels 0 and 1");
    }
  }

  if (seen.empty())
    throw DataError("pairs file '" + path + "' has no pairs");

  std::vector<PairExample> out;
  out.reserve(seen.size());
  for (auto& [key, p] : seen) out.push_back(std::move(p));
  std::sort(out.begin(), out.end(), pairLess);
  if (duplicatesDropped) *duplicatesDropped = dropped;
  return out;
}

}  // namespace

std::vector<PairExample> readPairsCsv(const std::string& path) {
  return readPairsCsvCounting(path, nullptr);
}

void writePairsCsv(const std::string& path,
                   const std::vector<PairExample>& pairs) {
  if (pairs.empty()) throw DataError("no pairs to export");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "drug_a,drug_b,label\n";
  for (const auto& p : pairs)
    out << p.a << ',' << p.b << ',' << p.label << '\n';
  out.flush();
  if (!out) throw IoError("failed while writing '" + path + "'");
}

std::string IngestReport::text() const {
  std::ostringstream os;
  os << "ingest summary\n";
  os << "  drugs   " << drugCount << "\n";
  os << "  pairs   " << pairCount << " (" << positives << " positive / "
     << negatives << " negative, " << pairDuplicatesDropped
     << " duplicate rows dropped)\n";
  os << "  images  " << imageH << "x" << imageW << "\n";
  os << "  facts   " << factCount << " over " << predicateCount
     << " predicates (" << factDuplicatesDropped << " duplicates dropped)\n";
  return os.str();
}

Dataset ingest(const std::string& imageDir, const std::string& smilesFile,
               const std::string& factsFile, const std::string& pairsFile,
               IngestReport* report) {
  int pairDups = 0;
  std::vector<PairExample> pairs = readPairsCsvCounting(pairsFile, &pairDups);

  std::unordered_map<std::string, std::string> smilesById;
  for (auto& rec : readSmilesTsv(smilesFile))
    smilesById.emplace(std::move(rec.drugId), std::move(rec.smiles));

  KnowledgeBase kb = readFactsFile(factsFile);

  std::set<std::string> universe;
  for (const auto& p : pairs) {
    universe.insert(p.a);
    universe.insert(p.b);
  }

  namespace fs = std::filesystem;
  std::set<std::string> missingImages;
  std::set<std::string> missingSmiles;
  std::unordered_map<std::string, std::string> imagePaths;
  for (const auto& id : universe) {
    std::string png = imageDir + "/" + id + ".png";
    std::string pgm = imageDir + "/" + id + ".pgm";
    if (fs::exists(png))
      imagePaths.emplace(id, png);
    else if (fs::exists(pgm))
      imagePaths.emplace(id, pgm);
    else
      missingImages.insert(id);
    if (smilesById.find(id) == smilesById.end()) missingSmiles.insert(id);
  }
  if (!missingImages.empty() || !missingSmiles.empty()) {
    std::string msg = "ingest aborted:";
    if (!missingImages.empty())
      msg += " drugs missing images: [" + joinIds(missingImages) + "]";
    if (!missingSmiles.empty()) {
      if (!missingImages.empty()) msg += ";";
      msg += " drugs missing structure strings: [" + joinIds(missingSmiles) +
             "]";
    }
    throw DataError(msg);
  }

  Dataset ds;
  ds.kb = std::move(kb);
  ds.pairs = std::move(pairs);
  int imageH = 0;
  int imageW = 0;
  for (const auto& id : universe) {
    Image img = readImage(imagePaths.at(id));
    if (imageH == 0) {
      imageH = img.h;
      imageW = img.w;
    } else if (img.h != imageH || img.w != imageW) {
      throw DataError("image for drug '" + id + "' is " +
                      std::to_string(img.h) + "x" + std::to_string(img.w) +
                      " but the corpus uses " + std::to_string(imageH) + "x" +
                      std::to_string(imageW));
    }
    ds.drugs.push_back(DrugRecord{id, imageTensor(img), smilesById.at(id)});
  }

  if (report) {
    report->drugCount = ds.drugs.size();
    report->pairCount = ds.pairs.size();
    report->positives = 0;
    report->negatives = 0;
    for (const auto& p : ds.pairs)
      (p.label ? report->positives : report->negatives) += 1;
    report->pairDuplicatesDropped = pairDups;
    report->factCount = ds.kb.factCount();
    report->predicateCount = ds.kb.predicateCount();
    report->factDuplicatesDropped = ds.kb.duplicatesDropped();
    report->imageH = imageH;
    report->imageW = imageW;
  }
  return ds;
}

SplitResult stratifiedSplit(const std::vector<PairExample>& pairs,
                            double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw ConfigError("split ratio must lie strictly between 0 and 1, got " +
                      std::to_string(ratio));

  std::vector<PairExample> classes[2];
  for (const auto& p : pairs) classes[p.label ? 1 : 0].push_back(p);
  for (int c = 0; c < 2; ++c) {
    if (classes[c].size() < 2)
      throw DataError("class " + std::to_string(c) + " has " +
                      std::to_string(classes[c].size()) +
                      " pair(s); stratified splitting needs at least 2 per "
                      "class");
  }

  Rng rng(seed);
  SplitResult out;
  for (int c = 0; c < 2; ++c) {
    auto& cls = classes[c];
    rng.shuffle(cls);
    auto nTrain = static_cast<std::size_t>(
        std::lround(ratio * static_cast<double>(cls.size())));
    if (nTrain < 1) nTrain = 1;
    if (nTrain > cls.size() - 1) nTrain = cls.size() - 1;
    out.train.insert(out.train.end(), cls.begin(), cls.begin() + nTrain);
    out.test.insert(out.test.end(), cls.begin() + nTrain, cls.end());
  }
  std::sort(out.train.begin(), out.train.end(), pairLess);
  std::sort(out.test.begin(), out.test.end(), pairLess);
  return out;
}

}  // namespace hetddi
