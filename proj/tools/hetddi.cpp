#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hetddi/dataset.hpp"
#include "hetddi/experiment.hpp"
#include "hetddi/pubchem.hpp"

namespace {

// Shared options. Values land in the experiment configuration with the
// precedence: struct defaults, then config file, then HETDDI_* environment
// variables, then explicit flags, then --set pairs.
struct CommonFlags {
  std::string config, modalities, agg, seed, ratio;
  std::string imageDir, smilesFile, factsFile, pairsFile, outDir;
  bool stn = false;
  std::vector<std::string> sets;
  CLI::Option *oModalities{}, *oAgg{}, *oSeed{}, *oRatio{}, *oStn{},
      *oImageDir{}, *oSmilesFile{}, *oFactsFile{}, *oPairsFile{}, *oOutDir{};
};

void addCommonOptions(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "key=value configuration file");
  f.oModalities = sub->add_option("--modalities", f.modalities,
                                  "comma list of img, smiles, rel");
  f.oAgg = sub->add_option("--agg", f.agg,
                           "embedding aggregation: sub, avg or abs");
  f.oSeed = sub->add_option("--seed", f.seed,
                            "master seed (mandatory for every run)");
  f.oRatio = sub->add_option("--ratio", f.ratio,
                             "training fraction of the stratified split");
  f.oStn = sub->add_flag("--stn", f.stn,
                         "put a spatial transformer in front of the towers");
  f.oImageDir = sub->add_option(
      "--image-dir", f.imageDir, "directory with <drug>.png / <drug>.pgm");
  f.oSmilesFile = sub->add_option("--smiles-file", f.smilesFile,
                                  "drug_id<TAB>smiles table");
  f.oFactsFile = sub->add_option(
      "--facts-file", f.factsFile, "Predicate(\"drug\",\"protein\"). facts");
  f.oPairsFile = sub->add_option("--pairs-file", f.pairsFile,
                                 "drug_a,drug_b,label pair list");
  f.oOutDir = sub->add_option("--out-dir", f.outDir,
                              "output directory (default out)");
  sub->add_option("--set", f.sets,
                  "any configuration key as key=value (repeatable)");
}

hetddi::ExperimentConfig buildConfig(const CommonFlags& f,
                                     bool autoConfigFromRun) {
  std::string path = f.config;
  if (path.empty() && autoConfigFromRun) {
    std::string dir = f.oOutDir->count() ? f.outDir : std::string("out");
    std::string candidate = dir + "/config.kv";
    if (std::filesystem::exists(candidate)) path = candidate;
  }
  hetddi::ExperimentConfig cfg = hetddi::configFromFile(path);
  auto applyIf = [&cfg](CLI::Option* opt, const char* key,
                        const std::string& v) {
    if (opt->count()) hetddi::applyConfigKeyValue(cfg, key, v);
  };
  applyIf(f.oModalities, "modalities", f.modalities);
  applyIf(f.oAgg, "agg", f.agg);
  applyIf(f.oSeed, "seed", f.seed);
  applyIf(f.oRatio, "split_ratio", f.ratio);
  applyIf(f.oImageDir, "image_dir", f.imageDir);
  applyIf(f.oSmilesFile, "smiles_file", f.smilesFile);
  applyIf(f.oFactsFile, "facts_file", f.factsFile);
  applyIf(f.oPairsFile, "pairs_file", f.pairsFile);
  applyIf(f.oOutDir, "out_dir", f.outDir);
  if (f.oStn->count()) hetddi::applyConfigKeyValue(cfg, "use_stn", "1");
  for (const std::string& s : f.sets) {
    std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw hetddi::ConfigError("--set expects key=value, got '" + s + "'");
    hetddi::applyConfigKeyValue(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  return cfg;
}

hetddi::Dataset ingestFromConfig(const hetddi::ExperimentConfig& cfg,
                                 hetddi::IngestReport* rep = nullptr) {
  return hetddi::ingest(cfg.imageDir, cfg.smilesFile, cfg.factsFile,
                        cfg.pairsFile, rep);
}

void ensureDir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw hetddi::IoError("cannot create directory '" + dir + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "drug pair interaction experiments over image, structure and "
      "relational channels"};
  app.require_subcommand(1);

  CLI::App* cIngest = app.add_subcommand(
      "ingest", "validate a corpus and write its canonical pair list");
  CommonFlags fIngest;
  addCommonOptions(cIngest, fIngest);

  CLI::App* cFetch = app.add_subcommand(
      "fetch", "download one compound's depiction and structure from PubChem");
  CommonFlags fFetch;
  addCommonOptions(cFetch, fFetch);
  std::int64_t cid = 0;
  cFetch->add_option("--cid", cid, "PubChem compound id")->required();
  bool offline = false;
  CLI::Option* oOffline = cFetch->add_flag(
      "--offline", offline, "fail instead of touching the network");
  std::string baseUrl;
  CLI::Option* oBaseUrl = cFetch->add_option(
      "--base-url", baseUrl, "override the PubChem endpoint");

  CLI::App* cSplit = app.add_subcommand(
      "split", "stratified train/test split of a pair list");
  CommonFlags fSplit;
  addCommonOptions(cSplit, fSplit);

  CLI::App* cTrain = app.add_subcommand(
      "train",
      "fit the selected modalities and the pair classifier, then evaluate");
  CommonFlags fTrain;
  addCommonOptions(cTrain, fTrain);

  CLI::App* cEvaluate = app.add_subcommand(
      "evaluate", "score the held-out pairs of a finished training run");
  CommonFlags fEvaluate;
  addCommonOptions(cEvaluate, fEvaluate);

  CLI::App* cBaseline = app.add_subcommand(
      "baseline", "run a single-modality reference method");
  CommonFlags fBaseline;
  addCommonOptions(cBaseline, fBaseline);
  std::string method;
  cBaseline->add_option("--method", method, "ssim, ae or siamese")->required();

  CLI::App* cReport = app.add_subcommand(
      "report", "combine key/value reports into one comparison table");
  std::vector<std::string> kvPaths;
  cReport->add_option("reports", kvPaths, "report.kv files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(cIngest)) {
      hetddi::ExperimentConfig cfg = buildConfig(fIngest, false);
      hetddi::IngestReport rep;
      hetddi::Dataset ds = ingestFromConfig(cfg, &rep);
      ensureDir(cfg.outDir);
      const std::string out = cfg.outDir + "/pairs.csv";
      hetddi::writePairsCsv(out, ds.pairs);
      std::cout << rep.text();
      std::cout << "canonical pairs written to '" << out << "'\n";
    } else if (app.got_subcommand(cFetch)) {
      hetddi::ExperimentConfig cfg = buildConfig(fFetch, false);
      hetddi::PubchemConfig pc = cfg.fetch;
      if (oOffline->count()) pc.offline = true;
      if (oBaseUrl->count()) pc.baseUrl = baseUrl;
      hetddi::FetchResult fr = hetddi::fetchPubchem(cid, cfg.outDir, pc);
      std::cout << "image   " << fr.imagePath << "\n";
      std::cout << "smiles  " << fr.smiles << "\n";
      std::cout << "record appended to '" << fr.smilesFile << "'\n";
    } else if (app.got_subcommand(cSplit)) {
      hetddi::ExperimentConfig cfg = buildConfig(fSplit, false);
      if (!cfg.seed)
        throw hetddi::ConfigError(
            "seed is mandatory: pass --seed, config key 'seed', or "
            "HETDDI_SEED");
      std::vector<hetddi::PairExample> pairs =
          hetddi::readPairsCsv(cfg.pairsFile);
      hetddi::SplitResult split =
          hetddi::stratifiedSplit(pairs, cfg.splitRatio, *cfg.seed);
      ensureDir(cfg.outDir);
      hetddi::writePairsCsv(cfg.outDir + "/train_pairs.csv", split.train);
      hetddi::writePairsCsv(cfg.outDir + "/test_pairs.csv", split.test);
      std::cout << "train " << split.train.size() << " pairs, test "
                << split.test.size() << " pairs written to '" << cfg.outDir
                << "'\n";
    } else if (app.got_subcommand(cTrain)) {
      hetddi::ExperimentConfig cfg = buildConfig(fTrain, false);
      hetddi::Dataset ds = ingestFromConfig(cfg);
      hetddi::TrainedModels models;
      hetddi::ExperimentResult result = hetddi::runExperiment(ds, cfg,
                                                              &models);
      hetddi::writeExperimentArtifacts(cfg.outDir, cfg, result, models);
      std::cout << result.reportText;
      std::cout << "\nartifacts written to '" << cfg.outDir << "'\n";
    } else if (app.got_subcommand(cEvaluate)) {
      hetddi::ExperimentConfig cfg = buildConfig(fEvaluate, true);
      hetddi::ExperimentResult result =
          hetddi::evaluateArtifacts(cfg.outDir, cfg);
      std::cout << result.reportText;
    } else if (app.got_subcommand(cBaseline)) {
      hetddi::ExperimentConfig cfg = buildConfig(fBaseline, false);
      hetddi::Dataset ds = ingestFromConfig(cfg);
      hetddi::TrainedModels models;
      hetddi::ExperimentResult result = hetddi::runBaseline(
          ds, cfg, hetddi::baselineFromString(method), &models);
      hetddi::writeExperimentArtifacts(cfg.outDir, cfg, result, models);
      std::cout << result.reportText;
      std::cout << "\nartifacts written to '" << cfg.outDir << "'\n";
    } else if (app.got_subcommand(cReport)) {
      std::cout << hetddi::combinedReportTable(kvPaths);
    }
  } catch (const hetddi::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
