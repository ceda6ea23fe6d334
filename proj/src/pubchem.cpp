#include "hetddi/pubchem.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "hetddi/error.hpp"

namespace hetddi {

namespace {

std::string fetchBody(httplib::Client& cli, const std::string& base,
                      const std::string& path) {
  httplib::Result res = cli.Get(path);
  if (!res)
    throw UnavailableError("cannot reach '" + base +
                           "': " + httplib::to_string(res.error()));
  if (res->status == 404)
    throw NotFoundError("'" + base + path + "' does not exist");
  if (res->status != 200)
    throw UnavailableError("GET '" + base + path + "' returned HTTP " +
                           std::to_string(res->status));
  return res->body;
}

std::string trimmed(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

FetchResult fetchPubchem(std::int64_t cid, const std::string& outDir,
                         const PubchemConfig& cfg) {
  if (cid <= 0)
    throw NotFoundError("PubChem CID must be a positive integer, got " +
                        std::to_string(cid));
  if (cfg.offline)
    throw UnavailableError("offline mode: refusing to contact '" +
                           cfg.baseUrl + "'");

  std::error_code ec;
  std::filesystem::create_directories(outDir, ec);
  if (ec) throw IoError("cannot create directory '" + outDir + "'");

  httplib::Client cli(cfg.baseUrl);
  cli.set_connection_timeout(cfg.timeoutSec, 0);
  cli.set_read_timeout(cfg.timeoutSec, 0);

  std::string stem = "/rest/pug/compound/cid/" + std::to_string(cid);
  std::string png = fetchBody(cli, cfg.baseUrl, stem + "/PNG");

  if (cfg.politenessMs > 0)
    std::this_thread::sleep_for(std::chrono::milliseconds(cfg.politenessMs));

  std::string smiles = trimmed(
      fetchBody(cli, cfg.baseUrl, stem + "/property/CanonicalSMILES/TXT"));
  if (smiles.empty())
    throw UnavailableError("PubChem returned an empty structure record for "
                           "CID " +
                           std::to_string(cid));

  FetchResult out;
  out.smiles = smiles;
  out.imagePath = outDir + "/CID" + std::to_string(cid) + ".png";
  {
    std::ofstream img(out.imagePath, std::ios::binary);
    if (!img) throw IoError("cannot open '" + out.imagePath + "' for writing");
    img.write(png.data(), static_cast<std::streamsize>(png.size()));
    img.flush();
    if (!img) throw IoError("failed while writing '" + out.imagePath + "'");
  }
  out.smilesFile = outDir + "/smiles.tsv";
  {
    std::ofstream tsv(out.smilesFile, std::ios::app);
    if (!tsv)
      throw IoError("cannot open '" + out.smilesFile + "' for writing");
    tsv << "CID" << cid << '\t' << smiles << '\n';
    tsv.flush();
    if (!tsv) throw IoError("failed while writing '" + out.smilesFile + "'");
  }
  return out;
}

}  // namespace hetddi
