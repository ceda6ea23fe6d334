#pragma once

#include <cstdint>
#include <string>

namespace hetddi {

/// Remote-fetch settings. `baseUrl` exists so tests can point the client at
/// a local server; `offline` refuses before any socket is opened.
struct PubchemConfig {
  std::string baseUrl = "https://pubchem.ncbi.nlm.nih.gov";
  bool offline = false;
  int politenessMs = 200;  // pause between the two requests of one fetch
  int timeoutSec = 30;
};

struct FetchResult {
  std::string imagePath;   // <outDir>/CID<cid>.png
  std::string smiles;      // canonical structure string, trimmed
  std::string smilesFile;  // <outDir>/smiles.tsv, record appended
};

/// Downloads the depiction PNG and the canonical SMILES for one compound id
/// and files both under the drug id `CID<cid>` so the output directory can
/// be ingested directly. Unknown ids raise NotFoundError; network failures
/// and offline mode raise UnavailableError (the call may be retried).
FetchResult fetchPubchem(std::int64_t cid, const std::string& outDir,
                         const PubchemConfig& cfg = {});

}  // namespace hetddi
