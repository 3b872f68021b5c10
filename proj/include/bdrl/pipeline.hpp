#pragma once

#include <map>
#include <string>

#include "bdrl/config.hpp"
#include "bdrl/eval.hpp"

namespace bdrl {

struct RunManifest {
  std::map<std::string, std::string> config;     // canonical snapshot
  std::map<std::string, std::string> artifacts;  // file name -> sha256
  std::map<std::string, double> timings_ms;
  std::map<std::string, double> metrics;
};

// The full experiment: corpus prep, poisoning, clean + backdoored reward
// training, policy pretraining, PPO against both reward models, the four
// evaluation cells and the report. Every artifact lands in cfg.out_dir;
// failures carry the stage name. Deterministic per config.
RunManifest run_pipeline(const ExperimentConfig& cfg);

void write_manifest(const RunManifest& manifest, const std::string& path);
RunManifest read_manifest(const std::string& path);

// Recomputes every artifact digest; throws on the first mismatch.
void verify_manifest(const RunManifest& manifest, const std::string& out_dir);

}  // namespace bdrl
