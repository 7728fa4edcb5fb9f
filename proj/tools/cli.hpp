#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace liftvsr::cli {

using Config = nlohmann::ordered_json;

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kConfigFailure = 2,
  kDataFailure = 3,
  kNumericFailure = 4,
};

// Every recognised key with its default value. Keys are flat, with dotted
// namespaces ("model.width", "sampler.steps").
Config default_config();

// Overlays a flat JSON object onto `base`. Unknown keys or mismatched types
// raise ConfigError; "run.*" and "hash.*" entries (written by the tool into
// run.json) are skipped so a run.json can be fed back as --config.
void merge_config(Config& base, const Config& overrides);

int cmd_gen(const Config& cfg);
int cmd_train(const Config& cfg);
int cmd_infer(const Config& cfg);
int cmd_eval(const Config& cfg);

// Parses argv, dispatches, and maps library errors onto exit codes.
int run(int argc, char** argv);

}  // namespace liftvsr::cli
