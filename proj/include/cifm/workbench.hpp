// Operational surface: declarative JSON experiment configs validated
// against a published schema, named hyperparameter presets, dataset
// loading with manifests, content-addressed output directories, and the
// command-line entry point.

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "cifm/data.hpp"
#include "cifm/encoder.hpp"
#include "cifm/objective.hpp"
#include "cifm/trainer.hpp"

namespace cifm {

// The full default experiment configuration (every known key present).
nlohmann::json default_config();

// The schema the resolved config is validated against: leaves are type
// names, interior nodes mirror the config tree.
nlohmann::json config_schema();

// Rejects unknown keys and type mismatches anywhere in the tree
// (UsageError naming the dotted path).  Expects a fully resolved config.
void validate_config(const nlohmann::json& cfg);

std::vector<std::string> preset_names();

// The settings a named preset overrides, as a merge patch.  Unknown names
// raise ConfigError.
nlohmann::json preset_patch(const std::string& name);

// defaults <- preset (flag wins over the file's "preset" key) <- file
// values <- dotted --set overrides, then validated.
nlohmann::json resolve_config(const nlohmann::json& file_cfg,
                              const std::vector<std::string>& set_overrides,
                              const std::string& preset_flag = "");

// Stable hex digest identifying the experiment (output_dir and the expanded
// preset name do not contribute).
std::string config_hash(const nlohmann::json& cfg);

struct LoadedDataset {
  Corpus corpus;
  nlohmann::json manifest;  // name, task kind, labels, split stats, metrics
};

// Builds the corpus named by the dataset section: seeded synthetic corpora
// or delimited/line-JSON files (whose splits must not share rows).  The
// manifest's declared metric must dispatch in the metrics registry.
LoadedDataset load_dataset(const nlohmann::json& dataset_cfg, const std::string& metric);

// Section translators (validated).
EncoderConfig encoder_from(const nlohmann::json& cfg);
ObjectiveConfig objective_from(const nlohmann::json& cfg);
TrainConfig train_from(const nlohmann::json& cfg);

// Headline metric for the resolved config: eval.metric, else train.metric,
// else the task default.
std::string resolve_metric(const nlohmann::json& cfg, const Corpus& corpus);

// Creates <output_dir>/<dataset>-<hash8>/run-<k> with the smallest unused k,
// so re-running an identical config never overwrites earlier artifacts.
std::string prepare_output_dir(const nlohmann::json& cfg);

// CLI entry: train | evaluate | sweep | transfer | ood | presets.  Returns a
// process exit status; failures print the error and return nonzero.
int run_workbench(const std::vector<std::string>& args);

}  // namespace cifm
