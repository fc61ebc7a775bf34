#pragma once

#include "gstein/io.hpp"
#include "gstein/scenario.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace gstein {

using Json = nlohmann::ordered_json;

Json model_to_json(const ModelSpec& m);
ModelSpec model_from_json(Family family, const Json& params);

// Declarative description of one experiment. `contamination` lists the
// contaminant specs; sweeps over `contamination_levels` overwrite their rates.
struct ScenarioConfig {
  std::string experiment;
  ModelSpec truth;
  std::size_t n = 0;
  std::vector<ContaminationSpec> contamination;
  std::vector<double> contamination_levels;
  std::vector<double> gamma_grid;
  int replications = 1;
  std::uint64_t seed = 0;
  std::string output_dir = "results";

  // selection study
  std::vector<double> anchors;
  int folds = 5;
  // mixture study
  int homotopy_stages = 3;
  // power study
  std::vector<double> shifts;
  int bootstrap = 200;
  int monte_carlo = 200;
  double alpha = 0.05;
  // particle study
  std::vector<std::string> scenarios;
  std::size_t test_size = 1500;
  int particles = 32;
  int iterations = 220;
  double step = 0.05;
  double init_spread = 0.05;

  void validate() const;
};

const std::vector<std::string>& experiment_names();

// Defaults at desk scale, or the full replication counts when desk is false.
ScenarioConfig default_scenario(const std::string& experiment, bool desk);

Json scenario_to_json(const ScenarioConfig& cfg);
// Overlays `doc` on `base`; keys must be ScenarioConfig field names.
ScenarioConfig scenario_from_json(const Json& doc, ScenarioConfig base);

// Data for one replication at one contamination level.
Dataset generate_dataset(const ScenarioConfig& cfg, double level, std::size_t replication);

struct TableCell {
  std::string row;
  std::string column;
  std::string metric;
  double value = 0.0;
  double stderr_ = 0.0;
  int failures = 0;
  int replications = 0;
};

struct ExperimentReport {
  std::string name;
  std::vector<TableCell> cells;
  std::string text_table;
  Json manifest;
  std::vector<std::string> files;
  int replications_failed = 0;
  bool self_consistent = true;
  bool failure_threshold_exceeded = false;  // some cell lost > 10% of its replications
  bool verification_failed = false;         // verify-identities only

  // First cell matching (row, column, metric); throws ArgumentError when absent.
  const TableCell& cell(const std::string& row, const std::string& column, const std::string& metric) const;
};

struct RunOptions {
  int threads = 1;
  bool write_files = true;
};

ExperimentReport run_experiment(const ScenarioConfig& cfg, const RunOptions& opt = {});

// Recomputes the aggregate cells from a per-replication table.
std::vector<TableCell> aggregate_replications(const ScenarioConfig& cfg, const CsvTable& reps);

// Label helpers shared with the acceptance checks.
std::string level_label(double v);

}  // namespace gstein
