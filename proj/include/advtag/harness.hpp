#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "advtag/optimizer.hpp"

namespace advtag {

struct SweepConfig {
  std::string id;
  AttackConfig attack;  // seed and target are derived per image
};

struct RetentionSpec {
  int trials = 100;
  RobustnessConfig error;
};

// JSON keys: dataset, model, configs [{id, <attack config keys>}],
// images_per_cell, seed, output, retention {trials, jitter, erase, aux_draws}.
// Relative paths resolve against the experiment file's directory.
struct ExperimentSpec {
  std::filesystem::path dataset;
  std::filesystem::path model;
  std::vector<SweepConfig> configs;
  int images_per_cell = 1;
  std::uint64_t seed = 0;
  std::filesystem::path output;
  std::optional<RetentionSpec> retention;

  void validate() const;  // throws ConfigError
};

ExperimentSpec load_experiment_spec(const std::filesystem::path& path);

struct ImageRow {
  std::string config_id;
  int image_id = 0;
  int clean_class = 0;
  int final_class = 0;
  bool flipped = false;
  bool reached_target = false;
  // Step of the first success when the attack succeeded, else steps used.
  int steps = 0;
  int resets = 0;
  std::optional<double> retention;
  int target_class = 0;  // clean class for untargeted cells
  double confidence = 0.0;
  std::optional<double> retained_new_class;

  friend bool operator==(const ImageRow&, const ImageRow&) = default;
};

struct CellReport {
  std::string config_id;
  bool targeted = false;
  std::size_t attempted = 0;
  double flip_rate = 0.0;
  std::optional<double> target_rate;
  // Over successful images only (flipped, or target reached when targeted).
  double mean_steps = 0.0;
  double std_steps = 0.0;
  // Means over successful images that carry a retention value.
  std::optional<double> retention_under_error;
  std::optional<double> retained_new_class;
  std::vector<ImageRow> rows;

  friend bool operator==(const CellReport&, const CellReport&) = default;
};

// Aggregates rows of one cell.
CellReport summarize(const std::string& config_id, bool targeted, std::vector<ImageRow> rows);

struct Retention {
  double changed = 0.0;    // any class other than the original (target when targeted)
  double new_class = 0.0;  // the attack's final class
};

Retention simulate_human_error(const AttackResult& result, const Tensor& image, const ClassifierModel& model,
                               int trials, const RobustnessConfig& error, std::uint64_t seed);

// Per-image attack seed from (sweep seed, image id, config id).
std::uint64_t image_seed(std::uint64_t sweep_seed, int image_id, const std::string& config_id);

extern const std::vector<std::string> kCsvColumns;

// Runs every (config, image) pair, appending rows to spec.output in a fixed
// order. An existing output is resumed: complete rows matching the expected
// order are kept, a torn last line is dropped. Worker count comes from
// ADVTAG_THREADS (default: hardware concurrency).
std::vector<CellReport> run_sweep(const ExperimentSpec& spec);
std::vector<CellReport> run_sweep(const ExperimentSpec& spec, const Dataset& data, const ClassifierModel& model);

std::string csv_header();
std::string format_row(const ImageRow& row);
ImageRow parse_row(const std::string& line);
std::vector<ImageRow> read_rows(const std::filesystem::path& csv);

// Per-image CSV plus a summary table with one line per cell, rates at 3
// decimals.
void report(const std::vector<CellReport>& reports, const std::filesystem::path& csv,
            const std::filesystem::path& summary);
std::string summary_table(const std::vector<CellReport>& reports);
// Rebuilds cell reports from a per-image CSV, cells in first-seen order. A
// cell is targeted when its rows track a class other than the clean one.
std::vector<CellReport> reports_from_csv(const std::filesystem::path& csv);

}  // namespace advtag
