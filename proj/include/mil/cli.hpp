#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mil/bagdata.hpp"
#include "mil/metrics.hpp"
#include "mil/models.hpp"
#include "mil/training.hpp"

namespace mil::cli {

namespace fs = std::filesystem;
using nlohmann::json;

struct GenerateOptions {
  fs::path images;
  fs::path labels;
  fs::path out;
  MnistBagsConfig bags;
};

struct TrainOptions {
  fs::path dataset;
  fs::path out;
  TrainConfig train;
  double test_fraction = 0.2;  // stratified holdout; 0 trains on everything
  double threshold = 0.5;
};

struct EvalOptions {
  fs::path dataset;
  fs::path checkpoint;
  fs::path out;
  std::string subset = "all";  // all | train | test
  fs::path split;              // split.csv written by train
  std::optional<ModelKind> expected_model;
  double threshold = 0.5;
};

struct CrossvalOptions {
  fs::path dataset;
  fs::path out;
  TrainConfig train;
  std::size_t k = 3;
  double threshold = 0.5;
};

struct AttentionOptions {
  fs::path checkpoint;
  fs::path dataset;
  std::vector<std::string> bag_ids;  // empty: every bag
  fs::path out;                      // empty: write to the output stream
  double threshold = 0.5;
};

struct GradcheckCommandOptions {
  std::uint64_t seed = 0;
  bool perturb = false;
  fs::path json_out;
};

// Each command writes its files and returns its primary JSON report.
// Progress goes to `log`.
json cmd_generate_mnist_bags(const GenerateOptions& o, std::ostream& log);
json cmd_train(const TrainOptions& o, std::ostream& log);
json cmd_eval(const EvalOptions& o, std::ostream& log);
json cmd_crossval(const CrossvalOptions& o, std::ostream& log);
json cmd_attention(const AttentionOptions& o, std::ostream& out);
// Returns the report; report["passed"] tells whether every kind passed.
json cmd_gradcheck(const GradcheckCommandOptions& o, std::ostream& out);

/// Parses arguments (without the program name), runs the command and maps
/// errors to exit codes: 0 ok, 2 validation, 3 data, 4 numeric failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// -- shared report helpers ----------------------------------------------------

std::string format_double(double v);
json metric_json(const metrics::MetricSet& m);
json config_json(const TrainConfig& cfg, double threshold);
void write_json(const fs::path& path, const json& j);
void write_text(const fs::path& path, const std::string& text);

}  // namespace mil::cli
