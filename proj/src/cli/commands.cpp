#include <chrono>
#include <exception>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "mil/cli.hpp"
#include "mil/error.hpp"
#include "mil/gradcheck.hpp"
#include "mil/metrics.hpp"
#include "mil/rng.hpp"

namespace mil::cli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void validate_train_config(const TrainConfig& cfg, double threshold) {
  if (!(cfg.learning_rate > 0.0)) fail(ErrorKind::validation, "--learning-rate must be positive");
  if (cfg.epochs == 0) fail(ErrorKind::validation, "--epochs must be at least 1");
  if (cfg.hidden == 0 || cfg.attention == 0) fail(ErrorKind::validation, "--hidden and --attention must be positive");
  if (cfg.minet_widths.empty()) fail(ErrorKind::validation, "--minet-widths needs at least one width");
  for (auto w : cfg.minet_widths)
    if (w == 0) fail(ErrorKind::validation, "--minet-widths entries must be positive");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) fail(ErrorKind::validation, "--dropout must be in [0, 1)");
  if (!(threshold > 0.0 && threshold < 1.0)) fail(ErrorKind::validation, "--threshold must be in (0, 1)");
}

json dataset_json(const fs::path& dir, const BagDataset& ds) {
  json counts = json::object();
  for (auto [label, n] : ds.class_counts()) counts[std::to_string(label)] = n;
  return json{{"path", dir.string()}, {"bags", ds.size()}, {"dim", ds.dim}, {"class_counts", counts}};
}

struct Scored {
  std::vector<double> scores;
  std::vector<int> truth;
  std::vector<int> predicted;
};

Scored score(const Model& model, const BagDataset& ds, std::span<const std::size_t> idx, double threshold) {
  Scored s;
  for (const auto& p : predict_bags(model, ds, idx)) s.scores.push_back(p.positive());
  for (std::size_t i : idx) s.truth.push_back(ds.bags[i].label);
  s.predicted = metrics::threshold_predictions(s.scores, threshold);
  return s;
}

std::string predictions_csv(const BagDataset& ds, std::span<const std::size_t> idx, const Scored& s) {
  std::string out = "bag_id,prob_positive,predicted,label\n";
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out += ds.bags[idx[i]].id + ',' + format_double(s.scores[i]) + ',' + std::to_string(s.predicted[i]) + ',' +
           std::to_string(s.truth[i]) + '\n';
  }
  return out;
}

std::string roc_csv(const Scored& s) {
  std::string out = "threshold,fpr,tpr\n";
  for (const auto& p : metrics::roc_curve(s.scores, s.truth))
    out += format_double(p.threshold) + ',' + format_double(p.fpr) + ',' + format_double(p.tpr) + '\n';
  return out;
}

// Metrics with AUROC reported as null when the subset holds a single class.
json subset_metrics(const Scored& s) {
  const auto c = metrics::confusion(s.truth, s.predicted);
  json j{{"n", c.total()},
         {"accuracy", metrics::accuracy(c)},
         {"f1", metrics::f1(c)},
         {"f1_degenerate", metrics::f1_is_degenerate(c)},
         {"confusion", {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}}}};
  const bool both = c.tp + c.fn > 0 && c.tn + c.fp > 0;
  j["auroc"] = both ? json(metrics::auroc(s.scores, s.truth)) : json(nullptr);
  return j;
}

std::string history_csv(const TrainHistory& h) {
  std::string out = "epoch,mean_loss,train_accuracy\n";
  for (const auto& e : h.epochs)
    out += std::to_string(e.epoch) + ',' + format_double(e.mean_loss) + ',' + format_double(e.train_accuracy) + '\n';
  return out;
}

json history_json(const TrainHistory& h) {
  json arr = json::array();
  for (const auto& e : h.epochs)
    arr.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"train_accuracy", e.train_accuracy}});
  return arr;
}

EpochCallback epoch_logger(std::ostream& log, const std::string& prefix) {
  return [&log, prefix](const EpochStats& e) {
    log << prefix << "epoch " << e.epoch << " loss " << format_double(e.mean_loss) << " train_acc "
        << format_double(e.train_accuracy) << std::endl;
  };
}

}  // namespace

// ---------------------------------------------------------------------------

json cmd_generate_mnist_bags(const GenerateOptions& o, std::ostream& log) {
  // Validate the cheap flags before touching the IDX files.
  if (o.bags.n_bags == 0 || o.bags.n_bags % 2 != 0) {
    fail(ErrorKind::validation, "--n-bags must be a positive even number, got " + std::to_string(o.bags.n_bags));
  }
  const MnistSet set = load_mnist_idx(o.images, o.labels);
  const BagDataset ds = generate_mnist_bags(set, o.bags);
  save_bag_dataset(ds, o.out);

  const auto counts = ds.class_counts();
  json meta{{"generator", "mnist-bags"},
            {"seed", o.bags.seed},
            {"n_bags", o.bags.n_bags},
            {"bag_size", o.bags.bag_size},
            {"positive_count_range", {o.bags.positive_min, o.bags.positive_max}},
            {"target_digit", o.bags.target_digit},
            {"positive_bags", counts.count(1) ? counts.at(1) : 0},
            {"negative_bags", counts.count(0) ? counts.at(0) : 0},
            {"source_images", set.size()},
            {"dim", ds.dim}};
  write_json(o.out / "generation.json", meta);
  log << "wrote " << ds.size() << " bags to " << o.out.string() << std::endl;
  return meta;
}

json cmd_train(const TrainOptions& o, std::ostream& log) {
  validate_train_config(o.train, o.threshold);
  const auto start = Clock::now();
  const BagDataset ds = load_bag_dataset(o.dataset);
  const HoldoutSplit split = stratified_holdout(ds, o.test_fraction, o.train.seed);
  fs::create_directories(o.out);

  log << "training " << to_string(o.train.model) << " on " << split.train.size() << " bags (" << split.test.size()
      << " held out)" << std::endl;
  TrainResult result = train(ds, split.train, o.train, epoch_logger(log, ""));
  save_checkpoint(result.model, o.out / "model.ckpt");
  write_text(o.out / "history.csv", history_csv(result.history));

  std::string split_csv = "bag_id,subset\n";
  {
    std::set<std::size_t> test(split.test.begin(), split.test.end());
    for (std::size_t i = 0; i < ds.size(); ++i)
      split_csv += ds.bags[i].id + (test.count(i) ? ",test\n" : ",train\n");
  }
  write_text(o.out / "split.csv", split_csv);

  json report{{"command", "train"},
              {"config", config_json(o.train, o.threshold)},
              {"dataset", dataset_json(o.dataset, ds)},
              {"test_fraction", o.test_fraction},
              {"n_train", split.train.size()},
              {"n_test", split.test.size()},
              {"checkpoint", "model.ckpt"},
              {"history", history_json(result.history)},
              {"final_train_accuracy", result.history.epochs.back().train_accuracy}};
  if (!split.test.empty()) {
    const Scored s = score(result.model, ds, split.test, o.threshold);
    report["test"] = subset_metrics(s);
    write_text(o.out / "test_predictions.csv", predictions_csv(ds, split.test, s));
    log << "test accuracy " << format_double(report["test"]["accuracy"].get<double>()) << std::endl;
  } else {
    report["test"] = nullptr;
  }
  write_json(o.out / "report.json", report);
  write_json(o.out / "timing.json", json{{"wall_clock_seconds", seconds_since(start)}});
  return report;
}

json cmd_eval(const EvalOptions& o, std::ostream& log) {
  if (!(o.threshold > 0.0 && o.threshold < 1.0)) fail(ErrorKind::validation, "--threshold must be in (0, 1)");
  const Model model = load_checkpoint(o.checkpoint);
  if (o.expected_model && *o.expected_model != model.kind()) {
    fail(ErrorKind::data, "checkpoint tag mismatch: " + o.checkpoint.string() + " holds " + to_string(model.kind()) +
                              ", expected " + to_string(*o.expected_model));
  }
  const BagDataset ds = load_bag_dataset(o.dataset);
  if (ds.dim != model.input_dim()) {
    fail(ErrorKind::dimension, "dataset width " + std::to_string(ds.dim) + " does not match checkpoint input width " +
                                   std::to_string(model.input_dim()));
  }

  std::vector<std::size_t> idx;
  if (o.subset == "all") {
    idx = all_indices(ds.size());
  } else if (o.subset == "train" || o.subset == "test") {
    if (o.split.empty()) fail(ErrorKind::validation, "--subset " + o.subset + " needs --split");
    std::map<std::string, std::string> which;
    std::ifstream is(o.split);
    if (!is) fail(ErrorKind::data, "cannot open split file " + o.split.string());
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) fail(ErrorKind::data, "malformed split line '" + line + "'");
      which[line.substr(0, comma)] = line.substr(comma + 1);
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto it = which.find(ds.bags[i].id);
      if (it == which.end()) fail(ErrorKind::data, "bag '" + ds.bags[i].id + "' missing from split file");
      if (it->second == o.subset) idx.push_back(i);
    }
  } else {
    fail(ErrorKind::validation, "--subset must be all, train or test");
  }
  if (idx.empty()) fail(ErrorKind::data, "no bags selected for evaluation");

  const Scored s = score(model, ds, idx, o.threshold);
  json report{{"command", "eval"},
              {"model", to_string(model.kind())},
              {"subset", o.subset},
              {"threshold", o.threshold},
              {"metrics", subset_metrics(s)}};
  fs::create_directories(o.out);
  write_json(o.out / "metrics.json", report);
  write_text(o.out / "predictions.csv", predictions_csv(ds, idx, s));
  log << "accuracy " << format_double(report["metrics"]["accuracy"].get<double>()) << " on " << idx.size()
      << " bags" << std::endl;
  return report;
}

json cmd_crossval(const CrossvalOptions& o, std::ostream& log) {
  validate_train_config(o.train, o.threshold);
  if (o.k < 2) fail(ErrorKind::validation, "--k must be at least 2");
  const auto start = Clock::now();
  const BagDataset ds = load_bag_dataset(o.dataset);
  const FoldSplit split = stratified_kfold(ds, o.k, o.train.seed);
  fs::create_directories(o.out);

  struct FoldOutcome {
    json entry;
    metrics::MetricSet metrics;
    std::exception_ptr error;
  };
  std::vector<FoldOutcome> outcomes(o.k);
  const Rng run(o.train.seed);

  // Folds are independent: each trains from its own substream, so the
  // schedule does not affect the results.
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t f = 0; f < static_cast<std::ptrdiff_t>(o.k); ++f) {
    FoldOutcome& out = outcomes[f];
    try {
      TrainConfig cfg = o.train;
      cfg.seed = run.substream("fold", static_cast<std::uint64_t>(f)).next();
      const auto train_idx = split.train_indices(f);
      const auto& test_idx = split.folds[f];
      TrainResult result = train(ds, train_idx, cfg);
      const Scored s = score(result.model, ds, test_idx, o.threshold);
      out.metrics = metrics::evaluate(s.scores, s.truth, o.threshold);

      const std::string stem = "fold" + std::to_string(f);
      save_checkpoint(result.model, o.out / (stem + ".ckpt"));
      write_text(o.out / (stem + "_roc.csv"), roc_csv(s));
      write_text(o.out / (stem + "_history.csv"), history_csv(result.history));

      std::size_t pos = 0;
      for (int t : s.truth) pos += t == 1;
      out.entry = json{{"fold", f},
                       {"fold_seed", cfg.seed},
                       {"n_train", train_idx.size()},
                       {"n_test", test_idx.size()},
                       {"test_positive", pos},
                       {"test_negative", test_idx.size() - pos},
                       {"metrics", metric_json(out.metrics)},
                       {"checkpoint", stem + ".ckpt"},
                       {"roc", stem + "_roc.csv"},
                       {"final_train_accuracy", result.history.epochs.back().train_accuracy}};
#pragma omp critical(mil_log)
      log << "fold " << f << " accuracy " << format_double(out.metrics.accuracy) << " auroc "
          << format_double(out.metrics.auroc) << " f1 " << format_double(out.metrics.f1) << std::endl;
    } catch (...) {
      out.error = std::current_exception();
    }
  }

  json report{{"command", "crossval"},
              {"config", config_json(o.train, o.threshold)},
              {"dataset", dataset_json(o.dataset, ds)},
              {"seed", o.train.seed},
              {"k", o.k},
              {"std_kind", "population"}};
  json folds = json::array();
  std::vector<metrics::MetricSet> per_fold;
  std::exception_ptr first_error;
  for (auto& out : outcomes) {
    if (out.error) {
      if (!first_error) first_error = out.error;
      continue;
    }
    folds.push_back(out.entry);
    per_fold.push_back(out.metrics);
  }
  report["folds"] = folds;

  if (first_error) {
    try {
      std::rethrow_exception(first_error);
    } catch (const std::exception& e) {
      report["error"] = e.what();
    }
    write_json(o.out / "crossval_partial.json", report);
    std::rethrow_exception(first_error);
  }

  const auto summary = metrics::aggregate_folds(per_fold);
  json mean = metric_json(summary.mean);
  json stdev = metric_json(summary.std);
  stdev.erase("f1_degenerate");
  report["mean"] = mean;
  report["std"] = stdev;
  write_json(o.out / "crossval_report.json", report);
  write_json(o.out / "timing.json", json{{"wall_clock_seconds", seconds_since(start)}});
  return report;
}

json cmd_attention(const AttentionOptions& o, std::ostream& out) {
  const Model model = load_checkpoint(o.checkpoint);
  if (!model.has_attention()) {
    fail(ErrorKind::unsupported, std::string("model kind ") + to_string(model.kind()) +
                                     " has no attention layers; attention export needs multi_attention");
  }
  const BagDataset ds = load_bag_dataset(o.dataset);
  if (ds.dim != model.input_dim()) {
    fail(ErrorKind::dimension, "dataset width " + std::to_string(ds.dim) + " does not match checkpoint input width " +
                                   std::to_string(model.input_dim()));
  }
  std::vector<std::size_t> idx;
  if (o.bag_ids.empty()) {
    idx = all_indices(ds.size());
  } else {
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < ds.size(); ++i) by_id[ds.bags[i].id] = i;
    for (const auto& id : o.bag_ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) fail(ErrorKind::data, "unknown bag id '" + id + "'");
      idx.push_back(it->second);
    }
  }

  const auto preds = predict_bags(model, ds, idx);
  json arr = json::array();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Bag& bag = ds.bags[idx[i]];
    const auto& att = *preds[i].attention;
    arr.push_back({{"bag_id", bag.id},
                   {"label", bag.label},
                   {"predicted", preds[i].positive() > o.threshold ? 1 : 0},
                   {"prob_positive", preds[i].positive()},
                   {"layers", {att.layers[0], att.layers[1], att.layers[2]}},
                   {"instance_refs", bag.instance_refs}});
  }
  if (o.out.empty()) {
    out << arr.dump(2) << "\n";
  } else {
    write_json(o.out, arr);
  }
  return arr;
}

json cmd_gradcheck(const GradcheckCommandOptions& o, std::ostream& out) {
  GradCheckOptions opts;
  opts.fault_injection = o.perturb;
  const auto reports = gradient_check_suite(o.seed, opts);

  json j{{"step", opts.step}, {"tolerance", opts.tolerance}, {"fault_injection", o.perturb}, {"seed", o.seed}};
  json models = json::array();
  double worst = 0.0;
  bool passed = true;
  for (const auto& r : reports) {
    json tensors = json::array();
    out << to_string(r.kind) << "\n";
    for (const auto& t : r.tensors) {
      out << "  " << t.name << " (" << t.entries << " entries) max rel err " << format_double(t.max_rel_error) << "\n";
      tensors.push_back({{"name", t.name}, {"entries", t.entries}, {"max_rel_error", t.max_rel_error}});
    }
    out << "  max rel err " << format_double(r.max_rel_error) << (r.passed ? " PASS" : " FAIL") << "\n";
    models.push_back({{"model", to_string(r.kind)},
                      {"tensors", tensors},
                      {"max_rel_error", r.max_rel_error},
                      {"passed", r.passed}});
    worst = std::max(worst, r.max_rel_error);
    passed = passed && r.passed;
  }
  j["models"] = models;
  j["max_rel_error"] = worst;
  j["passed"] = passed;
  out << "gradcheck " << (passed ? "PASS" : "FAIL") << " max rel err " << format_double(worst) << std::endl;
  if (!o.json_out.empty()) write_json(o.json_out, j);
  return j;
}

}  // namespace mil::cli
