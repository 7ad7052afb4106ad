#include <algorithm>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>
#include <omp.h>

#include "mil/cli.hpp"
#include "mil/error.hpp"

namespace mil::cli {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

// Expands `--config FILE` into flags. Config lines are `key=value` where key
// is a long flag name; they are placed right after the subcommand so flags
// given on the command line win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> rest;
  fs::path config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) fail(ErrorKind::validation, "--config needs a file");
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config.empty()) return rest;

  std::ifstream is(config);
  if (!is) fail(ErrorKind::validation, "cannot open config file " + config.string());
  std::vector<std::string> injected;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::validation, config.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    std::replace(key.begin(), key.end(), '_', '-');
    if (value == "true") {
      injected.push_back("--" + key);
    } else if (value == "false") {
      continue;
    } else {
      injected.push_back("--" + key);
      injected.push_back(value);
    }
  }
  // Insert after the subcommand (first non-flag argument).
  auto pos = std::find_if(rest.begin(), rest.end(), [](const std::string& a) { return !a.empty() && a[0] != '-'; });
  if (pos != rest.end()) ++pos;
  rest.insert(pos, injected.begin(), injected.end());
  return rest;
}

const std::map<std::string, ModelKind> kModelNames{{"multi_attention", ModelKind::multi_attention},
                                                   {"minet_max", ModelKind::minet_max},
                                                   {"minet_mean", ModelKind::minet_mean}};

void add_train_flags(CLI::App* cmd, TrainConfig& cfg, double& threshold) {
  cmd->add_option("--model", cfg.model, "multi_attention | minet_max | minet_mean")
      ->transform(CLI::CheckedTransformer(kModelNames, CLI::ignore_case))
      ->capture_default_str();
  cmd->add_option("--hidden", cfg.hidden, "hidden width H")->capture_default_str();
  cmd->add_option("--attention", cfg.attention, "attention width L")->capture_default_str();
  cmd->add_option("--minet-widths", cfg.minet_widths, "MI-Net layer widths")->delimiter(',')->capture_default_str();
  cmd->add_option("--lr,--learning-rate", cfg.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "run seed")->capture_default_str();
  cmd->add_option("--dropout", cfg.dropout, "dropout on the pooled vector (multi_attention)")->capture_default_str();
  cmd->add_flag("!--no-shuffle", cfg.shuffle, "keep bag order fixed across epochs");
  cmd->add_option("--threshold", threshold, "decision threshold on prob_positive")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  try {
    const std::vector<std::string> args = expand_config(raw_args);

    CLI::App app{"Multiple-instance learning toolkit: attention MIL, MI-Net baselines, MNIST-bags"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    int threads = 0;
    app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");
    app.set_help_all_flag("--help-all");

    GenerateOptions gen;
    auto* g = app.add_subcommand("generate-mnist-bags", "build a balanced MNIST-bags dataset");
    g->add_option("--images", gen.images, "IDX image file")->required();
    g->add_option("--labels", gen.labels, "IDX label file")->required();
    g->add_option("--out", gen.out, "output dataset directory")->required();
    g->add_option("--n-bags", gen.bags.n_bags)->capture_default_str();
    g->add_option("--bag-size", gen.bags.bag_size)->capture_default_str();
    g->add_option("--seed", gen.bags.seed)->capture_default_str();
    g->add_option("--positive-min", gen.bags.positive_min)->capture_default_str();
    g->add_option("--positive-max", gen.bags.positive_max)->capture_default_str();
    g->add_option("--target-digit", gen.bags.target_digit)->capture_default_str();

    TrainOptions tr;
    auto* t = app.add_subcommand("train", "train one model with a stratified holdout split");
    t->add_option("--dataset", tr.dataset)->required();
    t->add_option("--out", tr.out)->required();
    t->add_option("--test-fraction", tr.test_fraction, "held-out fraction per class")->capture_default_str();
    add_train_flags(t, tr.train, tr.threshold);

    EvalOptions ev;
    std::string expected_model;
    auto* e = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    e->add_option("--dataset", ev.dataset)->required();
    e->add_option("--checkpoint", ev.checkpoint)->required();
    e->add_option("--out", ev.out)->required();
    e->add_option("--subset", ev.subset, "all | train | test")->capture_default_str();
    e->add_option("--split", ev.split, "split.csv written by train");
    e->add_option("--model", expected_model, "expected model kind; checked against the checkpoint tag");
    e->add_option("--threshold", ev.threshold)->capture_default_str();

    CrossvalOptions cv;
    auto* c = app.add_subcommand("crossval", "stratified k-fold cross-validation");
    c->add_option("--dataset", cv.dataset)->required();
    c->add_option("--out", cv.out)->required();
    c->add_option("--k", cv.k, "number of folds")->capture_default_str();
    add_train_flags(c, cv.train, cv.threshold);

    AttentionOptions at;
    auto* a = app.add_subcommand("attention", "dump per-layer attention weights as JSON");
    a->add_option("--checkpoint", at.checkpoint)->required();
    a->add_option("--dataset", at.dataset)->required();
    a->add_option("--bags", at.bag_ids, "comma-separated bag ids (default: all)")->delimiter(',');
    a->add_option("--out", at.out, "output JSON file (default: stdout)");
    a->add_option("--threshold", at.threshold)->capture_default_str();

    GradcheckCommandOptions gc;
    auto* k = app.add_subcommand("gradcheck", "finite-difference check of every model's gradients");
    k->add_option("--seed", gc.seed)->capture_default_str();
    k->add_flag("--perturb-weights", gc.perturb, "inject a wrong backward rule (negative control)");
    k->add_option("--json", gc.json_out, "also write the report as JSON");

    try {
      std::vector<std::string> reversed(args.rbegin(), args.rend());
      app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::ParseError& pe) {
      err << "error: " << pe.what() << "\n";
      return 2;
    }

    if (threads > 0) omp_set_num_threads(threads);

    if (*g) {
      cmd_generate_mnist_bags(gen, err);
    } else if (*t) {
      cmd_train(tr, err);
    } else if (*e) {
      if (!expected_model.empty()) ev.expected_model = parse_model_kind(expected_model);
      cmd_eval(ev, err);
    } else if (*c) {
      cmd_crossval(cv, err);
    } else if (*a) {
      cmd_attention(at, out);
    } else if (*k) {
      const json report = cmd_gradcheck(gc, out);
      return report["passed"].get<bool>() ? 0 : 4;
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mil::cli
