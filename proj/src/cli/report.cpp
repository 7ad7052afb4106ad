#include <charconv>
#include <fstream>

#include "mil/cli.hpp"
#include "mil/error.hpp"

namespace mil::cli {

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

json metric_json(const metrics::MetricSet& m) {
  return json{{"accuracy", m.accuracy}, {"auroc", m.auroc}, {"f1", m.f1}, {"f1_degenerate", m.f1_degenerate}};
}

json config_json(const TrainConfig& cfg, double threshold) {
  json j{{"model", to_string(cfg.model)},
         {"learning_rate", cfg.learning_rate},
         {"epochs", cfg.epochs},
         {"seed", cfg.seed},
         {"shuffle", cfg.shuffle},
         {"threshold", threshold}};
  if (cfg.model == ModelKind::multi_attention) {
    j["hidden"] = cfg.hidden;
    j["attention"] = cfg.attention;
    j["dropout"] = cfg.dropout;
  } else {
    j["minet_widths"] = cfg.minet_widths;
  }
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os << text;
  if (!os) fail(ErrorKind::data, "failed writing " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace mil::cli
