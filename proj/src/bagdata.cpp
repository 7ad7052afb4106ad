#include "mil/bagdata.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <charconv>
#include <exception>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "mil/error.hpp"
#include "mil/rng.hpp"

namespace mil {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::data, "cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return std::move(ss).str();
}

std::uint32_t be_u32(const std::string& buf, std::size_t offset) {
  auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[offset + i])); };
  return b(0) << 24 | b(1) << 16 | b(2) << 8 | b(3);
}

void put_be_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  os.write(b, 4);
}

std::string hex(std::uint32_t v) {
  std::ostringstream ss;
  ss << "0x" << std::hex << v;
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// MNIST IDX

MnistSet load_mnist_idx(const fs::path& images, const fs::path& labels) {
  const std::string img = read_file(images);
  const std::string lab = read_file(labels);

  if (img.size() < 16) fail(ErrorKind::data, images.string() + ": truncated IDX header");
  if (be_u32(img, 0) != kIdxImagesMagic) {
    fail(ErrorKind::data, images.string() + ": bad magic " + hex(be_u32(img, 0)) + ", expected 0x803");
  }
  const std::size_t n_img = be_u32(img, 4);
  const std::size_t rows = be_u32(img, 8);
  const std::size_t cols = be_u32(img, 12);
  const std::size_t pixels = rows * cols;
  if (img.size() != 16 + n_img * pixels) {
    fail(ErrorKind::data, images.string() + ": truncated or oversized payload (" + std::to_string(img.size()) +
                              " bytes for " + std::to_string(n_img) + " images)");
  }

  if (lab.size() < 8) fail(ErrorKind::data, labels.string() + ": truncated IDX header");
  if (be_u32(lab, 0) != kIdxLabelsMagic) {
    fail(ErrorKind::data, labels.string() + ": bad magic " + hex(be_u32(lab, 0)) + ", expected 0x801");
  }
  const std::size_t n_lab = be_u32(lab, 4);
  if (lab.size() != 8 + n_lab) fail(ErrorKind::data, labels.string() + ": truncated or oversized payload");
  if (n_img != n_lab) {
    fail(ErrorKind::data, "count mismatch: " + std::to_string(n_img) + " images vs " + std::to_string(n_lab) +
                              " labels");
  }

  MnistSet set;
  set.images = Matrix(n_img, pixels);
  for (std::size_t i = 0; i < n_img * pixels; ++i)
    set.images.data[i] = static_cast<double>(static_cast<unsigned char>(img[16 + i])) / 255.0;
  set.labels.resize(n_lab);
  for (std::size_t i = 0; i < n_lab; ++i) set.labels[i] = static_cast<std::uint8_t>(lab[8 + i]);
  return set;
}

void write_idx_images(const fs::path& path, std::span<const std::uint8_t> pixels, std::uint32_t count,
                      std::uint32_t rows, std::uint32_t cols) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::data, "cannot write " + path.string());
  put_be_u32(os, kIdxImagesMagic);
  put_be_u32(os, count);
  put_be_u32(os, rows);
  put_be_u32(os, cols);
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const fs::path& path, std::span<const std::uint8_t> labels) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::data, "cannot write " + path.string());
  put_be_u32(os, kIdxLabelsMagic);
  put_be_u32(os, static_cast<std::uint32_t>(labels.size()));
  os.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

// ---------------------------------------------------------------------------
// BagDataset

std::map<int, std::size_t> BagDataset::class_counts() const {
  std::map<int, std::size_t> counts;
  for (const auto& b : bags) ++counts[b.label];
  return counts;
}

std::vector<int> BagDataset::labels() const {
  std::vector<int> out;
  out.reserve(bags.size());
  for (const auto& b : bags) out.push_back(b.label);
  return out;
}

void BagDataset::validate() const {
  std::set<std::string> ids;
  for (const auto& b : bags) {
    if (b.size() == 0) fail(ErrorKind::empty_bag, "bag '" + b.id + "' has no instances");
    if (b.dim() != dim) {
      fail(ErrorKind::data, "bag '" + b.id + "' has width " + std::to_string(b.dim()) + ", dataset width is " +
                                std::to_string(dim));
    }
    if (b.label != 0 && b.label != 1) {
      fail(ErrorKind::data, "bag '" + b.id + "' has label " + std::to_string(b.label));
    }
    if (!b.instance_refs.empty() && b.instance_refs.size() != b.size()) {
      fail(ErrorKind::data, "bag '" + b.id + "' has " + std::to_string(b.instance_refs.size()) +
                                " instance refs for " + std::to_string(b.size()) + " instances");
    }
    if (!ids.insert(b.id).second) fail(ErrorKind::data, "duplicate bag id '" + b.id + "'");
  }
}

// ---------------------------------------------------------------------------
// MNIST bags

std::string mnist_instance_ref(std::size_t image_index, int digit) {
  return "mnist-" + std::to_string(image_index) + "-d" + std::to_string(digit);
}

std::optional<int> digit_from_ref(const std::string& ref) {
  const auto pos = ref.rfind("-d");
  if (ref.rfind("mnist-", 0) != 0 || pos == std::string::npos || pos + 2 >= ref.size()) return std::nullopt;
  int digit = 0;
  const char* first = ref.data() + pos + 2;
  const char* last = ref.data() + ref.size();
  auto [ptr, ec] = std::from_chars(first, last, digit);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return digit;
}

BagDataset generate_mnist_bags(const MnistSet& set, const MnistBagsConfig& cfg) {
  if (set.size() == 0) fail(ErrorKind::data, "MNIST set is empty");
  if (cfg.n_bags == 0 || cfg.n_bags % 2 != 0) {
    fail(ErrorKind::validation, "n_bags must be a positive even number for an exact class balance, got " +
                                    std::to_string(cfg.n_bags));
  }
  if (cfg.bag_size < 2) fail(ErrorKind::validation, "bag_size must be at least 2");
  if (cfg.positive_min < 1 || cfg.positive_max >= cfg.bag_size || cfg.positive_min > cfg.positive_max) {
    fail(ErrorKind::validation, "positive count range [" + std::to_string(cfg.positive_min) + "," +
                                    std::to_string(cfg.positive_max) + "] must satisfy 1 <= min <= max < bag_size");
  }

  std::vector<std::size_t> pos_pool, neg_pool;
  for (std::size_t i = 0; i < set.size(); ++i)
    (set.labels[i] == cfg.target_digit ? pos_pool : neg_pool).push_back(i);
  if (pos_pool.empty() || neg_pool.empty()) {
    fail(ErrorKind::data, "MNIST set needs both target-digit and other images");
  }

  Rng rng = Rng(cfg.seed).substream("mnist-bags");
  std::vector<int> labels(cfg.n_bags, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(cfg.n_bags / 2), 1);
  rng.shuffle(std::span<int>(labels));

  const std::size_t dim = set.images.cols;
  const std::size_t width = std::to_string(cfg.n_bags - 1).size();
  BagDataset ds;
  ds.dim = dim;
  ds.bags.reserve(cfg.n_bags);
  for (std::size_t b = 0; b < cfg.n_bags; ++b) {
    std::size_t n_pos = 0;
    if (labels[b] == 1) n_pos = cfg.positive_min + rng.below(cfg.positive_max - cfg.positive_min + 1);
    std::vector<std::size_t> picks;
    for (std::size_t i = 0; i < n_pos; ++i) picks.push_back(pos_pool[rng.below(pos_pool.size())]);
    for (std::size_t i = n_pos; i < cfg.bag_size; ++i) picks.push_back(neg_pool[rng.below(neg_pool.size())]);
    rng.shuffle(std::span<std::size_t>(picks));

    Bag bag;
    std::string num = std::to_string(b);
    bag.id = "bag" + std::string(width - num.size(), '0') + num;
    bag.label = labels[b];
    bag.instances = Matrix(cfg.bag_size, dim);
    for (std::size_t k = 0; k < picks.size(); ++k) {
      std::copy_n(set.images.row(picks[k]).begin(), dim, bag.instances.row(k).begin());
      bag.instance_refs.push_back(mnist_instance_ref(picks[k], set.labels[picks[k]]));
    }
    ds.bags.push_back(std::move(bag));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk format

namespace {

constexpr std::string_view kManifestHeader = "bag_id,label,num_instances,dim,path";

void check_token(const std::string& s, const std::string& what, bool allow_path_chars) {
  if (s.empty()) fail(ErrorKind::validation, what + " is empty");
  for (char c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ||
                    (allow_path_chars && c == ':');
    if (!ok) fail(ErrorKind::validation, what + " '" + s + "' contains unsupported character '" + c + "'");
  }
}

void append_double(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  for (auto line : split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
  }
  while (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

template <class T>
T parse_number(std::string_view s, const std::string& context) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    fail(ErrorKind::data, context + ": cannot parse '" + std::string(s) + "'");
  }
  return v;
}

struct ManifestRow {
  std::string id;
  int label;
  std::size_t num_instances;
  std::size_t dim;
  std::string path;
  std::vector<std::string> refs;
};

Bag load_bag_file(const fs::path& dir, const ManifestRow& row) {
  const std::string text = read_file(dir / row.path);
  const auto lines = lines_of(text);
  if (lines.size() != row.num_instances) {
    fail(ErrorKind::data, "bag '" + row.id + "': manifest declares " + std::to_string(row.num_instances) +
                              " instances, file has " + std::to_string(lines.size()));
  }
  Bag bag;
  bag.id = row.id;
  bag.label = row.label;
  bag.instance_refs = row.refs;
  bag.instances = Matrix(row.num_instances, row.dim);
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const auto fields = split(lines[r], ',');
    if (fields.size() != row.dim) {
      fail(ErrorKind::data, "bag '" + row.id + "' row " + std::to_string(r) + " has " +
                                std::to_string(fields.size()) + " fields, manifest declares dim=" +
                                std::to_string(row.dim));
    }
    for (std::size_t c = 0; c < fields.size(); ++c)
      bag.instances(r, c) = parse_number<double>(fields[c], "bag '" + row.id + "'");
  }
  return bag;
}

}  // namespace

void save_bag_dataset(const BagDataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir / "bags");
  const bool with_refs =
      std::any_of(ds.bags.begin(), ds.bags.end(), [](const Bag& b) { return !b.instance_refs.empty(); });

  std::string manifest(kManifestHeader);
  if (with_refs) manifest += ",instance_refs";
  manifest += '\n';

  for (const auto& bag : ds.bags) {
    check_token(bag.id, "bag id", false);
    const std::string rel = "bags/" + bag.id + ".csv";
    manifest += bag.id + ',' + std::to_string(bag.label) + ',' + std::to_string(bag.size()) + ',' +
                std::to_string(ds.dim) + ',' + rel;
    if (with_refs) {
      manifest += ',';
      for (std::size_t i = 0; i < bag.instance_refs.size(); ++i) {
        check_token(bag.instance_refs[i], "instance ref", true);
        if (i) manifest += ';';
        manifest += bag.instance_refs[i];
      }
    }
    manifest += '\n';

    std::string body;
    for (std::size_t r = 0; r < bag.size(); ++r) {
      const auto row = bag.instances.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (c) body += ',';
        append_double(body, row[c]);
      }
      body += '\n';
    }
    std::ofstream os(dir / rel, std::ios::binary | std::ios::trunc);
    os << body;
    if (!os) fail(ErrorKind::data, "failed writing " + (dir / rel).string());
  }
  std::ofstream os(dir / "manifest.csv", std::ios::binary | std::ios::trunc);
  os << manifest;
  if (!os) fail(ErrorKind::data, "failed writing manifest in " + dir.string());
}

BagDataset load_bag_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.csv";
  if (!fs::exists(manifest_path)) fail(ErrorKind::data, "missing manifest: " + manifest_path.string());
  const std::string text = read_file(manifest_path);
  const auto lines = lines_of(text);
  if (lines.empty()) fail(ErrorKind::data, manifest_path.string() + ": empty manifest");
  const bool with_refs = lines[0] == std::string(kManifestHeader) + ",instance_refs";
  if (lines[0] != kManifestHeader && !with_refs) {
    fail(ErrorKind::data, manifest_path.string() + ": unexpected header '" + std::string(lines[0]) + "'");
  }
  if (lines.size() == 1) fail(ErrorKind::data, manifest_path.string() + ": empty dataset (no bags)");

  const std::size_t expected_fields = with_refs ? 6 : 5;
  std::vector<ManifestRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string ctx = "manifest line " + std::to_string(i + 1);
    const auto f = split(lines[i], ',');
    if (f.size() != expected_fields) {
      fail(ErrorKind::data, ctx + ": expected " + std::to_string(expected_fields) + " fields");
    }
    ManifestRow row;
    row.id = std::string(f[0]);
    if (f[1] == "0") row.label = 0;
    else if (f[1] == "1") row.label = 1;
    else fail(ErrorKind::data, ctx + ": unknown label value '" + std::string(f[1]) + "' for bag '" + row.id + "'");
    row.num_instances = parse_number<std::size_t>(f[2], ctx);
    row.dim = parse_number<std::size_t>(f[3], ctx);
    row.path = std::string(f[4]);
    if (with_refs && !f[5].empty())
      for (auto r : split(f[5], ';')) row.refs.emplace_back(r);
    if (row.num_instances == 0) fail(ErrorKind::empty_bag, "bag '" + row.id + "' has no instances");
    if (!rows.empty() && row.dim != rows.front().dim) {
      fail(ErrorKind::data, "bag '" + row.id + "' declares dim=" + std::to_string(row.dim) + ", dataset uses " +
                                std::to_string(rows.front().dim));
    }
    rows.push_back(std::move(row));
  }

  BagDataset ds;
  ds.dim = rows.front().dim;
  ds.bags.resize(rows.size());
  std::vector<std::exception_ptr> errors(rows.size());
  const auto n = static_cast<std::ptrdiff_t>(rows.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      ds.bags[i] = load_bag_file(dir, rows[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Splits

std::vector<std::size_t> FoldSplit::train_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < folds.size(); ++f)
    if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
  std::sort(out.begin(), out.end());
  return out;
}

FoldSplit stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) fail(ErrorKind::validation, "k must be at least 2");
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) fail(ErrorKind::validation, "labels must be 0 or 1");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  FoldSplit split;
  split.folds.resize(k);
  const Rng run(seed);
  for (std::size_t c = 0; c < 2; ++c) {
    auto& members = by_class[c];
    if (members.size() < k) {
      fail(ErrorKind::data, "class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                                " members, fewer than k=" + std::to_string(k));
    }
    Rng rng = run.substream("kfold", c);
    rng.shuffle(std::span<std::size_t>(members));
    for (std::size_t i = 0; i < members.size(); ++i) split.folds[i % k].push_back(members[i]);
  }
  for (auto& f : split.folds) std::sort(f.begin(), f.end());
  return split;
}

namespace {

std::vector<std::size_t> order_by_id(const BagDataset& ds) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ds.bags[a].id < ds.bags[b].id; });
  return order;
}

}  // namespace

FoldSplit stratified_kfold(const BagDataset& ds, std::size_t k, std::uint64_t seed) {
  const auto order = order_by_id(ds);
  std::vector<int> labels;
  for (std::size_t i : order) labels.push_back(ds.bags[i].label);
  FoldSplit split = stratified_kfold(labels, k, seed);
  for (auto& f : split.folds) {
    for (auto& i : f) i = order[i];
    std::sort(f.begin(), f.end());
  }
  return split;
}

HoldoutSplit stratified_holdout(const BagDataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    fail(ErrorKind::validation, "test fraction must be in [0, 1)");
  }
  const auto order = order_by_id(ds);
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i : order) {
    const int label = ds.bags[i].label;
    if (label != 0 && label != 1) fail(ErrorKind::data, "labels must be 0 or 1");
    by_class[static_cast<std::size_t>(label)].push_back(i);
  }
  HoldoutSplit split;
  const Rng run(seed);
  for (std::size_t c = 0; c < 2; ++c) {
    auto& members = by_class[c];
    Rng rng = run.substream("holdout", c);
    rng.shuffle(std::span<std::size_t>(members));
    const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(members.size()) * test_fraction));
    split.test.insert(split.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.train.insert(split.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

}  // namespace mil
