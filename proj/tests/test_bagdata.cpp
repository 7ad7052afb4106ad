#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mil/bagdata.hpp"
#include "mil/error.hpp"
#include "test_support.hpp"

namespace {

using namespace mil;
namespace fs = std::filesystem;
using mil::testing::random_matrix;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("mil_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

template <class F>
std::string expect_error(ErrorKind kind, F&& f) {
  try {
    f();
    ADD_FAILURE() << "expected error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
    return e.what();
  }
  return {};
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Minimal 2x2-pixel image file holding `n` images.
std::vector<unsigned char> image_file(std::uint32_t n, std::vector<unsigned char> pixels) {
  std::vector<unsigned char> b{0, 0, 8, 3, 0, 0, 0, static_cast<unsigned char>(n), 0, 0, 0, 2, 0, 0, 0, 2};
  for (unsigned char p : pixels) b.push_back(p);
  return b;
}

TEST(Idx, LabelFileWalkthrough) {
  TempDir d("idx1");
  write_bytes(d.path() / "lab", {0, 0, 8, 1, 0, 0, 0, 3, 7, 1, 4});
  write_bytes(d.path() / "img", image_file(3, std::vector<unsigned char>(12, 0)));
  auto set = load_mnist_idx(d.path() / "img", d.path() / "lab");
  EXPECT_EQ(set.size(), 3u);
  EXPECT_EQ(set.labels, (std::vector<std::uint8_t>{7, 1, 4}));
  EXPECT_EQ(set.images.rows, 3u);
  EXPECT_EQ(set.images.cols, 4u);
}

TEST(Idx, PixelScalingEndpoints) {
  TempDir d("idx2");
  write_bytes(d.path() / "lab", {0, 0, 8, 1, 0, 0, 0, 1, 5});
  write_bytes(d.path() / "img", image_file(1, {0, 255, 51, 128}));
  auto set = load_mnist_idx(d.path() / "img", d.path() / "lab");
  EXPECT_EQ(set.images(0, 0), 0.0);
  EXPECT_EQ(set.images(0, 1), 1.0);
  EXPECT_EQ(set.images(0, 2), 0.2);
  EXPECT_EQ(set.images(0, 3), 128 / 255.0);
}

TEST(Idx, Errors) {
  TempDir d("idx3");
  const auto img = d.path() / "img", lab = d.path() / "lab";
  write_bytes(img, image_file(2, std::vector<unsigned char>(8, 1)));

  write_bytes(lab, {0, 0, 8, 2, 0, 0, 0, 2, 1, 1});
  EXPECT_NE(expect_error(ErrorKind::data, [&] { load_mnist_idx(img, lab); }).find("magic"), std::string::npos);

  write_bytes(lab, {0, 0, 8, 1, 0, 0, 0, 3, 1, 1});
  EXPECT_NE(expect_error(ErrorKind::data, [&] { load_mnist_idx(img, lab); }).find("truncated"), std::string::npos);

  write_bytes(lab, {0, 0, 8, 1, 0, 0, 0, 3, 1, 1, 1});
  EXPECT_NE(expect_error(ErrorKind::data, [&] { load_mnist_idx(img, lab); }).find("mismatch"), std::string::npos);

  write_bytes(lab, {0, 0, 8, 1, 0, 0, 0, 2, 1, 1});
  write_bytes(img, image_file(2, std::vector<unsigned char>(7, 1)));
  EXPECT_NE(expect_error(ErrorKind::data, [&] { load_mnist_idx(img, lab); }).find("truncated"), std::string::npos);

  write_bytes(img, {0, 0, 8, 3, 0});
  expect_error(ErrorKind::data, [&] { load_mnist_idx(img, lab); });
  expect_error(ErrorKind::data, [&] { load_mnist_idx(d.path() / "missing", lab); });
}

TEST(Idx, WritersRoundTrip) {
  TempDir d("idx4");
  std::vector<std::uint8_t> pixels(5 * 9), labels{0, 1, 2, 3, 9};
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<std::uint8_t>(i * 5);
  write_idx_images(d.path() / "img", pixels, 5, 3, 3);
  write_idx_labels(d.path() / "lab", labels);
  auto set = load_mnist_idx(d.path() / "img", d.path() / "lab");
  EXPECT_EQ(set.labels, labels);
  for (std::size_t i = 0; i < pixels.size(); ++i) EXPECT_EQ(set.images.data[i], pixels[i] / 255.0);
}

const MnistSet& real_mnist() {
  static const MnistSet set = load_mnist_idx(fs::path(MIL_MNIST_DIR) / "mnist-10k-images-idx3-ubyte",
                                             fs::path(MIL_MNIST_DIR) / "mnist-10k-labels-idx1-ubyte");
  return set;
}

std::size_t count_digit(const Bag& b, int digit) {
  std::size_t n = 0;
  for (const auto& r : b.instance_refs) n += digit_from_ref(r) == digit;
  return n;
}

TEST(MnistBags, DefaultSizeIsBalanced) {
  const auto& set = real_mnist();
  EXPECT_EQ(set.images.cols, 784u);
  MnistBagsConfig cfg;
  cfg.seed = 3;
  auto ds = generate_mnist_bags(set, cfg);
  EXPECT_EQ(ds.size(), 5000u);
  EXPECT_EQ(ds.dim, 784u);
  EXPECT_EQ(ds.class_counts(), (std::map<int, std::size_t>{{0, 2500}, {1, 2500}}));
  std::set<std::size_t> positive_counts;
  for (const auto& b : ds.bags) {
    ASSERT_EQ(b.size(), 10u);
    ASSERT_EQ(b.instance_refs.size(), 10u);
    const std::size_t ones = count_digit(b, 1);
    if (b.label == 0) {
      EXPECT_EQ(ones, 0u) << b.id;
    } else {
      EXPECT_GE(ones, 1u) << b.id;
      EXPECT_LE(ones, 4u) << b.id;
      positive_counts.insert(ones);
    }
    for (double v : b.instances.data) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
  EXPECT_EQ(positive_counts, (std::set<std::size_t>{1, 2, 3, 4}));
  ds.validate();
}

TEST(MnistBags, RefsMatchSourceImages) {
  const auto& set = real_mnist();
  MnistBagsConfig cfg;
  cfg.n_bags = 20;
  cfg.seed = 4;
  auto ds = generate_mnist_bags(set, cfg);
  for (const auto& b : ds.bags)
    for (std::size_t k = 0; k < b.size(); ++k) {
      const std::string& ref = b.instance_refs[k];
      const std::size_t idx = std::stoul(ref.substr(6, ref.rfind('-') - 6));
      EXPECT_EQ(digit_from_ref(ref), set.labels[idx]);
      for (std::size_t c = 0; c < 784; ++c) ASSERT_EQ(b.instances(k, c), set.images(idx, c));
    }
}

TEST(MnistBags, DeterministicAndSeedSensitive) {
  const auto& set = real_mnist();
  MnistBagsConfig cfg;
  cfg.n_bags = 40;
  cfg.seed = 5;
  auto a = generate_mnist_bags(set, cfg), b = generate_mnist_bags(set, cfg);
  EXPECT_EQ(a, b);
  cfg.seed = 6;
  EXPECT_FALSE(a == generate_mnist_bags(set, cfg));
}

TEST(MnistBags, CustomRange) {
  MnistBagsConfig cfg;
  cfg.n_bags = 200;
  cfg.positive_min = 3;
  cfg.positive_max = 3;
  for (const auto& b : generate_mnist_bags(real_mnist(), cfg).bags)
    EXPECT_EQ(count_digit(b, 1), b.label == 1 ? 3u : 0u);
}

TEST(MnistBags, InvalidConfigs) {
  const auto& set = real_mnist();
  auto with = [](auto mutate) {
    MnistBagsConfig c;
    c.n_bags = 10;
    mutate(c);
    return c;
  };
  expect_error(ErrorKind::validation, [&] { generate_mnist_bags(set, with([](auto& c) { c.n_bags = 11; })); });
  expect_error(ErrorKind::validation, [&] { generate_mnist_bags(set, with([](auto& c) { c.positive_min = 0; })); });
  expect_error(ErrorKind::validation, [&] { generate_mnist_bags(set, with([](auto& c) { c.positive_max = 10; })); });
  expect_error(ErrorKind::validation, [&] {
    generate_mnist_bags(set, with([](auto& c) {
      c.positive_min = 3;
      c.positive_max = 2;
    }));
  });
}

TEST(InstanceRefs, Format) {
  EXPECT_EQ(mnist_instance_ref(42, 7), "mnist-42-d7");
  EXPECT_EQ(digit_from_ref("mnist-42-d7"), 7);
  EXPECT_EQ(digit_from_ref("patch_03.png"), std::nullopt);
}

BagDataset tiny_dataset() {
  Rng rng(7);
  BagDataset ds;
  ds.dim = 3;
  for (int i = 0; i < 3; ++i) {
    Bag b;
    b.id = "bag" + std::to_string(i);
    b.label = i % 2;
    b.instances = random_matrix(2 + i, 3, rng, -1e3, 1e3);
    for (std::size_t k = 0; k < b.size(); ++k) b.instance_refs.push_back("p" + std::to_string(i) + "_" + std::to_string(k));
    ds.bags.push_back(std::move(b));
  }
  ds.bags[0].instances(0, 0) = 1e-310;  // subnormal
  ds.bags[0].instances(0, 1) = -0.1;
  return ds;
}

TEST(Dataset, RoundTripIsIdentity) {
  TempDir d("ds1");
  auto ds = tiny_dataset();
  save_bag_dataset(ds, d.path());
  EXPECT_EQ(load_bag_dataset(d.path()), ds);

  // without instance refs
  for (auto& b : ds.bags) b.instance_refs.clear();
  TempDir d2("ds1b");
  save_bag_dataset(ds, d2.path());
  EXPECT_EQ(load_bag_dataset(d2.path()), ds);
}

TEST(Dataset, ManifestHeader) {
  TempDir d("ds2");
  save_bag_dataset(tiny_dataset(), d.path());
  std::ifstream in(d.path() / "manifest.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "bag_id,label,num_instances,dim,path,instance_refs");
  std::string row;
  std::getline(in, row);
  EXPECT_EQ(row.substr(0, row.find(",p0_")), "bag0,0,2,3,bags/bag0.csv");
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Dataset, RowWidthErrorNamesBag) {
  TempDir d("ds3");
  Rng rng(8);
  BagDataset ds;
  ds.dim = 512;
  for (int i = 0; i < 2; ++i) ds.bags.push_back(Bag{"slide_" + std::to_string(i), random_matrix(2, 512, rng), i, {}});
  save_bag_dataset(ds, d.path());
  // drop the last field of the first row of slide_1
  const fs::path bag = d.path() / "bags" / "slide_1.csv";
  std::string text = read_file(bag);
  const auto eol = text.find('\n');
  std::string first = text.substr(0, eol);
  first = first.substr(0, first.rfind(','));
  std::ofstream(bag) << first << text.substr(eol);
  const std::string msg = expect_error(ErrorKind::data, [&] { load_bag_dataset(d.path()); });
  EXPECT_NE(msg.find("slide_1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("511"), std::string::npos) << msg;
}

TEST(Dataset, ManifestErrors) {
  TempDir d("ds4");
  expect_error(ErrorKind::data, [&] { load_bag_dataset(d.path()); });
  std::ofstream(d.path() / "manifest.csv") << "";
  expect_error(ErrorKind::data, [&] { load_bag_dataset(d.path()); });
  std::ofstream(d.path() / "manifest.csv") << "bag_id,label,num_instances,dim,path\n";
  EXPECT_NE(expect_error(ErrorKind::data, [&] { load_bag_dataset(d.path()); }).find("empty"), std::string::npos);

  TempDir e("ds5");
  save_bag_dataset(tiny_dataset(), e.path());
  std::string m = read_file(e.path() / "manifest.csv");
  m.replace(m.find("bag1,1,"), 7, "bag1,2,");
  std::ofstream(e.path() / "manifest.csv") << m;
  EXPECT_NE(expect_error(ErrorKind::data, [&] { load_bag_dataset(e.path()); }).find("unknown label"),
            std::string::npos);
}

TEST(Dataset, ValidateCatchesBadContent) {
  auto ds = tiny_dataset();
  ds.bags[1].id = "bag0";
  expect_error(ErrorKind::data, [&] { ds.validate(); });
  ds = tiny_dataset();
  ds.bags[2].label = 3;
  expect_error(ErrorKind::data, [&] { ds.validate(); });
  ds = tiny_dataset();
  ds.bags[2].instances = Matrix(0, 3);
  ds.bags[2].instance_refs.clear();
  expect_error(ErrorKind::empty_bag, [&] { ds.validate(); });
}

std::vector<int> labels_with(std::size_t pos, std::size_t neg, Rng& rng) {
  std::vector<int> y(pos, 1);
  y.insert(y.end(), neg, 0);
  rng.shuffle(std::span(y));
  return y;
}

std::vector<std::size_t> class_sizes(const FoldSplit& s, const std::vector<int>& y, int cls) {
  std::vector<std::size_t> out;
  for (const auto& f : s.folds) out.push_back(std::count_if(f.begin(), f.end(), [&](auto i) { return y[i] == cls; }));
  std::sort(out.rbegin(), out.rend());
  return out;
}

void expect_partition(const FoldSplit& s, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const auto& f : s.folds) {
    EXPECT_TRUE(std::is_sorted(f.begin(), f.end()));
    for (auto i : f) ++seen[i];
  }
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(seen[i], 1) << i;
  for (std::size_t f = 0; f < s.k(); ++f) EXPECT_EQ(s.train_indices(f).size() + s.folds[f].size(), n);
}

TEST(KFold, ExactDivisibility) {
  Rng rng(9);
  auto y = labels_with(6, 6, rng);
  auto s = stratified_kfold(y, 3, 1);
  EXPECT_EQ(class_sizes(s, y, 1), (std::vector<std::size_t>{2, 2, 2}));
  EXPECT_EQ(class_sizes(s, y, 0), (std::vector<std::size_t>{2, 2, 2}));
  expect_partition(s, 12);
}

TEST(KFold, CohortCounts) {
  Rng rng(10);
  auto y = labels_with(25, 76, rng);
  auto s = stratified_kfold(y, 3, 2);
  EXPECT_EQ(class_sizes(s, y, 1), (std::vector<std::size_t>{9, 8, 8}));
  EXPECT_EQ(class_sizes(s, y, 0), (std::vector<std::size_t>{26, 25, 25}));
  expect_partition(s, 101);
}

TEST(KFold, RandomPartitionProperty) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.below(5);
    auto y = labels_with(k + rng.below(40), k + rng.below(40), rng);
    auto s = stratified_kfold(y, k, rng.next());
    ASSERT_EQ(s.k(), k);
    expect_partition(s, y.size());
    for (int c : {0, 1}) {
      auto sizes = class_sizes(s, y, c);
      EXPECT_LE(sizes.front() - sizes.back(), 1u);
    }
  }
}

TEST(KFold, SeedControlsAssignment) {
  Rng rng(12);
  auto y = labels_with(20, 20, rng);
  EXPECT_EQ(stratified_kfold(y, 3, 5).folds, stratified_kfold(y, 3, 5).folds);
  EXPECT_NE(stratified_kfold(y, 3, 5).folds, stratified_kfold(y, 3, 6).folds);
}

TEST(KFold, Errors) {
  std::vector<int> y{1, 1, 0, 0, 0};
  expect_error(ErrorKind::data, [&] { stratified_kfold(y, 3, 1); });
  expect_error(ErrorKind::validation, [&] { stratified_kfold(y, 1, 1); });
}

BagDataset labelled_bags(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  BagDataset ds;
  ds.dim = 2;
  for (std::size_t i = 0; i < n; ++i)
    ds.bags.push_back(Bag{"id" + std::to_string(100 + i), random_matrix(1, 2, rng), static_cast<int>(rng.below(2)), {}});
  return ds;
}

std::vector<std::set<std::string>> fold_ids(const BagDataset& ds, const FoldSplit& s) {
  std::vector<std::set<std::string>> out;
  for (const auto& f : s.folds) {
    std::set<std::string> ids;
    for (auto i : f) ids.insert(ds.bags[i].id);
    out.push_back(ids);
  }
  return out;
}

TEST(KFold, InvariantToStorageOrder) {
  auto ds = labelled_bags(60, 13);
  auto shuffled = ds;
  Rng rng(14);
  rng.shuffle(std::span(shuffled.bags));
  EXPECT_EQ(fold_ids(ds, stratified_kfold(ds, 3, 7)), fold_ids(shuffled, stratified_kfold(shuffled, 3, 7)));
}

TEST(Holdout, StratifiedAndOrderInvariant) {
  auto ds = labelled_bags(101, 15);
  auto split = stratified_holdout(ds, 0.2, 3);
  const auto counts = ds.class_counts();
  std::map<int, std::size_t> test_counts;
  for (auto i : split.test) ++test_counts[ds.bags[i].label];
  for (auto [c, n] : counts) EXPECT_EQ(test_counts[c], static_cast<std::size_t>(std::llround(n * 0.2)));
  EXPECT_EQ(split.train.size() + split.test.size(), ds.size());

  auto shuffled = ds;
  Rng rng(16);
  rng.shuffle(std::span(shuffled.bags));
  auto split2 = stratified_holdout(shuffled, 0.2, 3);
  std::set<std::string> a, b;
  for (auto i : split.test) a.insert(ds.bags[i].id);
  for (auto i : split2.test) b.insert(shuffled.bags[i].id);
  EXPECT_EQ(a, b);
  expect_error(ErrorKind::validation, [&] { stratified_holdout(ds, 1.0, 3); });
}

}  // namespace
