#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mil/bag.hpp"
#include "mil/matrix.hpp"

namespace mil {

/// MNIST digits with pixels scaled to [0, 1], one flattened 28x28 image per row.
struct MnistSet {
  Matrix images;  // N x 784
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

MnistSet load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
// Helpers shared with tests: IDX writers for small synthetic fixtures.
void write_idx_images(const std::filesystem::path& path, std::span<const std::uint8_t> pixels,
                      std::uint32_t count, std::uint32_t rows, std::uint32_t cols);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

struct BagDataset {
  std::vector<Bag> bags;
  std::size_t dim = 0;

  std::size_t size() const { return bags.size(); }
  std::map<int, std::size_t> class_counts() const;
  std::vector<int> labels() const;
  // Checks uniform width, labels in {0,1}, K >= 1 and unique ids.
  void validate() const;

  friend bool operator==(const BagDataset&, const BagDataset&) = default;
};

struct MnistBagsConfig {
  std::size_t n_bags = 5000;
  std::size_t bag_size = 10;
  std::uint64_t seed = 0;
  std::size_t positive_min = 1;
  std::size_t positive_max = 4;
  int target_digit = 1;
};

/// Balanced bags; a bag is positive iff it holds at least one target digit.
/// Images are drawn uniformly with replacement. instance_refs record the
/// source image and its digit as "mnist-<index>-d<digit>".
BagDataset generate_mnist_bags(const MnistSet& set, const MnistBagsConfig& cfg);
std::string mnist_instance_ref(std::size_t image_index, int digit);
// Digit encoded in an mnist_instance_ref string; nullopt if not in that form.
std::optional<int> digit_from_ref(const std::string& ref);

// On-disk layout: <dir>/manifest.csv with header
//   bag_id,label,num_instances,dim,path[,instance_refs]
// and one CSV per bag (one instance per row, shortest round-trip decimals).
void save_bag_dataset(const BagDataset& ds, const std::filesystem::path& dir);
BagDataset load_bag_dataset(const std::filesystem::path& dir);

struct FoldSplit {
  std::vector<std::vector<std::size_t>> folds;  // test indices, ascending

  std::size_t k() const { return folds.size(); }
  std::vector<std::size_t> train_indices(std::size_t fold) const;
};

/// Per class: shuffle that class's indices with the seeded stream, then deal
/// them round-robin to folds 0..k-1.
FoldSplit stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed);
// Folds over dataset indices, computed on the bags sorted by id so the
// assignment does not depend on storage order.
FoldSplit stratified_kfold(const BagDataset& ds, std::size_t k, std::uint64_t seed);

struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
// Stratified train/test split; round(n_class * test_fraction) of each class
// goes to test. Canonical by id, like stratified_kfold.
HoldoutSplit stratified_holdout(const BagDataset& ds, double test_fraction, std::uint64_t seed);

}  // namespace mil
