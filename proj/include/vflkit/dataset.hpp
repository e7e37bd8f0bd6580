#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vflkit/matrix.hpp"

namespace vflkit {

struct NormStats {
  Vector mean;
  Vector std;  // floored at kStdFloor
};

inline constexpr double kStdFloor = 1e-12;

struct Dataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::string> feature_names;
  std::vector<std::string> class_names;
  std::optional<NormStats> norm_stats;

  int n() const { return static_cast<int>(features.rows()); }
  int d() const { return static_cast<int>(features.cols()); }
  int num_classes() const;
  void validate() const;
};

/// Per-participant ordered column lists.
using PartitionSpec = std::vector<std::vector<int>>;

void validate_partition(const PartitionSpec& spec, int d);

/// CSV with header; label column excluded from features. Labels are mapped to class
/// indices in sorted order of their values (numeric order when all labels are numeric).
Dataset load_csv(const std::string& path, const std::string& label_column);

/// IDX images (magic 0x803) and labels (0x801); pixels scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

Views partition_vertical(const Matrix& features, const PartitionSpec& spec);
Views partition_vertical(const Dataset& ds, const PartitionSpec& spec);

/// Inverse of partition_vertical.
Matrix concat_views(const Views& views, const PartitionSpec& spec);

/// Image-column partition over a 28-wide image, in column units.
PartitionSpec mnist_column_split(int participants);

/// A gets round(d * ratio / (1 + ratio)) leading units, B the rest.
PartitionSpec ratio_split(int d, double ratio);

/// Expands a partition over image columns into pixel indices (row-major layout).
PartitionSpec expand_image_columns(const PartitionSpec& column_spec, int width, int height);

/// Unit-partition sizes; (8, 4, 4, 4, 8) etc.
PartitionSpec contiguous_split(const std::vector<int>& counts);

struct TinyDataset {
  Matrix rows;
  std::vector<int> source_indices;
};

TinyDataset sample_tiny(const Matrix& test_view_b, int h, uint64_t seed);
std::vector<int> sample_indices(int n, int h, uint64_t seed);

struct GmmSpec {
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<Matrix> covariances;
};

Dataset synth_gmm_dataset(const GmmSpec& spec, int n, uint64_t seed);

NormStats fit_norm(const Matrix& x);
Matrix apply_norm(const Matrix& x, const NormStats& stats);
Matrix inverse_normalize(const Matrix& x, const NormStats& stats);
Dataset normalize(const Dataset& ds);

struct SplitIndices {
  std::vector<int> train;
  std::vector<int> test;
};

/// Per-class shuffled split; each class contributes round(test_fraction * count) test rows.
SplitIndices stratified_split(const std::vector<int>& labels, double test_fraction, uint64_t seed);
Dataset subset(const Dataset& ds, const std::vector<int>& idx);

/// Synthetic stand-in shaped like the 23-column credit default data.
Dataset credit_surrogate(int n = 30000, uint64_t seed = 2005);

/// Synthetic stand-in shaped like the 634 image + 1000 text feature multimodal data.
Dataset nuswide_surrogate(int n = 5000, uint64_t seed = 17);

}  // namespace vflkit
