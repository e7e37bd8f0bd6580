#include "vflkit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace vflkit {

int Dataset::num_classes() const {
  if (!class_names.empty()) return static_cast<int>(class_names.size());
  int c = 0;
  for (int l : labels) c = std::max(c, l + 1);
  return c;
}

void Dataset::validate() const {
  if (static_cast<int>(labels.size()) != n()) throw std::invalid_argument("dataset: label count != row count");
  int c = num_classes();
  for (int l : labels)
    if (l < 0 || l >= c) throw std::invalid_argument("dataset: label out of range");
  require_finite(features, "dataset features");
}

void validate_partition(const PartitionSpec& spec, int d) {
  if (spec.empty()) throw std::invalid_argument("partition: no participants");
  std::vector<int> seen(d, 0);
  for (size_t p = 0; p < spec.size(); ++p) {
    if (spec[p].empty()) throw std::invalid_argument("partition: participant " + std::to_string(p) + " has no columns");
    for (int c : spec[p]) {
      if (c < 0 || c >= d) throw std::invalid_argument("partition: column " + std::to_string(c) + " out of range");
      if (seen[c]++) throw std::invalid_argument("partition: column " + std::to_string(c) + " assigned twice");
    }
  }
  for (int c = 0; c < d; ++c)
    if (!seen[c]) throw std::invalid_argument("partition: column " + std::to_string(c) + " unassigned");
}

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\"");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\"");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error(path + ": truncated header");
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

}  // namespace

Dataset load_csv(const std::string& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  std::vector<std::string> header = split_csv_line(line);
  auto it = std::find(header.begin(), header.end(), label_column);
  if (it == header.end()) throw std::runtime_error(path + ": no label column '" + label_column + "'");
  size_t label_idx = it - header.begin();

  Dataset ds;
  for (size_t j = 0; j < header.size(); ++j)
    if (j != label_idx) ds.feature_names.push_back(header[j]);

  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                               " cells, got " + std::to_string(cells.size()));
    std::vector<double> row;
    row.reserve(header.size() - 1);
    for (size_t j = 0; j < cells.size(); ++j) {
      if (j == label_idx) continue;
      double v;
      if (!parse_double(cells[j], v))
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": non-numeric cell '" + cells[j] + "'");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
    raw_labels.push_back(cells[label_idx]);
  }
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");

  std::vector<std::string> uniq(raw_labels.begin(), raw_labels.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  bool numeric = std::all_of(uniq.begin(), uniq.end(), [](const std::string& s) {
    double v;
    return parse_double(s, v);
  });
  if (numeric)
    std::sort(uniq.begin(), uniq.end(), [](const std::string& a, const std::string& b) { return std::stod(a) < std::stod(b); });
  std::map<std::string, int> index;
  for (size_t i = 0; i < uniq.size(); ++i) index[uniq[i]] = static_cast<int>(i);

  ds.features = make_matrix(rows);
  ds.class_names = uniq;
  ds.labels.reserve(raw_labels.size());
  for (const auto& l : raw_labels) ds.labels.push_back(index[l]);
  return ds;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("cannot open " + labels_path);
  if (read_be32(img, images_path) != 0x00000803) throw std::runtime_error(images_path + ": bad magic");
  uint32_t n = read_be32(img, images_path);
  uint32_t rows = read_be32(img, images_path);
  uint32_t cols = read_be32(img, images_path);
  if (read_be32(lab, labels_path) != 0x00000801) throw std::runtime_error(labels_path + ": bad magic");
  uint32_t n_labels = read_be32(lab, labels_path);
  if (n != n_labels) throw std::runtime_error("idx: image count " + std::to_string(n) + " != label count " + std::to_string(n_labels));

  size_t d = size_t(rows) * cols;
  std::vector<unsigned char> buf(size_t(n) * d);
  if (!img.read(reinterpret_cast<char*>(buf.data()), buf.size())) throw std::runtime_error(images_path + ": truncated");
  std::vector<unsigned char> lbuf(n);
  if (!lab.read(reinterpret_cast<char*>(lbuf.data()), lbuf.size())) throw std::runtime_error(labels_path + ": truncated");

  Dataset ds;
  ds.features.resize(n, d);
  for (size_t i = 0; i < buf.size(); ++i) ds.features.data()[i] = buf[i] / 255.0;
  ds.labels.assign(lbuf.begin(), lbuf.end());
  int c = 0;
  for (int l : ds.labels) c = std::max(c, l + 1);
  for (int k = 0; k < c; ++k) ds.class_names.push_back(std::to_string(k));
  for (uint32_t r = 0; r < rows; ++r)
    for (uint32_t q = 0; q < cols; ++q) ds.feature_names.push_back("px_" + std::to_string(r) + "_" + std::to_string(q));
  return ds;
}

Views partition_vertical(const Matrix& features, const PartitionSpec& spec) {
  validate_partition(spec, static_cast<int>(features.cols()));
  Views views;
  for (const auto& cols : spec) {
    Matrix v(features.rows(), cols.size());
    for (size_t j = 0; j < cols.size(); ++j) v.col(j) = features.col(cols[j]);
    views.push_back(std::move(v));
  }
  return views;
}

Views partition_vertical(const Dataset& ds, const PartitionSpec& spec) { return partition_vertical(ds.features, spec); }

Matrix concat_views(const Views& views, const PartitionSpec& spec) {
  if (views.size() != spec.size()) throw std::invalid_argument("concat_views: view count mismatch");
  int d = 0;
  for (const auto& cols : spec) d += static_cast<int>(cols.size());
  validate_partition(spec, d);
  Eigen::Index n = views.empty() ? 0 : views.front().rows();
  Matrix out(n, d);
  for (size_t p = 0; p < spec.size(); ++p) {
    if (views[p].rows() != n || views[p].cols() != static_cast<Eigen::Index>(spec[p].size()))
      throw std::invalid_argument("concat_views: view shape mismatch");
    for (size_t j = 0; j < spec[p].size(); ++j) out.col(spec[p][j]) = views[p].col(j);
  }
  return out;
}

PartitionSpec contiguous_split(const std::vector<int>& counts) {
  PartitionSpec spec;
  int next = 0;
  for (int c : counts) {
    if (c <= 0) throw std::invalid_argument("contiguous_split: empty partition");
    std::vector<int> cols(c);
    std::iota(cols.begin(), cols.end(), next);
    next += c;
    spec.push_back(std::move(cols));
  }
  return spec;
}

PartitionSpec mnist_column_split(int participants) {
  switch (participants) {
    case 2: return contiguous_split({14, 14});
    case 3: return contiguous_split({11, 6, 11});
    case 5: return contiguous_split({8, 4, 4, 4, 8});
    default: throw std::invalid_argument("mnist_column_split: unsupported participant count " + std::to_string(participants));
  }
}

PartitionSpec ratio_split(int d, double ratio) {
  if (!(ratio > 0) || !std::isfinite(ratio)) throw std::invalid_argument("ratio_split: ratio must be positive");
  int a = static_cast<int>(std::lround(d * ratio / (1.0 + ratio)));
  if (a <= 0 || a >= d)
    throw std::invalid_argument("ratio_split: ratio " + std::to_string(ratio) + " leaves a participant empty");
  return contiguous_split({a, d - a});
}

PartitionSpec expand_image_columns(const PartitionSpec& column_spec, int width, int height) {
  validate_partition(column_spec, width);
  PartitionSpec out;
  for (const auto& cols : column_spec) {
    std::vector<int> sorted = cols;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> px;
    for (int r = 0; r < height; ++r)
      for (int c : sorted) px.push_back(r * width + c);
    out.push_back(std::move(px));
  }
  return out;
}

std::vector<int> sample_indices(int n, int h, uint64_t seed) {
  if (h < 1) throw std::invalid_argument("sample: h must be >= 1");
  if (h > n) throw std::invalid_argument("sample: h=" + std::to_string(h) + " exceeds population " + std::to_string(n));
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: first h slots are a uniform sample without replacement.
  for (int i = 0; i < h; ++i) {
    std::uniform_int_distribution<int> ud(i, n - 1);
    std::swap(idx[i], idx[ud(rng)]);
  }
  idx.resize(h);
  return idx;
}

TinyDataset sample_tiny(const Matrix& test_view_b, int h, uint64_t seed) {
  TinyDataset t;
  t.source_indices = sample_indices(static_cast<int>(test_view_b.rows()), h, seed);
  t.rows = select_rows(test_view_b, t.source_indices);
  return t;
}

Dataset synth_gmm_dataset(const GmmSpec& spec, int n, uint64_t seed) {
  size_t k = spec.weights.size();
  if (k == 0 || spec.means.size() != k || spec.covariances.size() != k)
    throw std::invalid_argument("synth_gmm: component lists disagree");
  double total = 0;
  for (double w : spec.weights) {
    if (!(w >= 0)) throw std::invalid_argument("synth_gmm: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("synth_gmm: weights must sum to 1");
  Eigen::Index d = spec.means.front().size();
  std::vector<Matrix> factors;
  for (size_t c = 0; c < k; ++c) {
    const Matrix& s = spec.covariances[c];
    if (spec.means[c].size() != d || s.rows() != d || s.cols() != d)
      throw std::invalid_argument("synth_gmm: component " + std::to_string(c) + " has wrong dimension");
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-9) throw std::invalid_argument("synth_gmm: covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(s)};
    Vector ev = es.eigenvalues();
    if (ev.minCoeff() < -1e-9 * std::max(1.0, ev.cwiseAbs().maxCoeff()))
      throw std::invalid_argument("synth_gmm: covariance of component " + std::to_string(c) + " is not PSD");
    ev = ev.cwiseMax(0.0).cwiseSqrt();
    factors.push_back(es.eigenvectors() * ev.asDiagonal());
  }

  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> pick(spec.weights.begin(), spec.weights.end());
  std::normal_distribution<double> nd;
  Dataset ds;
  ds.features.resize(n, d);
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    int c = pick(rng);
    Vector z(d);
    for (Eigen::Index j = 0; j < d; ++j) z[j] = nd(rng);
    ds.features.row(i) = (spec.means[c] + factors[c] * z).transpose();
    ds.labels[i] = c;
  }
  for (size_t c = 0; c < k; ++c) ds.class_names.push_back(std::to_string(c));
  for (Eigen::Index j = 0; j < d; ++j) ds.feature_names.push_back("x" + std::to_string(j));
  return ds;
}

NormStats fit_norm(const Matrix& x) {
  if (x.rows() < 2) throw std::invalid_argument("normalize: need at least 2 rows");
  NormStats s;
  s.mean = x.colwise().mean().transpose();
  s.std.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double var = (x.col(j).array() - s.mean[j]).square().mean();
    s.std[j] = std::max(std::sqrt(var), kStdFloor);
  }
  return s;
}

Matrix apply_norm(const Matrix& x, const NormStats& stats) {
  Matrix out = x;
  out.rowwise() -= stats.mean.transpose();
  out.array().rowwise() /= stats.std.transpose().array();
  return out;
}

Matrix inverse_normalize(const Matrix& x, const NormStats& stats) {
  Matrix out = x;
  out.array().rowwise() *= stats.std.transpose().array();
  out.rowwise() += stats.mean.transpose();
  return out;
}

Dataset normalize(const Dataset& ds) {
  Dataset out = ds;
  NormStats s = fit_norm(ds.features);
  out.features = apply_norm(ds.features, s);
  // Constant columns: std floored, centred values are exactly zero already.
  out.norm_stats = std::move(s);
  return out;
}

SplitIndices stratified_split(const std::vector<int>& labels, double test_fraction, uint64_t seed) {
  if (!(test_fraction > 0 && test_fraction < 1)) throw std::invalid_argument("stratified_split: fraction must be in (0,1)");
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
  std::mt19937_64 rng(seed);
  SplitIndices out;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    size_t n_test = static_cast<size_t>(std::lround(idx.size() * test_fraction));
    out.test.insert(out.test.end(), idx.begin(), idx.begin() + n_test);
    out.train.insert(out.train.end(), idx.begin() + n_test, idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

Dataset subset(const Dataset& ds, const std::vector<int>& idx) {
  Dataset out;
  out.features = select_rows(ds.features, idx);
  out.labels.reserve(idx.size());
  for (int i : idx) out.labels.push_back(ds.labels[i]);
  out.feature_names = ds.feature_names;
  out.class_names = ds.class_names;
  out.norm_stats = ds.norm_stats;
  return out;
}

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

int repayment_status(double x) {
  int s;
  if (x < -1.34) s = -2;
  else if (x < -0.75) s = -1;
  else if (x < 0.85) s = 0;
  else if (x < 1.35) s = 1;
  else if (x < 2.1) s = 2;
  else s = 3;
  if (x > 2.6) s += static_cast<int>(std::floor((x - 2.1) * 2));
  return std::min(s, 8);
}

}  // namespace

Dataset credit_surrogate(int n, uint64_t seed) {
  // Latent stress z drives delinquency, utilisation, payments and default;
  // latent wealth w drives limits and payment size.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud;
  Dataset ds;
  ds.feature_names = {"LIMIT_BAL", "SEX", "EDUCATION", "MARRIAGE", "AGE", "PAY_0", "PAY_2", "PAY_3",
                      "PAY_4", "PAY_5", "PAY_6", "BILL_AMT1", "BILL_AMT2", "BILL_AMT3", "BILL_AMT4",
                      "BILL_AMT5", "BILL_AMT6", "PAY_AMT1", "PAY_AMT2", "PAY_AMT3", "PAY_AMT4", "PAY_AMT5",
                      "PAY_AMT6"};
  ds.class_names = {"0", "1"};
  ds.features.resize(n, 23);
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    double z = nd(rng), w = nd(rng);
    double limit = std::clamp(std::round(std::exp(11.85 + 0.6 * w - 0.7 * z) / 10000) * 10000, 10000.0, 1e6);
    double sex = ud(rng) < 0.6 ? 2 : 1;
    double u = ud(rng);
    double edu = u < 0.35 ? 1 : u < 0.82 ? 2 : u < 0.98 ? 3 : 4;
    u = ud(rng);
    double marriage = u < 0.45 ? 1 : u < 0.98 ? 2 : 3;
    double age = std::clamp(std::round(35.5 + 8.3 * nd(rng) + 2 * w), 21.0, 79.0);
    double d[6];
    d[5] = 0.8 * z + 0.6 * nd(rng);
    for (int k = 4; k >= 0; --k) d[k] = 0.8 * d[k + 1] + 0.6 * nd(rng);
    double util = logistic(0.3 + 1.1 * z + 0.9 * nd(rng));
    double balance = limit * util;
    auto row = ds.features.row(i);
    row[0] = limit;
    row[1] = sex;
    row[2] = edu;
    row[3] = marriage;
    row[4] = age;
    for (int k = 0; k < 6; ++k) row[5 + k] = repayment_status(d[k]);
    for (int k = 0; k < 6; ++k) row[11 + k] = std::round(balance * (1 + 0.12 * nd(rng)) * std::pow(0.97, k));
    for (int k = 0; k < 6; ++k) {
      bool skipped = ud(rng) < logistic(-1.6 + 0.6 * z);
      row[17 + k] = skipped ? 0.0 : std::round(std::exp(7.6 + 0.6 * w - 0.9 * z + 1.1 * nd(rng)));
    }
    ds.labels[i] = ud(rng) < logistic(-1.55 + 0.9 * d[0] + 0.35 * z) ? 1 : 0;
  }
  return ds;
}

Dataset nuswide_surrogate(int n, uint64_t seed) {
  constexpr int kImage = 634, kText = 1000, kClasses = 10, kRank = 16;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud;
  Matrix basis(kRank, kImage);
  for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = nd(rng) / std::sqrt(kRank);
  Matrix centroids(kClasses, kRank);
  for (Eigen::Index i = 0; i < centroids.size(); ++i) centroids.data()[i] = 1.5 * nd(rng);
  Matrix word_prob(kClasses, kText);
  for (Eigen::Index i = 0; i < word_prob.size(); ++i) word_prob.data()[i] = ud(rng) < 0.03 ? 0.3 : 0.01;

  Dataset ds;
  ds.features.resize(n, kImage + kText);
  ds.labels.resize(n);
  std::uniform_int_distribution<int> pick(0, kClasses - 1);
  for (int i = 0; i < n; ++i) {
    int c = pick(rng);
    RowVector latent = centroids.row(c);
    for (int r = 0; r < kRank; ++r) latent[r] += nd(rng);
    RowVector img = latent * basis;
    for (int j = 0; j < kImage; ++j) ds.features(i, j) = img[j] + 0.3 * nd(rng);
    for (int j = 0; j < kText; ++j) ds.features(i, kImage + j) = ud(rng) < word_prob(c, j) ? 1.0 : 0.0;
    ds.labels[i] = c;
  }
  for (int j = 0; j < kImage; ++j) ds.feature_names.push_back("img_" + std::to_string(j));
  for (int j = 0; j < kText; ++j) ds.feature_names.push_back("tag_" + std::to_string(j));
  for (int c = 0; c < kClasses; ++c) ds.class_names.push_back(std::to_string(c));
  return ds;
}

}  // namespace vflkit
