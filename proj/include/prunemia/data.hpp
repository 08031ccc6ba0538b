#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "prunemia/rng.hpp"
#include "prunemia/tensor.hpp"

namespace prunemia::data {

struct Dataset {
  Tensor features;          // [N, d]
  std::vector<int> labels;  // class ids in [0, K)
  std::int64_t num_classes = 0;
  std::string name;

  std::int64_t size() const { return features.rank() ? features.dim(0) : 0; }
  std::int64_t dim() const { return features.rank() ? features.dim(1) : 0; }

  Tensor rows(const std::vector<int>& idx) const {
    const std::int64_t d = dim();
    Tensor out({static_cast<std::int64_t>(idx.size()), d});
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::int64_t c = 0; c < d; ++c)
        out[static_cast<std::int64_t>(i) * d + c] = features[idx[i] * d + c];
    return out;
  }

  std::vector<int> labels_of(const std::vector<int>& idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(labels[static_cast<std::size_t>(i)]);
    return out;
  }
};

struct SyntheticSpec {
  std::int64_t num_classes = 30;
  std::int64_t num_features = 446;
  std::int64_t samples_per_class = 150;
  double flip_probability = 0.15;

  void validate() const {
    if (num_classes <= 0 || num_features <= 0 || samples_per_class <= 0)
      throw std::invalid_argument("SyntheticSpec: sizes must be positive");
    if (flip_probability < 0.0 || flip_probability >= 0.5)
      throw std::invalid_argument("SyntheticSpec: flip probability must be in [0, 0.5)");
  }
};

// Per class, a Bernoulli(0.5) prototype bit vector; each sample copies the
// prototype with every bit flipped independently with the configured
// probability.
inline Dataset synth_generate(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.name = "synthetic";
  const std::int64_t N = spec.num_classes * spec.samples_per_class;
  ds.features = Tensor({N, spec.num_features});
  ds.labels.resize(static_cast<std::size_t>(N));
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < spec.num_classes; ++c) {
    Rng proto_rng = substream(seed, "synth-proto", c);
    std::vector<double> proto(static_cast<std::size_t>(spec.num_features));
    for (auto& b : proto) b = proto_rng.bernoulli(0.5) ? 1.0 : 0.0;
    for (std::int64_t s = 0; s < spec.samples_per_class; ++s, ++row) {
      Rng flip_rng = substream(seed, "synth-flip", c, s);
      ds.labels[static_cast<std::size_t>(row)] = static_cast<int>(c);
      for (std::int64_t f = 0; f < spec.num_features; ++f) {
        const bool flip = flip_rng.bernoulli(spec.flip_probability);
        ds.features[row * spec.num_features + f] =
            flip ? 1.0 - proto[static_cast<std::size_t>(f)] : proto[static_cast<std::size_t>(f)];
      }
    }
  }
  return ds;
}

struct SplitSpec {
  double train_fraction = 0.45;
  double val_fraction = 0.10;
  double test_fraction = 0.45;
  std::uint64_t seed = 0;
};

struct HalfSplit {
  std::vector<int> train, val, test;

  std::vector<int> train_val_test_union() const {
    std::vector<int> out = train;
    out.insert(out.end(), val.begin(), val.end());
    out.insert(out.end(), test.begin(), test.end());
    return out;
  }
};

struct Split {
  HalfSplit target, shadow;
};

inline HalfSplit split_half(std::vector<int> idx, const SplitSpec& spec) {
  const auto n = static_cast<std::int64_t>(idx.size());
  const auto n_val = static_cast<std::int64_t>(spec.val_fraction * static_cast<double>(n));
  const auto n_test = static_cast<std::int64_t>(spec.test_fraction * static_cast<double>(n));
  const std::int64_t n_train = n - n_val - n_test;  // remainder goes to train
  HalfSplit h;
  h.train.assign(idx.begin(), idx.begin() + n_train);
  h.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  h.test.assign(idx.begin() + n_train + n_val, idx.end());
  return h;
}

// Disjoint target/shadow halves, each split train/val/test. Membership ground
// truth for attacks is membership of the train subset.
inline Split split(const Dataset& ds, const SplitSpec& spec) {
  const double fsum = spec.train_fraction + spec.val_fraction + spec.test_fraction;
  if (std::fabs(fsum - 1.0) > 1e-9)
    throw std::invalid_argument("split: fractions must sum to 1");
  const std::int64_t n = ds.size();
  if (n < 20) throw std::invalid_argument("split: need at least 20 samples, got " + std::to_string(n));
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = static_cast<int>(i);
  Rng rng = substream(spec.seed, "split");
  rng.shuffle(idx);
  const std::int64_t half = n / 2;
  Split s;
  s.target = split_half(std::vector<int>(idx.begin(), idx.begin() + half), spec);
  s.shadow = split_half(std::vector<int>(idx.begin() + half, idx.end()), spec);
  return s;
}

// Re-draws a train/val/test split of one half, e.g. per shadow model.
inline HalfSplit resplit(const std::vector<int>& half_idx, const SplitSpec& spec,
                         std::uint64_t seed, std::uint64_t stream_index) {
  std::vector<int> idx = half_idx;
  Rng rng = substream(seed, "resplit", stream_index);
  rng.shuffle(idx);
  return split_half(std::move(idx), spec);
}

struct CsvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// CSV schema: header `label,f0,...,f{d-1}`, one numeric row per sample.
inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CsvError("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw CsvError("load_csv: " + path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) header.push_back(col);
  }
  if (header.empty() || header[0] != "label")
    throw CsvError("load_csv: " + path + ":1: header must start with 'label'");
  const std::int64_t d = static_cast<std::int64_t>(header.size()) - 1;
  for (std::int64_t i = 0; i < d; ++i)
    if (header[static_cast<std::size_t>(i + 1)] != "f" + std::to_string(i))
      throw CsvError("load_csv: " + path + ":1: expected column f" + std::to_string(i));
  if (d == 0) throw CsvError("load_csv: " + path + ":1: no feature columns");

  std::vector<double> values;
  std::vector<int> labels;
  int max_label = -1;
  std::int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::int64_t col = 0;
    while (std::getline(ss, cell, ',')) {
      const char* b = cell.data();
      const char* e = b + cell.size();
      double v = 0.0;
      auto [p, ec] = std::from_chars(b, e, v);
      if (ec != std::errc{} || p != e)
        throw CsvError("load_csv: " + path + ":" + std::to_string(line_no) +
                       ": non-numeric value '" + cell + "'");
      if (col == 0) {
        const int y = static_cast<int>(v);
        if (static_cast<double>(y) != v || y < 0)
          throw CsvError("load_csv: " + path + ":" + std::to_string(line_no) +
                         ": label must be a non-negative integer");
        labels.push_back(y);
        max_label = std::max(max_label, y);
      } else {
        if (!std::isfinite(v))
          throw CsvError("load_csv: " + path + ":" + std::to_string(line_no) +
                         ": non-finite feature");
        values.push_back(v);
      }
      ++col;
    }
    if (col != d + 1)
      throw CsvError("load_csv: " + path + ":" + std::to_string(line_no) + ": expected " +
                     std::to_string(d + 1) + " columns, got " + std::to_string(col));
  }
  if (labels.empty()) throw CsvError("load_csv: " + path + ": no data rows");
  Dataset ds;
  ds.features = Tensor({static_cast<std::int64_t>(labels.size()), d}, std::move(values));
  ds.labels = std::move(labels);
  ds.num_classes = max_label + 1;
  ds.name = path;
  return ds;
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CsvError("save_csv: cannot open " + path);
  out << "label";
  for (std::int64_t i = 0; i < ds.dim(); ++i) out << ",f" << i;
  out << "\n";
  out.precision(17);
  for (std::int64_t r = 0; r < ds.size(); ++r) {
    out << ds.labels[static_cast<std::size_t>(r)];
    for (std::int64_t c = 0; c < ds.dim(); ++c) out << ',' << ds.features[r * ds.dim() + c];
    out << "\n";
  }
  if (!out) throw CsvError("save_csv: write failed for " + path);
}

}  // namespace prunemia::data
