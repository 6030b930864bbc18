#pragma once

// Confusion matrices (rows actual, columns predicted), class merging and
// accuracy metrics.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dataset.hpp"

namespace coinforge {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;

  explicit ConfusionMatrix(std::vector<std::string> names)
      : names_(std::move(names)), counts_(names_.size() * names_.size(), 0) {
    if (names_.empty()) throw EvalError("confusion matrix needs at least one class");
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  std::uint64_t at(std::size_t actual, std::size_t predicted) const { return counts_[actual * size() + predicted]; }
  std::uint64_t& at(std::size_t actual, std::size_t predicted) { return counts_[actual * size() + predicted]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < size(); ++i) t += at(i, i);
    return t;
  }
  std::uint64_t row_total(std::size_t actual) const {
    std::uint64_t t = 0;
    for (std::size_t p = 0; p < size(); ++p) t += at(actual, p);
    return t;
  }
  std::uint64_t column_total(std::size_t predicted) const {
    std::uint64_t t = 0;
    for (std::size_t a = 0; a < size(); ++a) t += at(a, predicted);
    return t;
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<std::uint64_t> counts_;
};

inline std::vector<std::string> class6_names() { return {kClass6Names.begin(), kClass6Names.end()}; }
inline std::vector<std::string> class3_names() { return {kClass3Names.begin(), kClass3Names.end()}; }

inline ConfusionMatrix confusion(std::span<const int> truths, std::span<const int> preds,
                                 std::vector<std::string> names) {
  if (truths.size() != preds.size()) {
    throw EvalError("truth/prediction length mismatch: " + std::to_string(truths.size()) + " vs " +
                    std::to_string(preds.size()));
  }
  ConfusionMatrix m(std::move(names));
  const int n = static_cast<int>(m.size());
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] < 0 || truths[i] >= n || preds[i] < 0 || preds[i] >= n) {
      throw EvalError("class index out of range at position " + std::to_string(i));
    }
    ++m.at(static_cast<std::size_t>(truths[i]), static_cast<std::size_t>(preds[i]));
  }
  return m;
}

inline ConfusionMatrix confusion(std::span<const int> truths, std::span<const int> preds, int n) {
  std::vector<std::string> names;
  for (int i = 0; i < n; ++i) names.push_back(std::to_string(i));
  return confusion(truths, preds, std::move(names));
}

// Sums blocks of `m` under a total mapping from its classes onto
// `merged_names`.
inline ConfusionMatrix merge_confusion(const ConfusionMatrix& m, std::span<const int> mapping,
                                       std::vector<std::string> merged_names) {
  if (mapping.size() != m.size()) {
    throw EvalError("mapping covers " + std::to_string(mapping.size()) + " of " + std::to_string(m.size()) +
                    " classes");
  }
  ConfusionMatrix out(std::move(merged_names));
  for (std::size_t i = 0; i < mapping.size(); ++i) {
    if (mapping[i] < 0 || static_cast<std::size_t>(mapping[i]) >= out.size()) {
      throw EvalError("class " + m.names()[i] + " is not mapped to a merged class");
    }
  }
  for (std::size_t a = 0; a < m.size(); ++a) {
    for (std::size_t p = 0; p < m.size(); ++p) {
      out.at(static_cast<std::size_t>(mapping[a]), static_cast<std::size_t>(mapping[p])) += m.at(a, p);
    }
  }
  return out;
}

inline std::vector<int> denomination_mapping() {
  std::vector<int> mapping;
  for (int c = 0; c < kNumClasses6; ++c) mapping.push_back(merge_label(c));
  return mapping;
}

inline ConfusionMatrix merge_denominations(const ConfusionMatrix& m6) {
  if (m6.size() != kNumClasses6) throw EvalError("denomination merge needs a 6-class matrix");
  return merge_confusion(m6, denomination_mapping(), class3_names());
}

// Exact ratio of counts.
struct Ratio {
  std::uint64_t numerator = 0;
  std::uint64_t denominator = 1;

  double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }

  // Percentage in hundredths of a percent, rounded half-up exactly.
  std::uint64_t percent_hundredths() const { return (numerator * 20000 + denominator) / (2 * denominator); }

  // "97.57"
  std::string percent_string() const {
    const auto h = percent_hundredths();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%llu.%02llu", static_cast<unsigned long long>(h / 100),
                  static_cast<unsigned long long>(h % 100));
    return buf;
  }

  bool operator==(const Ratio&) const = default;
};

inline Ratio accuracy(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) throw EvalError("accuracy of an empty confusion matrix");
  return {m.trace(), total};
}

// floor(100 * fraction), taken on the exact ratio.
inline int floored_percent(const Ratio& r) { return static_cast<int>(r.numerator * 100 / r.denominator); }

inline int floored_percent(double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw EvalError("fraction must lie in [0, 1]");
  // Tolerates representation error just below an integer percent.
  return static_cast<int>(std::floor(fraction * 100.0 + 1e-9));
}

struct SideAccuracy {
  Ratio obverse;
  Ratio reverse;
};

inline constexpr std::string_view kPerSideDefinition =
    "rows of one side; an observation is correct when the predicted denomination matches, ignoring predicted side";

inline SideAccuracy per_side_accuracy(const ConfusionMatrix& m6) {
  if (m6.size() != kNumClasses6) throw EvalError("per-side accuracy needs a 6-class matrix");
  auto side_ratio = [&](int first_row, const char* name) {
    Ratio r{0, 0};
    for (int a = first_row; a < first_row + 3; ++a) {
      for (int p = 0; p < kNumClasses6; ++p) {
        const auto v = m6.at(static_cast<std::size_t>(a), static_cast<std::size_t>(p));
        r.denominator += v;
        if (merge_label(a) == merge_label(p)) r.numerator += v;
      }
    }
    if (r.denominator == 0) throw EvalError(std::string("no ") + name + " observations");
    return r;
  };
  return {side_ratio(3, "obverse"), side_ratio(0, "reverse")};
}

// CSV: header "actual,<predicted names...>", one row per actual class.
inline void write_matrix_csv(std::ostream& os, const ConfusionMatrix& m) {
  os << "actual";
  for (const auto& n : m.names()) os << ',' << n;
  os << '\n';
  for (std::size_t a = 0; a < m.size(); ++a) {
    os << m.names()[a];
    for (std::size_t p = 0; p < m.size(); ++p) os << ',' << m.at(a, p);
    os << '\n';
  }
}

namespace detail {

inline std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

// Reads the CSV written by write_matrix_csv. A trailing "Total" column and
// "Total" row, as in published tables, are accepted and must agree with
// the counts.
inline ConfusionMatrix read_matrix_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw EvalError("matrix CSV: empty input");
  auto header = detail::split_commas(line);
  if (header.size() < 2 || header[0] != "actual") throw EvalError("matrix CSV: header must start with 'actual'");
  const bool total_column = header.back() == "Total";
  std::vector<std::string> names(header.begin() + 1, header.end() - (total_column ? 1 : 0));
  ConfusionMatrix m(names);
  std::vector<std::uint64_t> total_row;
  std::size_t row = 0;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_commas(line);
    if (f.size() != header.size()) throw EvalError("matrix CSV line " + std::to_string(line_no) + ": wrong field count");
    std::vector<std::uint64_t> values;
    for (std::size_t i = 1; i < f.size(); ++i) {
      try {
        std::size_t used = 0;
        values.push_back(std::stoull(f[i], &used));
        if (used != f[i].size()) throw std::invalid_argument(f[i]);
      } catch (const std::logic_error&) {
        throw EvalError("matrix CSV line " + std::to_string(line_no) + ": bad count '" + f[i] + "'");
      }
    }
    if (f[0] == "Total") {
      total_row = values;
      continue;
    }
    if (row >= m.size() || f[0] != names[row]) {
      throw EvalError("matrix CSV line " + std::to_string(line_no) + ": unexpected row '" + f[0] + "'");
    }
    for (std::size_t p = 0; p < m.size(); ++p) m.at(row, p) = values[p];
    if (total_column && values.back() != m.row_total(row)) {
      throw EvalError("matrix CSV line " + std::to_string(line_no) + ": row total disagrees with counts");
    }
    ++row;
  }
  if (row != m.size()) throw EvalError("matrix CSV: expected " + std::to_string(m.size()) + " rows");
  if (!total_row.empty()) {
    for (std::size_t p = 0; p < m.size(); ++p) {
      if (total_row[p] != m.column_total(p)) throw EvalError("matrix CSV: column total disagrees for " + names[p]);
    }
    if (total_column && total_row.back() != m.total()) throw EvalError("matrix CSV: grand total disagrees");
  }
  return m;
}

}  // namespace coinforge
