#pragma once

// Labels, manifests and the train/test split.
//
// On-disk layout of an image tree:
//   <root>/<denomination>/<side>/<style>/<source_id>_<tag>.pgm
// with denomination in {1, 2, 5}, side in {obverse, reverse}, style a
// positive integer within the denomination's style count, and tag either
// "original" or an augmentation tag name. The coin id is the part of the
// source id before its first '_'.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "augment.hpp"
#include "detail/numeric.hpp"

namespace coinforge {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Side { obverse, reverse };

inline constexpr int kNumClasses6 = 6;
inline constexpr int kNumClasses3 = 3;
inline constexpr std::array<int, 3> kDenominations = {1, 2, 5};
inline constexpr std::array<int, 3> kStyleCounts = {3, 4, 5};
inline const std::array<std::string, 6> kClass6Names = {"1 Rev", "2 Rev", "5 Rev", "1 Obv", "2 Obv", "5 Obv"};
inline const std::array<std::string, 3> kClass3Names = {"1", "2", "5"};

inline std::optional<int> denomination_index(int denomination) {
  for (int i = 0; i < 3; ++i) {
    if (kDenominations[i] == denomination) return i;
  }
  return std::nullopt;
}

inline std::string_view side_name(Side s) { return s == Side::obverse ? "obverse" : "reverse"; }

inline std::optional<Side> parse_side(std::string_view s) {
  if (s == "obverse") return Side::obverse;
  if (s == "reverse") return Side::reverse;
  return std::nullopt;
}

struct CoinLabel {
  int denomination = 1;
  Side side = Side::reverse;
  int style = 1;

  // Class index in the order {1 Rev, 2 Rev, 5 Rev, 1 Obv, 2 Obv, 5 Obv}.
  int class6() const { return (side == Side::reverse ? 0 : 3) + *denomination_index(denomination); }

  static CoinLabel from_class6(int class6, int style = 1) {
    if (class6 < 0 || class6 >= kNumClasses6) throw DatasetError("class index out of range: " + std::to_string(class6));
    return {kDenominations[class6 % 3], class6 < 3 ? Side::reverse : Side::obverse, style};
  }

  void validate() const {
    const auto di = denomination_index(denomination);
    if (!di) throw DatasetError("unknown denomination " + std::to_string(denomination));
    if (style < 1 || style > kStyleCounts[*di]) {
      throw DatasetError("style " + std::to_string(style) + " outside 1.." + std::to_string(kStyleCounts[*di]) +
                         " for denomination " + std::to_string(denomination));
    }
  }

  bool operator==(const CoinLabel&) const = default;
};

// Six side-aware classes to three denominations.
inline int merge_label(int class6) {
  if (class6 < 0 || class6 >= kNumClasses6) throw DatasetError("class index out of range: " + std::to_string(class6));
  return class6 % 3;
}

enum class SplitSide { unassigned, train, test };

inline std::string_view split_name(SplitSide s) {
  switch (s) {
    case SplitSide::train:
      return "train";
    case SplitSide::test:
      return "test";
    default:
      return "unassigned";
  }
}

inline std::optional<SplitSide> parse_split(std::string_view s) {
  if (s == "train") return SplitSide::train;
  if (s == "test") return SplitSide::test;
  if (s == "unassigned") return SplitSide::unassigned;
  return std::nullopt;
}

struct ManifestRecord {
  std::string path;  // relative to the image tree root, '/'-separated
  CoinLabel label;
  std::string coin_id;
  std::string source_image_id;
  std::optional<AugmentTag> augment_tag;
  SplitSide split = SplitSide::unassigned;

  bool operator==(const ManifestRecord&) const = default;
};

using Manifest = std::vector<ManifestRecord>;

inline std::string coin_id_of(std::string_view source_id) {
  return std::string(source_id.substr(0, source_id.find('_')));
}

// Checks path uniqueness and that every source image carries one label
// and one coin id.
inline void validate_manifest(const Manifest& manifest) {
  std::set<std::string_view> paths;
  std::map<std::string_view, const ManifestRecord*> first_of_source;
  for (const auto& r : manifest) {
    if (!paths.insert(r.path).second) throw DatasetError("duplicate manifest path " + r.path);
    auto [it, inserted] = first_of_source.emplace(r.source_image_id, &r);
    if (!inserted && (it->second->label != r.label || it->second->coin_id != r.coin_id)) {
      throw DatasetError("source image " + r.source_image_id + " has conflicting label or coin id");
    }
  }
}

struct PathError {
  std::string path;
  std::string message;
};

struct ManifestBuild {
  Manifest records;
  std::vector<PathError> errors;
};

struct LabelingRules {
  std::vector<std::string> image_extensions = {".pgm"};
};

// Parses one relative path under the image tree layout.
inline ManifestRecord parse_image_path(const std::filesystem::path& rel) {
  std::vector<std::string> parts;
  for (const auto& p : rel) parts.push_back(p.string());
  if (parts.size() != 4) throw DatasetError("expected <denomination>/<side>/<style>/<file>");

  CoinLabel label;
  try {
    std::size_t used = 0;
    label.denomination = std::stoi(parts[0], &used);
    if (used != parts[0].size()) throw std::invalid_argument(parts[0]);
    label.style = std::stoi(parts[2], &used);
    if (used != parts[2].size()) throw std::invalid_argument(parts[2]);
  } catch (const std::logic_error&) {
    throw DatasetError("non-numeric denomination or style directory");
  }
  const auto side = parse_side(parts[1]);
  if (!side) throw DatasetError("side directory must be 'obverse' or 'reverse', got '" + parts[1] + "'");
  label.side = *side;
  label.validate();

  const std::string stem = rel.stem().string();
  const auto cut = stem.rfind('_');
  if (cut == std::string::npos || cut == 0) throw DatasetError("file name must be <source_id>_<tag>");
  const auto tag = parse_tag_name(std::string_view(stem).substr(cut + 1));
  if (!tag) throw DatasetError("unknown augmentation tag '" + stem.substr(cut + 1) + "'");

  ManifestRecord r;
  r.path = rel.generic_string();
  r.label = label;
  r.source_image_id = stem.substr(0, cut);
  r.coin_id = coin_id_of(r.source_image_id);
  r.augment_tag = *tag;
  return r;
}

// One record per image file under `root`, sorted by path. Files that do not
// fit the layout are reported individually rather than skipped.
inline ManifestBuild build_manifest(const std::filesystem::path& root, const LabelingRules& rules = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DatasetError("not a directory: " + root.string());
  ManifestBuild out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (std::find(rules.image_extensions.begin(), rules.image_extensions.end(), ext) == rules.image_extensions.end()) {
      continue;
    }
    const auto rel = fs::relative(entry.path(), root);
    try {
      out.records.push_back(parse_image_path(rel));
    } catch (const DatasetError& e) {
      out.errors.push_back({rel.generic_string(), e.what()});
    }
  }
  std::sort(out.records.begin(), out.records.end(),
            [](const ManifestRecord& a, const ManifestRecord& b) { return a.path < b.path; });
  std::sort(out.errors.begin(), out.errors.end(), [](const PathError& a, const PathError& b) { return a.path < b.path; });
  try {
    validate_manifest(out.records);
  } catch (const DatasetError& e) {
    out.errors.push_back({root.generic_string(), e.what()});
  }
  return out;
}

enum class SplitMode { grouped, record_random };

inline std::string_view split_mode_name(SplitMode m) { return m == SplitMode::grouped ? "grouped" : "record-random"; }

inline std::optional<SplitMode> parse_split_mode(std::string_view s) {
  if (s == "grouped") return SplitMode::grouped;
  if (s == "record-random") return SplitMode::record_random;
  return std::nullopt;
}

// Half-up rounding of count * fraction; the epsilon absorbs binary
// representation error in fractions like 0.33.
inline std::size_t test_count(std::size_t count, double fraction) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(count) * fraction + 0.5 + 1e-9));
}

// Stratified by six-class label. Grouped mode keeps every record of a
// source image on one side; record-random mode assigns records
// independently.
inline Manifest split(const Manifest& manifest, double test_fraction, std::uint64_t seed,
                      SplitMode mode = SplitMode::grouped) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DatasetError("test fraction must lie in (0, 1)");
  if (manifest.empty()) throw DatasetError("cannot split an empty manifest");

  std::array<std::vector<std::size_t>, kNumClasses6> strata;
  for (std::size_t i = 0; i < manifest.size(); ++i) strata[manifest[i].label.class6()].push_back(i);
  for (int c = 0; c < kNumClasses6; ++c) {
    if (strata[c].empty()) throw DatasetError("class " + kClass6Names[c] + " has no records");
  }

  Manifest out = manifest;
  for (auto& r : out) r.split = SplitSide::train;
  detail::Rng rng(seed);
  for (int c = 0; c < kNumClasses6; ++c) {
    auto& members = strata[c];
    std::sort(members.begin(), members.end(),
              [&](std::size_t a, std::size_t b) { return manifest[a].path < manifest[b].path; });
    if (mode == SplitMode::record_random) {
      rng.shuffle(members);
      const std::size_t n_test = test_count(members.size(), test_fraction);
      for (std::size_t k = 0; k < n_test; ++k) out[members[k]].split = SplitSide::test;
    } else {
      std::vector<std::string> groups;
      for (auto i : members) groups.push_back(manifest[i].source_image_id);
      std::sort(groups.begin(), groups.end());
      groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
      rng.shuffle(groups);
      const std::set<std::string> test_groups(groups.begin(),
                                              groups.begin() + static_cast<long>(test_count(groups.size(), test_fraction)));
      for (auto i : members) {
        if (test_groups.count(manifest[i].source_image_id)) out[i].split = SplitSide::test;
      }
    }
  }
  return out;
}

inline constexpr std::string_view kManifestHeader =
    "path\tclass6\tdenomination\tside\tstyle\tcoin_id\tsource_image_id\taugment_tag\tsplit";

inline void write_manifest(std::ostream& os, const Manifest& manifest) {
  os << kManifestHeader << '\n';
  for (const auto& r : manifest) {
    os << r.path << '\t' << r.label.class6() << '\t' << r.label.denomination << '\t' << side_name(r.label.side) << '\t'
       << r.label.style << '\t' << r.coin_id << '\t' << r.source_image_id << '\t' << tag_name(r.augment_tag) << '\t'
       << split_name(r.split) << '\n';
  }
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

inline int parse_int_field(const std::string& s) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::logic_error&) {
    throw DatasetError("expected an integer, got '" + s + "'");
  }
  if (used != s.size()) throw DatasetError("expected an integer, got '" + s + "'");
  return v;
}

}  // namespace detail

inline Manifest read_manifest(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kManifestHeader) throw DatasetError("manifest line 1: missing or wrong header");
  Manifest out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    try {
      const auto f = detail::split_tabs(line);
      if (f.size() != 9) throw DatasetError("expected 9 fields, got " + std::to_string(f.size()));
      ManifestRecord r;
      r.path = f[0];
      if (r.path.empty()) throw DatasetError("empty path");
      r.label.denomination = detail::parse_int_field(f[2]);
      const auto side = parse_side(f[3]);
      if (!side) throw DatasetError("bad side '" + f[3] + "'");
      r.label.side = *side;
      r.label.style = detail::parse_int_field(f[4]);
      r.label.validate();
      if (detail::parse_int_field(f[1]) != r.label.class6()) throw DatasetError("class6 disagrees with label fields");
      r.coin_id = f[5];
      r.source_image_id = f[6];
      const auto tag = parse_tag_name(f[7]);
      if (!tag) throw DatasetError("bad augment tag '" + f[7] + "'");
      r.augment_tag = *tag;
      const auto s = parse_split(f[8]);
      if (!s) throw DatasetError("bad split '" + f[8] + "'");
      r.split = *s;
      out.push_back(std::move(r));
    } catch (const DatasetError& e) {
      throw DatasetError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate_manifest(out);
  return out;
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DatasetError("cannot open " + path.string() + " for writing");
  write_manifest(os, manifest);
  if (!os) throw DatasetError("failed writing " + path.string());
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetError("cannot open " + path.string());
  return read_manifest(is);
}

// Sidecar written next to the augmented images: which source image and
// augmentation produced each file.
inline constexpr std::string_view kProvenanceHeader = "path\tsource_image_id\taugment_tag";

struct ProvenanceRow {
  std::string path;
  std::string source_image_id;
  std::optional<AugmentTag> augment_tag;

  bool operator==(const ProvenanceRow&) const = default;
};

inline void write_provenance(std::ostream& os, const std::vector<ProvenanceRow>& rows) {
  os << kProvenanceHeader << '\n';
  for (const auto& r : rows) os << r.path << '\t' << r.source_image_id << '\t' << tag_name(r.augment_tag) << '\n';
}

inline std::vector<ProvenanceRow> read_provenance(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kProvenanceHeader) throw DatasetError("provenance line 1: missing or wrong header");
  std::vector<ProvenanceRow> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    const auto f = detail::split_tabs(line);
    const auto tag = f.size() == 3 ? parse_tag_name(f[2]) : std::nullopt;
    if (!tag || f[0].empty() || f[1].empty()) throw DatasetError("provenance line " + std::to_string(line_no) + ": malformed");
    rows.push_back({f[0], f[1], *tag});
  }
  return rows;
}

// The listing and the manifest must describe exactly the same files with
// the same source and tag.
inline void check_provenance(const Manifest& manifest, const std::vector<ProvenanceRow>& rows) {
  std::map<std::string_view, const ProvenanceRow*> by_path;
  for (const auto& r : rows) {
    if (!by_path.emplace(r.path, &r).second) throw DatasetError("provenance lists " + r.path + " twice");
  }
  for (const auto& rec : manifest) {
    const auto it = by_path.find(rec.path);
    if (it == by_path.end()) throw DatasetError("no provenance entry for " + rec.path);
    if (it->second->source_image_id != rec.source_image_id || it->second->augment_tag != rec.augment_tag) {
      throw DatasetError("provenance of " + rec.path + " disagrees with its file name");
    }
  }
  if (rows.size() != manifest.size()) {
    throw DatasetError("provenance lists " + std::to_string(rows.size()) + " files, tree holds " +
                       std::to_string(manifest.size()));
  }
}

}  // namespace coinforge
