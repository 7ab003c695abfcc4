#pragma once

// File formats: tensors as {"shape": [...], "data": [...]} (row-major), marginals as a
// list of vectors, partitions as a list of 0-based axis lists. Output is written to a
// sibling temporary file and renamed into place.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "mmotdc/error.hpp"
#include "mmotdc/sinkhorn.hpp"
#include "mmotdc/tensor.hpp"

namespace mmotdc::io {

using nlohmann::json;

/// %.17g: enough digits for any double to round-trip.
inline std::string format_double(double x) {
  if (!std::isfinite(x)) {
    if (std::isnan(x)) return "nan";
    return x > 0 ? "inf" : "-inf";
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

inline void write_json(std::ostream& os, const json& j, int indent, int depth) {
  const std::string pad = indent > 0 ? std::string(static_cast<std::size_t>(indent * (depth + 1)), ' ') : "";
  const std::string close_pad = indent > 0 ? std::string(static_cast<std::size_t>(indent * depth), ' ') : "";
  const char* nl = indent > 0 ? "\n" : "";
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << '{' << nl;
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) os << ',' << nl;
        first = false;
        os << pad << json(it.key()).dump() << (indent > 0 ? ": " : ":");
        write_json(os, it.value(), indent, depth + 1);
      }
      os << nl << close_pad << '}';
      return;
    }
    case json::value_t::array: {
      // Numeric arrays stay on one line; they can be long.
      bool flat = true;
      for (const auto& v : j) flat = flat && v.is_primitive();
      if (j.empty() || flat) {
        os << '[';
        for (std::size_t i = 0; i < j.size(); ++i) {
          if (i) os << ',';
          write_json(os, j[i], 0, 0);
        }
        os << ']';
        return;
      }
      os << '[' << nl;
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) os << ',' << nl;
        os << pad;
        write_json(os, j[i], indent, depth + 1);
      }
      os << nl << close_pad << ']';
      return;
    }
    case json::value_t::number_float: {
      const double x = j.get<double>();
      if (!std::isfinite(x)) throw DomainError("cannot write a non-finite number to JSON");
      os << format_double(x);
      return;
    }
    default:
      os << j.dump();
  }
}

}  // namespace detail

/// JSON text with every float printed at 17 significant digits.
inline std::string dump(const json& j, int indent = 2) {
  std::ostringstream os;
  detail::write_json(os, j, indent, 0);
  os << '\n';
  return os.str();
}

/// Writes `content` to `path` through a temporary file and a rename, so readers never
/// observe a partial file.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
}

namespace detail {

inline double number_at(const json& arr, std::size_t i, const std::string& field) {
  const json& v = arr[i];
  if (!v.is_number()) throw ConfigError(field + "[" + std::to_string(i) + "] is not a number");
  return v.get<double>();
}

}  // namespace detail

inline DenseTensor tensor_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("tensor: expected an object with 'shape' and 'data'");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "shape" && it.key() != "data") throw ConfigError("tensor: unknown field '" + it.key() + "'");
  }
  if (!j.contains("shape") || !j["shape"].is_array()) throw ConfigError("tensor: 'shape' must be an array");
  if (!j.contains("data") || !j["data"].is_array()) throw ConfigError("tensor: 'data' must be an array");
  Shape shape;
  for (const json& a : j["shape"]) {
    if (!a.is_number_unsigned() || a.get<std::size_t>() == 0) {
      throw ConfigError("tensor: 'shape' entries must be positive integers");
    }
    shape.push_back(a.get<std::size_t>());
  }
  const json& data = j["data"];
  if (data.size() != shape_size(shape)) {
    throw ConfigError("tensor: 'data' has length " + std::to_string(data.size()) + " but shape " +
                      shape_string(shape) + " needs " + std::to_string(shape_size(shape)));
  }
  std::vector<double> values(data.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = detail::number_at(data, i, "data");
  return DenseTensor(std::move(shape), std::move(values));
}

inline json tensor_to_json(const DenseTensor& t) {
  json j;
  j["shape"] = t.shape();
  auto v = t.values();
  j["data"] = std::vector<double>(v.begin(), v.end());
  return j;
}

inline MarginalFamily marginals_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw ConfigError("marginals: expected a non-empty list of vectors");
  std::vector<std::vector<double>> out;
  for (std::size_t n = 0; n < j.size(); ++n) {
    const json& row = j[n];
    const std::string field = "marginals[" + std::to_string(n) + "]";
    if (!row.is_array() || row.empty()) throw ConfigError(field + " must be a non-empty list of numbers");
    std::vector<double> v(row.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = detail::number_at(row, k, field);
    out.push_back(std::move(v));
  }
  try {
    return MarginalFamily(std::move(out));
  } catch (const DomainError& e) {
    throw ConfigError(std::string("marginals: ") + e.what());
  }
}

inline json marginals_to_json(const MarginalFamily& mu) { return json(mu.all()); }

inline TuplePartition partition_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw ConfigError("partition: expected a non-empty list of axis lists");
  std::vector<std::vector<std::size_t>> lists;
  for (std::size_t m = 0; m < j.size(); ++m) {
    const json& block = j[m];
    const std::string field = "partition[" + std::to_string(m) + "]";
    if (!block.is_array() || block.empty()) throw ConfigError(field + " must be a non-empty list of axes");
    std::vector<std::size_t> axes;
    for (const json& a : block) {
      if (!a.is_number_unsigned()) throw ConfigError(field + " entries must be non-negative integers");
      axes.push_back(a.get<std::size_t>());
    }
    lists.push_back(std::move(axes));
  }
  return TuplePartition::from_lists(lists);
}

inline json duals_to_json(const DualPotentials& d) { return json(d.f); }

inline DualPotentials duals_from_json(const json& j) {
  if (!j.is_array()) throw ConfigError("duals: expected a list of vectors");
  DualPotentials d;
  for (std::size_t n = 0; n < j.size(); ++n) {
    const std::string field = "duals[" + std::to_string(n) + "]";
    if (!j[n].is_array()) throw ConfigError(field + " must be a list of numbers");
    std::vector<double> v(j[n].size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = detail::number_at(j[n], k, field);
    d.f.push_back(std::move(v));
  }
  return d;
}

inline DenseTensor read_tensor(const std::filesystem::path& path) {
  try {
    return tensor_from_json(read_json_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline MarginalFamily read_marginals(const std::filesystem::path& path) {
  try {
    return marginals_from_json(read_json_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline TuplePartition read_partition(const std::filesystem::path& path) {
  try {
    return partition_from_json(read_json_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline void write_tensor(const std::filesystem::path& path, const DenseTensor& t) {
  atomic_write(path, dump(tensor_to_json(t), 0));
}

/// Minimal CSV builder: a fixed header, then rows of preformatted cells.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  class Row {
   public:
    Row& operator<<(double x) { return push(format_double(x)); }
    Row& operator<<(const std::string& s) { return push(s); }
    Row& operator<<(const char* s) { return push(s); }
    Row& operator<<(bool b) { return push(b ? "1" : "0"); }
    template <class I>
      requires std::is_integral_v<I>
    Row& operator<<(I i) {
      return push(std::to_string(i));
    }

   private:
    friend class CsvTable;
    Row& push(std::string cell) {
      cells_.push_back(std::move(cell));
      return *this;
    }
    std::vector<std::string> cells_;
  };

  Row& row() {
    rows_.emplace_back();
    return rows_.back();
  }

  const std::vector<std::string>& header() const { return header_; }

  std::string str() const {
    std::string out = join(header_);
    for (const Row& r : rows_) {
      if (r.cells_.size() != header_.size()) throw std::logic_error("csv row width does not match header");
      out += join(r.cells_);
    }
    return out;
  }

  /// Same table as a JSON list of records (cells kept as their CSV text converted back to numbers where possible).
  json to_json() const {
    json out = json::array();
    for (const Row& r : rows_) {
      json rec = json::object();
      for (std::size_t c = 0; c < header_.size(); ++c) {
        const std::string& cell = r.cells_[c];
        char* end = nullptr;
        const double x = std::strtod(cell.c_str(), &end);
        if (!cell.empty() && end == cell.c_str() + cell.size() && std::isfinite(x)) {
          if (cell.find_first_of(".eE") == std::string::npos) rec[header_[c]] = std::stoll(cell);
          else rec[header_[c]] = x;
        } else {
          rec[header_[c]] = cell;
        }
      }
      out.push_back(std::move(rec));
    }
    return out;
  }

 private:
  static std::string join(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) line += ',';
      line += cells[i];
    }
    line += '\n';
    return line;
  }

  std::vector<std::string> header_;
  std::list<Row> rows_;
};

}  // namespace mmotdc::io
