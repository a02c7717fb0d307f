#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "dsml/common.hpp"
#include "dsml/config.hpp"
#include "dsml/dataset.hpp"
#include "dsml/evaluator.hpp"
#include "dsml/tensor.hpp"

namespace dsml {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double_strict(const std::string& s, std::size_t line_no,
                                  const std::string& column) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  const char* tail = e;
  while (tail > b && (tail[-1] == ' ' || tail[-1] == '\t')) --tail;
  const auto [ptr, ec] = std::from_chars(b, tail, v);
  if (ec != std::errc() || ptr != tail || b == tail)
    throw DataError("line " + std::to_string(line_no) + ": field '" + column +
                    "': not a number: '" + s + "'");
  if (!std::isfinite(v))
    throw DataError("line " + std::to_string(line_no) + ": field '" + column +
                    "': non-finite value");
  return v;
}

// %.17g prints doubles losslessly and deterministically
inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Rectangular numeric CSV with a header row; the named label column holds
// class names, every other column is a feature. Labels map to dense indices
// in first-appearance order.
inline Dataset load_csv(const std::string& path,
                        const std::string& label_column) {
  std::ifstream f(path);
  if (!f) throw DataError("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line))
    throw DataError("load_csv: " + path + " is empty (no header row)");
  const std::vector<std::string> header = detail::split_csv_line(line);
  long label_idx = -1;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == label_column) label_idx = static_cast<long>(i);
  if (label_idx < 0)
    throw DataError("load_csv: missing label column '" + label_column +
                    "' in " + path);

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::vector<std::string> label_names;
  std::unordered_map<std::string, int> label_map;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    std::vector<double> feat;
    feat.reserve(header.size() - 1);
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (static_cast<long>(i) == label_idx) continue;
      feat.push_back(detail::parse_double_strict(fields[i], line_no,
                                                 header[i]));
    }
    const std::string& name = fields[label_idx];
    auto it = label_map.find(name);
    if (it == label_map.end()) {
      it = label_map.emplace(name, static_cast<int>(label_names.size())).first;
      label_names.push_back(name);
    }
    labels.push_back(it->second);
    rows.push_back(std::move(feat));
  }
  if (rows.empty())
    throw DataError("load_csv: " + path + " has a header but no data rows");
  Dataset ds;
  ds.features = Tensor::from_rows(rows);
  ds.labels = std::move(labels);
  ds.label_names = std::move(label_names);
  return ds;
}

inline void write_csv(const Dataset& ds, const std::string& path,
                      const std::string& label_column = "label") {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("write_csv: cannot open " + path);
  for (std::size_t j = 0; j < ds.dim(); ++j) f << "f" << j << ",";
  f << label_column << "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.dim(); ++j)
      f << detail::fmt_double(ds.features(i, j)) << ",";
    f << ds.label_names[ds.labels[i]] << "\n";
  }
}

inline Dataset load_dataset(const DatasetSpec& spec) {
  spec.validate();
  if (spec.source == "csv") return load_csv(spec.csv_path, spec.label_column);
  return generate_synthetic(spec.synthetic);
}

// ---------------------------------------------------------------------------
// Result and manifest writers.
// ---------------------------------------------------------------------------

inline nlohmann::json retrieval_to_json(const RetrievalResult& r,
                                        std::uint64_t seed) {
  nlohmann::json rec;
  for (const auto& [k, v] : r.recall_at) rec[std::to_string(k)] = v;
  return nlohmann::json{
      {"scorer", r.scorer},
      {"seed", seed},
      {"recall", rec},
      {"skipped", r.skipped},
      {"scored_queries", r.scored_queries},
  };
}

inline void write_retrieval_csv(const RetrievalResult& r,
                                const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("write_retrieval_csv: cannot open " + path);
  f << "k,recall\n";
  for (const auto& [k, v] : r.recall_at)
    f << k << "," << detail::fmt_double(v) << "\n";
}

inline void write_loss_log_csv(const std::vector<LossRow>& log,
                               const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("write_loss_log_csv: cannot open " + path);
  f << "epoch,l_ce,l_tri,l_hinge,l_total\n";
  for (const LossRow& row : log)
    f << row.epoch << "," << detail::fmt_double(row.mean.ce) << ","
      << detail::fmt_double(row.mean.tri) << ","
      << detail::fmt_double(row.mean.hinge) << ","
      << detail::fmt_double(row.mean.total) << "\n";
}

inline void write_ablation_csv(const AblationResult& ab,
                               const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("write_ablation_csv: cannot open " + path);
  f << "fraction,dissim_r1_median,euclid_r1_median,delta_median\n";
  for (const AblationRow& r : ab.rows)
    f << detail::fmt_double(r.fraction) << ","
      << detail::fmt_double(r.dissim_median) << ","
      << detail::fmt_double(r.euclid_median) << ","
      << detail::fmt_double(r.delta_median) << "\n";
}

inline void write_ablation_cells_csv(const AblationResult& ab,
                                     const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("write_ablation_cells_csv: cannot open " + path);
  f << "fraction,seed,dissim_r1,euclid_r1,delta\n";
  for (const AblationCell& c : ab.cells)
    f << detail::fmt_double(c.fraction) << "," << c.seed << ","
      << detail::fmt_double(c.r1_dissim) << ","
      << detail::fmt_double(c.r1_euclid) << ","
      << detail::fmt_double(c.r1_dissim - c.r1_euclid) << "\n";
}

inline void write_projection_csv(const ProjectionExport& p,
                                 const std::string& path) {
  if (p.kinds.size() != p.coords.rows() || p.labels.size() != p.coords.rows())
    throw ShapeError("write_projection_csv: kinds/labels size mismatch");
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("write_projection_csv: cannot open " + path);
  f << "x,y,kind,label\n";
  for (std::size_t i = 0; i < p.coords.rows(); ++i)
    f << detail::fmt_double(p.coords(i, 0)) << ","
      << detail::fmt_double(p.coords(i, 1)) << "," << p.kinds[i] << ","
      << p.labels[i] << "\n";
}

// Every emitted result references the manifest that produced it.
inline nlohmann::json make_manifest(const TrainConfig& cfg,
                                    const DatasetSpec& data,
                                    const std::vector<std::string>& artifacts,
                                    std::uint64_t seed) {
  return nlohmann::json{
      {"tool_version", kToolVersion},
      {"seed", seed},
      {"train_config", to_json(cfg)},
      {"dataset", to_json(data)},
      {"artifacts", artifacts},
  };
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("write_json: cannot open " + path);
  f << j.dump(2) << "\n";
}

}  // namespace dsml
