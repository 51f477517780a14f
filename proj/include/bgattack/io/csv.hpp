#pragma once

#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "bgattack/attack.hpp"
#include "bgattack/errors.hpp"
#include "bgattack/io/file.hpp"
#include "bgattack/metrics.hpp"

namespace bgattack::io {

inline constexpr const char* kTraceHeader = "t,l_obj,l_box,l_tv,total,grad_sq_norm,e_of_t,lr";
inline constexpr const char* kMetricsHeader = "metric,clean,attack,asr";

/// Fixed 9-significant-digit formatting.
inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string trace_to_csv(const ConvergenceTrace& trace) {
  std::string out = std::string(kTraceHeader) + "\n";
  for (const auto& r : trace.records) {
    out += std::to_string(r.t);
    for (double v : {r.l_obj, r.l_box, r.l_tv, r.total, r.grad_sq_norm, r.e_of_t, r.lr}) {
      out += ',' + format_number(v);
    }
    out += '\n';
  }
  return out;
}

/// Parses a trace CSV. Epoch information is not stored, so records come back
/// with epoch 0.
inline ConvergenceTrace trace_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) {
    throw FormatError("trace CSV must start with header '" + std::string(kTraceHeader) + "'", 0);
  }
  ConvergenceTrace trace;
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    std::istringstream row(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(row, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("bad number '" + cell + "' in trace CSV", offset);
      }
    }
    if (v.size() != 8) throw FormatError("trace CSV rows need 8 columns", offset);
    TraceRecord r;
    r.t = static_cast<std::size_t>(v[0]);
    r.l_obj = v[1];
    r.l_box = v[2];
    r.l_tv = v[3];
    r.total = v[4];
    r.grad_sq_norm = v[5];
    r.e_of_t = v[6];
    r.lr = v[7];
    trace.records.push_back(r);
    offset += line.size() + 1;
  }
  return trace;
}

struct MetricRow {
  std::string metric;
  double clean = 0.0;
  double attack = 0.0;
};

/// ASR column is "nan" when the clean value is 0.
inline std::string metrics_to_csv(const std::vector<MetricRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    const std::string asr =
        r.clean > 0.0 ? format_number(attack_success_rate(r.clean, r.attack)) : "nan";
    out += r.metric + ',' + format_number(r.clean) + ',' + format_number(r.attack) + ',' + asr + '\n';
  }
  return out;
}

}  // namespace bgattack::io
