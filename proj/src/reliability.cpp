#include "hgn/reliability.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hgn {

int assign_bin(Scalar conf, int num_bins) {
  if (num_bins < 1) throw std::invalid_argument("num_bins must be >= 1");
  if (!(conf >= 0.0 && conf <= 1.0))
    throw std::invalid_argument("confidence " + std::to_string(conf) + " outside [0,1]");
  const int k = static_cast<int>(std::ceil(conf * num_bins)) - 1;
  return std::min(std::max(k, 0), num_bins - 1);
}

ReliabilityReport bin_stats(const Trace& trace, int num_bins) {
  if (trace.empty()) throw TraceError("bin_stats: empty trace");
  ReliabilityReport rep;
  rep.num_bins = num_bins;
  rep.n = trace.size();
  rep.bins.resize(num_bins);

  // long double accumulators keep the grouped sums within 1e-12 of a
  // record-level recomputation
  std::vector<long double> conf_sum(num_bins, 0.0L);
  std::vector<long double> acc_sum(num_bins, 0.0L);
  std::vector<std::size_t> count(num_bins, 0);

  for (const auto& r : trace.records) {
    const TopConfidence tc = top_confidence(r.edge_probs);
    const int k = assign_bin(tc.confidence, num_bins);
    conf_sum[k] += tc.confidence;
    acc_sum[k] += (tc.class_index == r.ground_truth) ? 1.0L : 0.0L;
    ++count[k];
  }

  long double ece_acc = 0.0L;
  bool any_over = false, any_under = false, any_equal = false;
  for (int k = 0; k < num_bins; ++k) {
    ReliabilityBin& b = rep.bins[k];
    b.lower = static_cast<Scalar>(k) / num_bins;
    b.upper = static_cast<Scalar>(k + 1) / num_bins;
    b.count = count[k];
    if (count[k] == 0) continue;
    b.mean_confidence = static_cast<Scalar>(conf_sum[k] / count[k]);
    b.accuracy = static_cast<Scalar>(acc_sum[k] / count[k]);
    ece_acc += static_cast<long double>(count[k]) / rep.n *
               std::abs(static_cast<long double>(b.accuracy) - b.mean_confidence);
    if (b.mean_confidence > b.accuracy)
      any_over = true;
    else if (b.mean_confidence < b.accuracy)
      any_under = true;
    else
      any_equal = true;
  }
  rep.ece = static_cast<Scalar>(ece_acc);
  if (any_over && !any_under && !any_equal)
    rep.tendency = CalibrationTendency::OverConfident;
  else if (any_under && !any_over && !any_equal)
    rep.tendency = CalibrationTendency::UnderConfident;
  else
    rep.tendency = CalibrationTendency::Mixed;
  return rep;
}

Scalar ece(const ReliabilityReport& report) {
  long double acc = 0.0L;
  for (const auto& b : report.bins) {
    if (b.count == 0) continue;
    acc += static_cast<long double>(b.count) / report.n *
           std::abs(static_cast<long double>(b.accuracy) - b.mean_confidence);
  }
  return static_cast<Scalar>(acc);
}

namespace {

std::string fmt(Scalar v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

void export_reliability(const ReliabilityReport& report, std::ostream& out) {
  out << "bin_lower,bin_upper,count,mean_conf,accuracy\n";
  for (const auto& b : report.bins) {
    out << fmt(b.lower) << "," << fmt(b.upper) << "," << b.count << ",";
    if (b.count > 0)
      out << fmt(b.mean_confidence) << "," << fmt(b.accuracy);
    else
      out << ",";
    out << "\n";
  }
  out << "ECE," << fmt(report.ece) << "\n";
}

std::string export_reliability(const ReliabilityReport& report) {
  std::ostringstream ss;
  export_reliability(report, ss);
  return ss.str();
}

ReliabilityReport parse_reliability(std::istream& in) {
  ReliabilityReport rep;
  std::string line;
  std::getline(in, line);  // header
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.rfind("ECE,", 0) == 0) {
      rep.ece = std::stod(line.substr(4));
      break;
    }
    ReliabilityBin b;
    std::istringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    b.lower = std::stod(cell);
    std::getline(ss, cell, ',');
    b.upper = std::stod(cell);
    std::getline(ss, cell, ',');
    b.count = static_cast<std::size_t>(std::stoull(cell));
    std::getline(ss, cell, ',');
    if (!cell.empty()) b.mean_confidence = std::stod(cell);
    std::getline(ss, cell, ',');
    if (!cell.empty()) b.accuracy = std::stod(cell);
    n += b.count;
    rep.bins.push_back(b);
  }
  rep.num_bins = static_cast<int>(rep.bins.size());
  rep.n = n;
  return rep;
}

}  // namespace hgn
