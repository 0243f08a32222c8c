#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "hgn/trace.hpp"
#include "hgn/types.hpp"

namespace hgn {

struct ReliabilityBin {
  Scalar lower = 0.0;
  Scalar upper = 0.0;
  std::size_t count = 0;
  Scalar mean_confidence = 0.0;  // conf(B_k); 0 when the bin is empty
  Scalar accuracy = 0.0;         // acc(B_k); 0 when the bin is empty
};

enum class CalibrationTendency { Mixed, OverConfident, UnderConfident };

struct ReliabilityReport {
  int num_bins = 0;
  std::vector<ReliabilityBin> bins;
  Scalar ece = 0.0;
  std::size_t n = 0;
  // Over-confident when conf(B_k) > acc(B_k) for every occupied bin,
  // under-confident in the symmetric case.
  CalibrationTendency tendency = CalibrationTendency::Mixed;
};

// Equal-width bins over (0,1], half-open low edges; conf <= 1/K folds into
// bin 0. Throws on conf outside [0,1].
int assign_bin(Scalar conf, int num_bins);

// Per-bin mean top confidence and top-1 accuracy over the trace, plus ECE.
// Empty bins carry count 0 and weight 0 in the ECE sum.
ReliabilityReport bin_stats(const Trace& trace, int num_bins);

// Recomputes ECE from the stored bins: sum_k (|B_k|/n) |acc - conf|.
Scalar ece(const ReliabilityReport& report);

// CSV rows: bin_lower,bin_upper,count,mean_conf,accuracy with a final
// "ECE,<value>" footer. Empty bins render blank conf/acc cells.
void export_reliability(const ReliabilityReport& report, std::ostream& out);
std::string export_reliability(const ReliabilityReport& report);
ReliabilityReport parse_reliability(std::istream& in);

}  // namespace hgn
