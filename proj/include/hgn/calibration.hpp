#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "hgn/trace.hpp"
#include "hgn/types.hpp"

namespace hgn {

// All transforms operate on ln(p) with a 1e-12 floor rather than raw logits;
// traces store probabilities, and softmax shift-invariance (or the Dirichlet
// bias term) absorbs the per-sample offset between the two.

struct Identity {};

struct Temperature {
  Scalar t = 1.0;  // > 0
};

struct DirichletMap {
  Mat w;  // C x C
  Vec b;  // C
  Scalar lambda = 1e-3;
};

// Affine-in-density temperature: T(x) = clamp(t0 + w * s(x), [0.05, 20])
// where s(x) is the mean Euclidean distance from x's features to the k
// nearest reference features.
struct DensityAware {
  Scalar t0 = 1.0;
  Scalar w = 0.0;
  int k = 1;
  Mat reference_features;  // one calibration sample per row
};

// Top-label binning: the top confidence is remapped to its bin's empirical
// top-1 accuracy; empty bins inherit the bin midpoint.
struct HistogramBinning {
  int num_bins = 1;
  std::vector<Scalar> remap;
};

using CalibrationModel =
    std::variant<Identity, Temperature, DirichletMap, DensityAware, HistogramBinning>;

struct FitReport {
  std::string method;
  Scalar final_nll = 0.0;  // on the calibration split
  Scalar ece_before = 0.0;
  Scalar ece_after = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string note;
};

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mean of -ln(p[ground_truth]) over the trace, probabilities floored.
Scalar nll(const Trace& trace);

std::pair<Temperature, FitReport> fit_temperature(const Trace& cal);
Vec apply_temperature(const Temperature& model, const Vec& probs);

std::pair<DirichletMap, FitReport> fit_dirichlet(const Trace& cal, Scalar lambda = 1e-3);
Vec apply_dirichlet(const DirichletMap& model, const Vec& probs);

std::pair<DensityAware, FitReport> fit_dac(const Trace& cal, int k, bool pin_w = false);
Vec apply_dac(const DensityAware& model, const Vec& probs, const Vec& features);

HistogramBinning fit_histogram_binning(const Trace& cal, int num_bins);
Vec apply_histogram_binning(const HistogramBinning& model, const Vec& probs);

// Dispatch on the variant; DAC reads the record's features.
Vec apply(const CalibrationModel& model, const PredictionRecord& record);

// Objective for Dirichlet fitting: NLL + lambda * (mean squared off-diagonal
// of W + mean squared b). Gradients are analytic; exposed so tests can check
// them against finite differences. logp is n x C, one floored-log row per
// sample.
Scalar dirichlet_objective(const Mat& logp, const std::vector<int>& labels, const Mat& w,
                           const Vec& b, Scalar lambda, Mat* grad_w = nullptr,
                           Vec* grad_b = nullptr);

// Deterministic seeded shuffle split: first floor(fit_fraction * n) shuffled
// indices fit, the rest evaluate.
struct SplitIndices {
  std::vector<std::size_t> fit;
  std::vector<std::size_t> eval;
};
SplitIndices fit_eval_split(std::size_t n, Scalar fit_fraction, std::uint64_t seed);

enum class CalMethod { None, Ts, Dc, Dac, Hist };
const char* to_string(CalMethod m);
CalMethod cal_method_from_string(const std::string& s);

struct CalibrateOptions {
  Scalar fit_split = 0.5;
  std::uint64_t seed = 0;
  Scalar lambda = 1e-3;  // Dirichlet regularization
  int hist_bins = 10;
  int knn = 10;          // DAC neighbor count
  int report_bins = 10;  // bin count for the report's ECE numbers
};

struct CalibrateResult {
  Trace trace;  // evaluation-partition records transformed, fit partition untouched
  CalibrationModel model;
  FitReport report;  // ece_before/ece_after measured on the evaluation partition
  SplitIndices split;
};

CalibrateResult calibrate_trace(const Trace& trace, CalMethod method,
                                const CalibrateOptions& opt = {});

void save_model(const CalibrationModel& model, const std::string& path);
CalibrationModel load_model(const std::string& path);

}  // namespace hgn
