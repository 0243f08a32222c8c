#include "hgn/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hgn/random.hpp"
#include "hgn/reliability.hpp"
#include "json.hpp"

namespace hgn {

using nlohmann::json;

namespace {

constexpr Scalar kTempLo = 0.05;
constexpr Scalar kTempHi = 20.0;

Vec floored_log(const Vec& probs) {
  Vec out(probs.size());
  for (Index i = 0; i < probs.size(); ++i) out[i] = std::log(std::max(probs[i], kLogFloor));
  return out;
}

Vec softmax(const Vec& z) {
  const Scalar m = z.maxCoeff();
  Vec e = (z.array() - m).exp();
  return e / e.sum();
}

Scalar log_sum_exp(const Vec& z) {
  const Scalar m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

Mat logp_matrix(const Trace& trace) {
  const Index n = static_cast<Index>(trace.size());
  const Index C = trace.num_classes;
  Mat logp(n, C);
  for (Index i = 0; i < n; ++i) logp.row(i) = floored_log(trace.records[i].edge_probs).transpose();
  return logp;
}

std::vector<int> labels_of(const Trace& trace) {
  std::vector<int> y;
  y.reserve(trace.size());
  for (const auto& r : trace.records) y.push_back(r.ground_truth);
  return y;
}

Scalar temperature_nll(const Mat& logp, const std::vector<int>& y, Scalar t) {
  const Index n = logp.rows();
  Scalar acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Vec z = logp.row(i).transpose() / t;
    acc += log_sum_exp(z) - z[y[static_cast<std::size_t>(i)]];
  }
  return acc / static_cast<Scalar>(n);
}

struct GoldenResult {
  Scalar x = 0.0;
  Scalar fx = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Golden-section minimization; valid because every objective passed in here
// is unimodal over its bracket.
template <typename F>
GoldenResult golden_min(F&& f, Scalar lo, Scalar hi, Scalar tol, int max_iter = 200) {
  constexpr Scalar invphi = 0.6180339887498949;
  Scalar a = lo, b = hi;
  Scalar c = b - invphi * (b - a);
  Scalar d = a + invphi * (b - a);
  Scalar fc = f(c), fd = f(d);
  GoldenResult res;
  while (b - a > tol && res.iterations < max_iter) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = f(d);
    }
    ++res.iterations;
  }
  res.converged = (b - a) <= tol;
  res.x = 0.5 * (a + b);
  res.fx = f(res.x);
  return res;
}

}  // namespace

Scalar nll(const Trace& trace) {
  if (trace.empty()) throw CalibrationError("nll: empty trace");
  Scalar acc = 0.0;
  for (const auto& r : trace.records)
    acc -= std::log(std::max(r.edge_probs[r.ground_truth], kLogFloor));
  return acc / static_cast<Scalar>(trace.size());
}

// ---------------------------------------------------------------------------
// Temperature scaling

std::pair<Temperature, FitReport> fit_temperature(const Trace& cal) {
  if (cal.empty()) throw CalibrationError("fit_temperature: empty trace");
  const Mat logp = logp_matrix(cal);
  const std::vector<int> y = labels_of(cal);

  auto f = [&](Scalar t) { return temperature_nll(logp, y, t); };
  GoldenResult g = golden_min(f, kTempLo, kTempHi, 1e-4);

  // golden-section lands within tolerance of the minimum; never worse than T=1
  const Scalar f1 = f(1.0);
  if (f1 < g.fx) {
    g.x = 1.0;
    g.fx = f1;
  }

  FitReport rep;
  rep.method = "ts";
  rep.final_nll = g.fx;
  rep.iterations = g.iterations;
  rep.converged = g.converged;
  return {Temperature{g.x}, rep};
}

Vec apply_temperature(const Temperature& model, const Vec& probs) {
  if (model.t <= 0.0) throw CalibrationError("temperature must be positive");
  return softmax(floored_log(probs) / model.t);
}

// ---------------------------------------------------------------------------
// Dirichlet calibration: q = softmax(W ln p + b)

Scalar dirichlet_objective(const Mat& logp, const std::vector<int>& labels, const Mat& w,
                           const Vec& b, Scalar lambda, Mat* grad_w, Vec* grad_b) {
  const Index n = logp.rows();
  const Index C = logp.cols();
  Mat z = logp * w.transpose();
  z.rowwise() += b.transpose();

  Scalar nll_acc = 0.0;
  Mat residual;  // q - onehot(y), only materialized when gradients are wanted
  if (grad_w || grad_b) residual.resize(n, C);
  for (Index i = 0; i < n; ++i) {
    const Vec zi = z.row(i).transpose();
    const Scalar lse = log_sum_exp(zi);
    nll_acc += lse - zi[labels[static_cast<std::size_t>(i)]];
    if (grad_w || grad_b) {
      Vec q = (zi.array() - lse).exp();
      q[labels[static_cast<std::size_t>(i)]] -= 1.0;
      residual.row(i) = q.transpose();
    }
  }
  const Scalar nll_mean = nll_acc / static_cast<Scalar>(n);

  const Scalar off_cells = static_cast<Scalar>(C) * static_cast<Scalar>(C - 1);
  Scalar off_sq = w.array().square().sum() - w.diagonal().array().square().sum();
  const Scalar reg = lambda * (off_sq / off_cells + b.squaredNorm() / static_cast<Scalar>(C));

  if (grad_w) {
    *grad_w = residual.transpose() * logp / static_cast<Scalar>(n);
    Mat wreg = 2.0 * lambda / off_cells * w;
    wreg.diagonal().setZero();
    *grad_w += wreg;
  }
  if (grad_b)
    *grad_b = residual.colwise().sum().transpose() / static_cast<Scalar>(n) +
              2.0 * lambda / static_cast<Scalar>(C) * b;

  return nll_mean + reg;
}

std::pair<DirichletMap, FitReport> fit_dirichlet(const Trace& cal, Scalar lambda) {
  if (cal.empty()) throw CalibrationError("fit_dirichlet: empty trace");
  const Mat logp = logp_matrix(cal);
  const std::vector<int> y = labels_of(cal);
  const Index C = logp.cols();

  Mat w = Mat::Identity(C, C);
  Vec b = Vec::Zero(C);

  constexpr int kMaxIter = 2000;
  constexpr Scalar kRelTol = 1e-6;
  constexpr Scalar kArmijo = 1e-4;

  Mat gw(C, C);
  Vec gb(C);
  Scalar value = dirichlet_objective(logp, y, w, b, lambda, &gw, &gb);

  FitReport rep;
  rep.method = "dc";
  int iter = 0;
  for (; iter < kMaxIter; ++iter) {
    const Scalar gnorm2 = gw.squaredNorm() + gb.squaredNorm();
    if (gnorm2 < 1e-24) {
      rep.converged = true;
      break;
    }
    Scalar step = 1.0;
    Mat w_next;
    Vec b_next;
    Scalar v_next = value;
    bool accepted = false;
    while (step > 1e-14) {
      w_next = w - step * gw;
      b_next = b - step * gb;
      v_next = dirichlet_objective(logp, y, w_next, b_next, lambda);
      if (v_next <= value - kArmijo * step * gnorm2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      rep.converged = true;  // no descent direction left at floating-point scale
      break;
    }
    const Scalar rel = (value - v_next) / std::max(std::abs(value), 1e-12);
    w = std::move(w_next);
    b = std::move(b_next);
    value = dirichlet_objective(logp, y, w, b, lambda, &gw, &gb);
    if (rel < kRelTol) {
      rep.converged = true;
      ++iter;
      break;
    }
  }
  rep.iterations = iter;

  DirichletMap model{std::move(w), std::move(b), lambda};
  // report the NLL term alone, comparable with the other methods
  Trace transformed = cal;
  for (auto& r : transformed.records) r.edge_probs = apply_dirichlet(model, r.edge_probs);
  rep.final_nll = nll(transformed);
  return {std::move(model), rep};
}

Vec apply_dirichlet(const DirichletMap& model, const Vec& probs) {
  if (model.w.rows() != probs.size() || model.w.cols() != probs.size())
    throw CalibrationError("dirichlet: W is " + std::to_string(model.w.rows()) + "x" +
                           std::to_string(model.w.cols()) + " but probs has " +
                           std::to_string(probs.size()) + " classes");
  return softmax(model.w * floored_log(probs) + model.b);
}

// ---------------------------------------------------------------------------
// Density-aware calibration

namespace {

Mat feature_matrix(const Trace& trace) {
  const Index n = static_cast<Index>(trace.size());
  Index dim = -1;
  for (const auto& r : trace.records) {
    if (!r.features.has_value())
      throw CalibrationError("fit_dac: record \"" + r.sample_id + "\" has no features");
    if (dim < 0) dim = r.features->size();
  }
  Mat f(n, dim);
  for (Index i = 0; i < n; ++i) f.row(i) = trace.records[i].features->transpose();
  return f;
}

// Mean Euclidean distance from `query` to its k nearest rows of `ref`,
// optionally skipping one row (self-exclusion during fitting). Ties resolve
// by row index, keeping the selection deterministic.
Scalar mean_knn_distance(const Mat& ref, const Vec& query, int k, Index skip = -1) {
  std::vector<std::pair<Scalar, Index>> dist;
  dist.reserve(ref.rows());
  for (Index j = 0; j < ref.rows(); ++j) {
    if (j == skip) continue;
    dist.emplace_back((ref.row(j).transpose() - query).norm(), j);
  }
  const auto kth = dist.begin() + std::min<std::size_t>(k, dist.size());
  std::nth_element(dist.begin(), kth - 1, dist.end());
  Scalar acc = 0.0;
  for (auto it = dist.begin(); it != kth; ++it) acc += it->first;
  return acc / static_cast<Scalar>(kth - dist.begin());
}

Scalar clamp_temp(Scalar t) { return std::min(std::max(t, kTempLo), kTempHi); }

Scalar dac_nll(const Mat& logp, const std::vector<int>& y, const Vec& density, Scalar t0,
               Scalar w) {
  const Index n = logp.rows();
  Scalar acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Scalar t = clamp_temp(t0 + w * density[i]);
    const Vec z = logp.row(i).transpose() / t;
    acc += log_sum_exp(z) - z[y[static_cast<std::size_t>(i)]];
  }
  return acc / static_cast<Scalar>(n);
}

}  // namespace

std::pair<DensityAware, FitReport> fit_dac(const Trace& cal, int k, bool pin_w) {
  if (cal.empty()) throw CalibrationError("fit_dac: empty trace");
  if (k < 1 || static_cast<std::size_t>(k) >= cal.size())
    throw CalibrationError("fit_dac: need 1 <= k < trace size, got k=" + std::to_string(k));

  const Mat features = feature_matrix(cal);
  const Mat logp = logp_matrix(cal);
  const std::vector<int> y = labels_of(cal);
  const Index n = logp.rows();

  Vec density(n);
  for (Index i = 0; i < n; ++i)
    density[i] = mean_knn_distance(features, features.row(i).transpose(), k, i);
  const Scalar max_density = density.maxCoeff();

  FitReport rep;
  rep.method = "dac";
  Scalar t0 = 1.0, w = 0.0;
  Scalar value = dac_nll(logp, y, density, t0, w);

  const bool w_identifiable = max_density > 0.0 && !pin_w;
  if (max_density <= 0.0)
    rep.note = "degenerate: all calibration features identical, w pinned to 0";
  // bracket w so that w * s spans the full temperature range
  const Scalar w_hi = w_identifiable ? kTempHi / max_density : 0.0;

  constexpr Scalar kJointRelTol = 1e-5;
  constexpr int kMaxRounds = 100;
  int rounds = 0;
  rep.converged = false;
  for (; rounds < kMaxRounds; ++rounds) {
    const Scalar round_start = value;

    GoldenResult gt = golden_min(
        [&](Scalar cand) { return dac_nll(logp, y, density, cand, w); }, kTempLo, kTempHi, 1e-4);
    if (gt.fx < value) {
      t0 = gt.x;
      value = gt.fx;
    }

    if (w_identifiable) {
      GoldenResult gw = golden_min(
          [&](Scalar cand) { return dac_nll(logp, y, density, t0, cand); }, -w_hi, w_hi,
          2.0 * w_hi * 5e-6);
      if (gw.fx < value) {
        w = gw.x;
        value = gw.fx;
      }
    }

    const Scalar rel = (round_start - value) / std::max(std::abs(round_start), 1e-12);
    if (rel < kJointRelTol) {
      rep.converged = true;
      ++rounds;
      break;
    }
  }

  rep.iterations = rounds;
  rep.final_nll = value;
  return {DensityAware{t0, w, k, features}, rep};
}

Vec apply_dac(const DensityAware& model, const Vec& probs, const Vec& features) {
  if (features.size() != model.reference_features.cols())
    throw CalibrationError("apply_dac: feature dimension " + std::to_string(features.size()) +
                           " does not match reference dimension " +
                           std::to_string(model.reference_features.cols()));
  const Scalar s = mean_knn_distance(model.reference_features, features, model.k);
  const Scalar t = clamp_temp(model.t0 + model.w * s);
  return softmax(floored_log(probs) / t);
}

// ---------------------------------------------------------------------------
// Histogram binning

HistogramBinning fit_histogram_binning(const Trace& cal, int num_bins) {
  if (cal.empty()) throw CalibrationError("fit_histogram_binning: empty trace");
  if (num_bins < 1) throw CalibrationError("fit_histogram_binning: need at least one bin");

  std::vector<std::size_t> count(num_bins, 0), correct(num_bins, 0);
  for (const auto& r : cal.records) {
    const TopConfidence tc = top_confidence(r.edge_probs);
    const int k = assign_bin(tc.confidence, num_bins);
    ++count[k];
    if (tc.class_index == r.ground_truth) ++correct[k];
  }

  HistogramBinning model;
  model.num_bins = num_bins;
  model.remap.resize(num_bins);
  for (int k = 0; k < num_bins; ++k)
    model.remap[k] = count[k] > 0
                         ? static_cast<Scalar>(correct[k]) / static_cast<Scalar>(count[k])
                         : (k + 0.5) / num_bins;  // empty bins inherit the midpoint
  return model;
}

Vec apply_histogram_binning(const HistogramBinning& model, const Vec& probs) {
  const TopConfidence tc = top_confidence(probs);
  const Scalar remapped = model.remap[assign_bin(tc.confidence, model.num_bins)];
  const Index C = probs.size();
  if (C == 1) return probs;

  Vec out(C);
  const Scalar rest = 1.0 - tc.confidence;
  for (Index i = 0; i < C; ++i) {
    if (static_cast<int>(i) == tc.class_index)
      out[i] = remapped;
    else if (rest > 1e-15)
      out[i] = probs[i] * (1.0 - remapped) / rest;
    else
      out[i] = (1.0 - remapped) / static_cast<Scalar>(C - 1);
  }
  return out;
}

// ---------------------------------------------------------------------------

Vec apply(const CalibrationModel& model, const PredictionRecord& record) {
  return std::visit(
      [&](const auto& m) -> Vec {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, Identity>) {
          return record.edge_probs;
        } else if constexpr (std::is_same_v<M, Temperature>) {
          return apply_temperature(m, record.edge_probs);
        } else if constexpr (std::is_same_v<M, DirichletMap>) {
          return apply_dirichlet(m, record.edge_probs);
        } else if constexpr (std::is_same_v<M, DensityAware>) {
          if (!record.features.has_value())
            throw CalibrationError("apply: record \"" + record.sample_id +
                                   "\" has no features (required by density-aware calibration)");
          return apply_dac(m, record.edge_probs, *record.features);
        } else {
          return apply_histogram_binning(m, record.edge_probs);
        }
      },
      model);
}

SplitIndices fit_eval_split(std::size_t n, Scalar fit_fraction, std::uint64_t seed) {
  if (fit_fraction <= 0.0 || fit_fraction >= 1.0)
    throw CalibrationError("fit_split must lie strictly between 0 and 1");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng::Engine g = rng::engine_for(seed, 0x5p117);
  for (std::size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng::below(g, i))]);

  std::size_t n_fit = static_cast<std::size_t>(std::llround(fit_fraction * static_cast<Scalar>(n)));
  if (n >= 2) n_fit = std::min(std::max<std::size_t>(n_fit, 1), n - 1);

  SplitIndices split;
  split.fit.assign(idx.begin(), idx.begin() + n_fit);
  split.eval.assign(idx.begin() + n_fit, idx.end());
  return split;
}

const char* to_string(CalMethod m) {
  switch (m) {
    case CalMethod::None: return "none";
    case CalMethod::Ts: return "ts";
    case CalMethod::Dc: return "dc";
    case CalMethod::Dac: return "dac";
    case CalMethod::Hist: return "hist";
  }
  return "?";
}

CalMethod cal_method_from_string(const std::string& s) {
  if (s == "none") return CalMethod::None;
  if (s == "ts") return CalMethod::Ts;
  if (s == "dc") return CalMethod::Dc;
  if (s == "dac") return CalMethod::Dac;
  if (s == "hist") return CalMethod::Hist;
  throw CalibrationError("unknown calibration method \"" + s +
                         "\" (expected none|ts|dc|dac|hist)");
}

CalibrateResult calibrate_trace(const Trace& trace, CalMethod method,
                                const CalibrateOptions& opt) {
  if (trace.empty()) throw CalibrationError("calibrate_trace: empty trace");

  CalibrateResult res;
  res.split = fit_eval_split(trace.size(), opt.fit_split, opt.seed);
  res.trace = trace;

  Trace fit_part, eval_part;
  fit_part.num_classes = eval_part.num_classes = trace.num_classes;
  for (std::size_t i : res.split.fit) fit_part.records.push_back(trace.records[i]);
  for (std::size_t i : res.split.eval) eval_part.records.push_back(trace.records[i]);

  switch (method) {
    case CalMethod::None:
      res.model = Identity{};
      res.report.method = "none";
      res.report.converged = true;
      res.report.final_nll = nll(fit_part);
      break;
    case CalMethod::Ts: {
      auto [m, rep] = fit_temperature(fit_part);
      res.model = m;
      res.report = rep;
      break;
    }
    case CalMethod::Dc: {
      auto [m, rep] = fit_dirichlet(fit_part, opt.lambda);
      res.model = std::move(m);
      res.report = rep;
      break;
    }
    case CalMethod::Dac: {
      auto [m, rep] = fit_dac(fit_part, opt.knn);
      res.model = std::move(m);
      res.report = rep;
      break;
    }
    case CalMethod::Hist: {
      res.model = fit_histogram_binning(fit_part, opt.hist_bins);
      res.report.method = "hist";
      res.report.converged = true;
      break;
    }
  }

  res.report.ece_before = bin_stats(eval_part, opt.report_bins).ece;
  for (std::size_t i : res.split.eval)
    res.trace.records[i].edge_probs = apply(res.model, trace.records[i]);

  Trace eval_after;
  eval_after.num_classes = trace.num_classes;
  for (std::size_t i : res.split.eval) eval_after.records.push_back(res.trace.records[i]);
  res.report.ece_after = bin_stats(eval_after, opt.report_bins).ece;

  res.trace.metadata["calibration_method"] = to_string(method);
  res.trace.metadata["calibration_fit_split"] = std::to_string(opt.fit_split);
  res.trace.metadata["calibration_seed"] = std::to_string(opt.seed);
  return res;
}

// ---------------------------------------------------------------------------
// Model files: a self-describing JSON document per model

namespace {

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const json& rows) {
  const Index r = static_cast<Index>(rows.size());
  const Index c = r > 0 ? static_cast<Index>(rows[0].size()) : 0;
  Mat m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].get<Scalar>();
  return m;
}

}  // namespace

void save_model(const CalibrationModel& model, const std::string& path) {
  json j;
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, Identity>) {
          j["variant"] = "identity";
        } else if constexpr (std::is_same_v<M, Temperature>) {
          j["variant"] = "temperature";
          j["t"] = m.t;
        } else if constexpr (std::is_same_v<M, DirichletMap>) {
          j["variant"] = "dirichlet";
          j["w"] = mat_to_json(m.w);
          j["b"] = mat_to_json(m.b);
          j["lambda"] = m.lambda;
        } else if constexpr (std::is_same_v<M, DensityAware>) {
          j["variant"] = "density_aware";
          j["t0"] = m.t0;
          j["w"] = m.w;
          j["k"] = m.k;
          j["reference_features"] = mat_to_json(m.reference_features);
        } else {
          j["variant"] = "histogram_binning";
          j["num_bins"] = m.num_bins;
          j["remap"] = m.remap;
        }
      },
      model);
  std::ofstream out(path);
  if (!out) throw CalibrationError("cannot write model file: " + path);
  out << j.dump(2) << "\n";
}

CalibrationModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CalibrationError("cannot open model file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CalibrationError(std::string("model file parse error: ") + e.what());
  }
  const std::string variant = j.at("variant").get<std::string>();
  if (variant == "identity") return Identity{};
  if (variant == "temperature") return Temperature{j.at("t").get<Scalar>()};
  if (variant == "dirichlet") {
    DirichletMap m;
    m.w = mat_from_json(j.at("w"));
    m.b = mat_from_json(j.at("b")).col(0);
    m.lambda = j.at("lambda").get<Scalar>();
    return m;
  }
  if (variant == "density_aware") {
    DensityAware m;
    m.t0 = j.at("t0").get<Scalar>();
    m.w = j.at("w").get<Scalar>();
    m.k = j.at("k").get<int>();
    m.reference_features = mat_from_json(j.at("reference_features"));
    return m;
  }
  if (variant == "histogram_binning") {
    HistogramBinning m;
    m.num_bins = j.at("num_bins").get<int>();
    m.remap = j.at("remap").get<std::vector<Scalar>>();
    return m;
  }
  throw CalibrationError("unknown model variant \"" + variant + "\"");
}

}  // namespace hgn
