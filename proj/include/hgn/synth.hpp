#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "hgn/trace.hpp"
#include "hgn/types.hpp"

namespace hgn {

struct BetaShape {
  Scalar alpha = 1.0;
  Scalar beta = 1.0;
};

struct LatencySpec {
  Scalar mean_ms = 0.0;
  Scalar jitter_ms = 0.0;  // uniform in [mean - jitter, mean + jitter], clamped at 0
};

// Knobs for a synthetic prediction trace with controlled accuracy,
// confidence distributions and miscalibration. Marginals converge to the
// targets at the usual binomial rate.
struct SynthParams {
  std::size_t n = 0;
  int num_classes = 13;
  Scalar edge_acc = 0.5;
  Scalar cloud_acc = 0.5;
  // P(cloud correct | edge wrong); P(cloud correct | edge correct) is then
  // pinned by the cloud_acc marginal and clamped into [0,1].
  Scalar cloud_given_edge_wrong = 0.5;
  // probability a wrong cloud prediction repeats the edge misprediction
  Scalar same_mispred_prob = 0.5;
  BetaShape conf_correct{2.0, 1.0};
  BetaShape conf_incorrect{1.0, 2.0};
  // exponent applied to the probability vector then renormalized; gamma > 1
  // sharpens toward over-confidence
  Scalar overconfidence_sharpen = 1.0;
  LatencySpec edge_latency{20.0, 0.0};
  LatencySpec cloud_latency{186.0, 0.0};
  Scalar unseen_fraction = 0.0;
  int feature_dim = 0;  // 0 = no features
  std::uint64_t seed = 0;
};

// Generation is a pure function of params: each record draws from a stream
// derived from (seed, record index), so output is order-independent.
Trace generate(const SynthParams& params);

// A preset composes a seen-statistics generator and an unseen-statistics
// generator at a fixed fraction; seen_fraction 0 collapses to unseen-only.
struct SynthPreset {
  std::string name;
  SynthParams seen;
  SynthParams unseen;
  Scalar seen_fraction = 0.0;
};

std::map<std::string, SynthPreset> make_paperlike_presets();

Trace generate_preset(const SynthPreset& preset, std::size_t n, std::uint64_t seed);

}  // namespace hgn
