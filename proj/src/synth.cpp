#include "hgn/synth.hpp"

#include <cmath>
#include <stdexcept>

#include "hgn/random.hpp"

namespace hgn {

namespace {

void check_params(const SynthParams& p) {
  auto prob = [](Scalar v) { return v >= 0.0 && v <= 1.0; };
  if (!prob(p.edge_acc) || !prob(p.cloud_acc) || !prob(p.cloud_given_edge_wrong) ||
      !prob(p.same_mispred_prob) || !prob(p.unseen_fraction))
    throw std::invalid_argument("synth: probabilities must lie in [0,1]");
  if (p.conf_correct.alpha <= 0 || p.conf_correct.beta <= 0 ||
      p.conf_incorrect.alpha <= 0 || p.conf_incorrect.beta <= 0)
    throw std::invalid_argument("synth: Beta shapes must be positive");
  if (p.overconfidence_sharpen < 1.0)
    throw std::invalid_argument("synth: sharpening exponent must be >= 1");
  if (p.num_classes < 2) throw std::invalid_argument("synth: num_classes must be >= 2");
  if (p.edge_latency.mean_ms < 0 || p.cloud_latency.mean_ms < 0 ||
      p.edge_latency.jitter_ms < 0 || p.cloud_latency.jitter_ms < 0)
    throw std::invalid_argument("synth: latencies must be >= 0");
  if (p.feature_dim < 0) throw std::invalid_argument("synth: feature_dim must be >= 0");
}

Scalar draw_latency(rng::Engine& g, const LatencySpec& spec) {
  if (spec.jitter_ms == 0.0) return spec.mean_ms;
  const Scalar v = rng::uniform(g, spec.mean_ms - spec.jitter_ms, spec.mean_ms + spec.jitter_ms);
  return std::max(v, 0.0);
}

// Places `top` on class `top_class` and spreads the remainder by a flat
// Dirichlet draw. The spread is blended toward uniform just enough that no
// other entry reaches the top, so the vector's argmax stays the predicted
// class. Confidences below 1/C are unrepresentable as an argmax probability
// and get lifted to just above it.
Vec build_probs(rng::Engine& g, int num_classes, int top_class, Scalar top) {
  const Index C = num_classes;
  const Scalar floor_conf = 1.0 / static_cast<Scalar>(C);
  top = std::min(std::max(top, floor_conf * (1.0 + 1e-9)), 1.0 - 1e-12);

  const Scalar rest = 1.0 - top;
  Vec spread = rng::dirichlet_flat(g, C - 1) * rest;
  const Scalar uniform_cell = rest / static_cast<Scalar>(C - 1);
  const Scalar max_cell = spread.maxCoeff();
  const Scalar cap = top * (1.0 - 1e-9);
  if (max_cell > cap) {
    // blend toward the uniform spread until the largest cell fits under top
    const Scalar lambda = (cap - uniform_cell) / (max_cell - uniform_cell);
    spread = lambda * spread + (1.0 - lambda) * Vec::Constant(C - 1, uniform_cell);
  }

  Vec probs(C);
  Index j = 0;
  for (Index c = 0; c < C; ++c) probs[c] = (c == top_class) ? top : spread[j++];
  return probs;
}

void sharpen(Vec& probs, Scalar gamma) {
  if (gamma == 1.0) return;
  for (Index i = 0; i < probs.size(); ++i) probs[i] = std::pow(probs[i], gamma);
  probs /= probs.sum();
}

}  // namespace

Trace generate(const SynthParams& p) {
  check_params(p);
  const int C = p.num_classes;

  // back out P(cloud correct | edge correct) from the marginal
  Scalar cloud_given_edge_right = p.cloud_acc;
  if (p.edge_acc > 0.0) {
    cloud_given_edge_right =
        (p.cloud_acc - p.cloud_given_edge_wrong * (1.0 - p.edge_acc)) / p.edge_acc;
    cloud_given_edge_right = std::min(std::max(cloud_given_edge_right, 0.0), 1.0);
  }

  Trace trace;
  trace.num_classes = C;
  trace.metadata["source"] = "synth";
  trace.metadata["seed"] = std::to_string(p.seed);
  trace.records.reserve(p.n);

  for (std::size_t i = 0; i < p.n; ++i) {
    rng::Engine g = rng::engine_for(p.seed, i);
    PredictionRecord r;
    r.sample_id = "s" + std::to_string(i);
    r.object_tag = rng::bernoulli(g, p.unseen_fraction) ? ObjectTag::Unseen : ObjectTag::Seen;
    r.ground_truth = static_cast<int>(rng::below(g, C));

    const bool edge_ok = rng::bernoulli(g, p.edge_acc);
    int edge_pred = r.ground_truth;
    if (!edge_ok) {
      const int offset = 1 + static_cast<int>(rng::below(g, C - 1));
      edge_pred = (r.ground_truth + offset) % C;
    }

    const bool cloud_ok =
        rng::bernoulli(g, edge_ok ? cloud_given_edge_right : p.cloud_given_edge_wrong);
    if (cloud_ok) {
      r.cloud_pred = r.ground_truth;
    } else if (!edge_ok && rng::bernoulli(g, p.same_mispred_prob)) {
      r.cloud_pred = edge_pred;  // repeats the edge misprediction
    } else {
      // a wrong class, avoiding the edge misprediction when one exists
      int wrong;
      do {
        wrong = (r.ground_truth + 1 + static_cast<int>(rng::below(g, C - 1))) % C;
      } while (C > 2 && !edge_ok && wrong == edge_pred);
      r.cloud_pred = wrong;
    }

    const BetaShape& shape = edge_ok ? p.conf_correct : p.conf_incorrect;
    const Scalar conf = rng::beta(g, shape.alpha, shape.beta);
    r.edge_probs = build_probs(g, C, edge_pred, conf);
    sharpen(r.edge_probs, p.overconfidence_sharpen);

    r.edge_latency_ms = draw_latency(g, p.edge_latency);
    r.cloud_latency_ms = draw_latency(g, p.cloud_latency);

    if (p.feature_dim > 0) {
      Vec f(p.feature_dim);
      for (int d = 0; d < p.feature_dim; ++d) f[d] = rng::normal(g);
      f[r.ground_truth % p.feature_dim] += 2.0;  // mild class-dependent structure
      r.features = std::move(f);
    }
    trace.records.push_back(std::move(r));
  }
  return trace;
}

std::map<std::string, SynthPreset> make_paperlike_presets() {
  SynthParams unseen;
  unseen.num_classes = 13;
  unseen.edge_acc = 0.367;
  unseen.cloud_acc = 0.502;
  unseen.cloud_given_edge_wrong = 0.45;
  unseen.same_mispred_prob = 0.5;
  unseen.conf_correct = {5.0, 2.0};
  unseen.conf_incorrect = {2.0, 4.0};
  unseen.overconfidence_sharpen = 2.0;
  unseen.edge_latency = {20.0, 0.0};
  unseen.cloud_latency = {186.0, 0.0};
  unseen.unseen_fraction = 1.0;

  SynthParams seen = unseen;
  seen.edge_acc = 0.803;
  seen.cloud_acc = 0.884;
  seen.cloud_given_edge_wrong = 0.6;
  seen.conf_correct = {7.0, 2.0};
  seen.conf_incorrect = {2.0, 3.0};
  seen.unseen_fraction = 0.0;

  std::map<std::string, SynthPreset> presets;
  presets["unseen-only"] = SynthPreset{"unseen-only", seen, unseen, 0.0};
  presets["mix-80-20"] = SynthPreset{"mix-80-20", seen, unseen, 0.8};
  return presets;
}

Trace generate_preset(const SynthPreset& preset, std::size_t n, std::uint64_t seed) {
  const std::size_t n_seen =
      static_cast<std::size_t>(std::llround(preset.seen_fraction * static_cast<Scalar>(n)));

  SynthParams seen = preset.seen;
  seen.n = n_seen;
  seen.seed = seed;
  SynthParams unseen = preset.unseen;
  unseen.n = n - n_seen;
  unseen.seed = seed + 1;

  Trace out = generate(seen);
  Trace tail = generate(unseen);
  out.num_classes = tail.num_classes;
  for (auto& r : out.records) r.object_tag = ObjectTag::Seen;
  for (auto& r : tail.records) {
    r.object_tag = ObjectTag::Unseen;
    r.sample_id = "u" + r.sample_id;
    out.records.push_back(std::move(r));
  }
  out.metadata["source"] = "synth-preset:" + preset.name;
  out.metadata["seed"] = std::to_string(seed);
  return out;
}

}  // namespace hgn
