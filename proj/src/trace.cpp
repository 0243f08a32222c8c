#include "hgn/trace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "hgn/random.hpp"
#include "json.hpp"

namespace hgn {

using nlohmann::json;

const char* to_string(ObjectTag tag) {
  return tag == ObjectTag::Seen ? "seen" : "unseen";
}

ObjectTag tag_from_string(const std::string& s) {
  if (s == "seen") return ObjectTag::Seen;
  if (s == "unseen") return ObjectTag::Unseen;
  throw TraceError("object_tag must be \"seen\" or \"unseen\", got \"" + s + "\"");
}

std::vector<Violation> validate(const Trace& trace) {
  std::vector<Violation> out;
  const int C = trace.num_classes;
  if (C < 2) {
    out.push_back({"", "num_classes", "num_classes must be at least 2"});
    return out;
  }

  std::unordered_set<std::string> ids;
  bool any_features = false;
  bool all_features = true;
  Index feature_dim = -1;

  for (const auto& r : trace.records) {
    if (!ids.insert(r.sample_id).second)
      out.push_back({r.sample_id, "sample_id", "duplicate sample_id \"" + r.sample_id + "\""});

    if (r.edge_probs.size() != C) {
      out.push_back({r.sample_id, "edge_probs",
                     "expected " + std::to_string(C) + " classes, got " +
                         std::to_string(r.edge_probs.size())});
    } else {
      bool in_range = true;
      for (Index i = 0; i < r.edge_probs.size(); ++i) {
        const Scalar p = r.edge_probs[i];
        if (!std::isfinite(p) || p < 0.0 || p > 1.0) in_range = false;
      }
      if (!in_range)
        out.push_back({r.sample_id, "edge_probs", "entries must lie in [0,1]"});
      else if (std::abs(r.edge_probs.sum() - 1.0) > kProbSumTol)
        out.push_back({r.sample_id, "edge_probs",
                       "probabilities sum to " + std::to_string(r.edge_probs.sum())});
    }

    if (r.ground_truth < 0 || r.ground_truth >= C)
      out.push_back({r.sample_id, "ground_truth",
                     "class index " + std::to_string(r.ground_truth) + " out of range"});
    if (r.cloud_pred < 0 || r.cloud_pred >= C)
      out.push_back({r.sample_id, "cloud_pred",
                     "class index " + std::to_string(r.cloud_pred) + " out of range"});

    if (!std::isfinite(r.edge_latency_ms) || r.edge_latency_ms < 0.0)
      out.push_back({r.sample_id, "edge_latency_ms", "latency must be finite and >= 0"});
    if (!std::isfinite(r.cloud_latency_ms) || r.cloud_latency_ms < 0.0)
      out.push_back({r.sample_id, "cloud_latency_ms", "latency must be finite and >= 0"});

    if (r.features.has_value()) {
      any_features = true;
      if (feature_dim < 0) feature_dim = r.features->size();
      if (r.features->size() != feature_dim)
        out.push_back({r.sample_id, "features",
                       "dimension " + std::to_string(r.features->size()) +
                           " differs from " + std::to_string(feature_dim)});
    } else {
      all_features = false;
    }
  }

  if (any_features && !all_features)
    out.push_back({"", "features", "some records carry features and some do not"});

  return out;
}

namespace {

Vec vec_from_json(const json& arr) {
  Vec v(static_cast<Index>(arr.size()));
  Index i = 0;
  for (const auto& x : arr) v[i++] = x.get<Scalar>();
  return v;
}

json vec_to_json(const Vec& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

PredictionRecord record_from_json(const json& j) {
  PredictionRecord r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.object_tag = tag_from_string(j.at("object_tag").get<std::string>());
  r.ground_truth = j.at("ground_truth").get<int>();
  r.edge_probs = vec_from_json(j.at("edge_probs"));
  r.edge_latency_ms = j.at("edge_latency_ms").get<Scalar>();
  r.cloud_pred = j.at("cloud_pred").get<int>();
  r.cloud_latency_ms = j.at("cloud_latency_ms").get<Scalar>();
  if (j.contains("features")) r.features = vec_from_json(j.at("features"));
  return r;
}

json record_to_json(const PredictionRecord& r) {
  json j;
  j["sample_id"] = r.sample_id;
  j["object_tag"] = to_string(r.object_tag);
  j["ground_truth"] = r.ground_truth;
  j["edge_probs"] = vec_to_json(r.edge_probs);
  j["edge_latency_ms"] = r.edge_latency_ms;
  j["cloud_pred"] = r.cloud_pred;
  j["cloud_latency_ms"] = r.cloud_latency_ms;
  if (r.features.has_value()) j["features"] = vec_to_json(*r.features);
  return j;
}

}  // namespace

Trace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TraceError("cannot open trace file: " + path);

  Trace trace;
  std::string line;
  std::size_t line_no = 0;
  // line number of each record, for invariant reporting below
  std::vector<std::size_t> record_lines;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw TraceError("line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (line_no == 1 && j.contains("meta")) {
        const json& meta = j["meta"];
        trace.num_classes = meta.at("num_classes").get<int>();
        if (meta.contains("metadata"))
          for (const auto& [k, v] : meta["metadata"].items())
            trace.metadata[k] = v.get<std::string>();
        continue;
      }
      trace.records.push_back(record_from_json(j));
      record_lines.push_back(line_no);
    } catch (const json::exception& e) {
      throw TraceError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const TraceError& e) {
      throw TraceError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }

  const auto violations = validate(trace);
  if (!violations.empty()) {
    const Violation& v = violations.front();
    std::string where;
    for (std::size_t i = 0; i < trace.records.size(); ++i)
      if (trace.records[i].sample_id == v.sample_id) {
        where = "line " + std::to_string(record_lines[i]) + ": ";
        break;
      }
    throw TraceError(where + v.field + ": " + v.message);
  }
  return trace;
}

void save_trace(const Trace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TraceError("cannot write trace file: " + path);

  json meta;
  meta["num_classes"] = trace.num_classes;
  if (!trace.metadata.empty()) {
    json md;
    for (const auto& [k, v] : trace.metadata) md[k] = v;
    meta["metadata"] = md;
  }
  out << json{{"meta", meta}}.dump() << "\n";
  for (const auto& r : trace.records) out << record_to_json(r).dump() << "\n";
}

Trace split_by_tag(const Trace& trace, ObjectTag tag) {
  Trace out;
  out.num_classes = trace.num_classes;
  out.metadata = trace.metadata;
  for (const auto& r : trace.records)
    if (r.object_tag == tag) out.records.push_back(r);
  return out;
}

namespace {

// Draws `take` indices from [0, pool), without replacement when possible.
std::vector<std::size_t> draw_indices(rng::Engine& g, std::size_t pool,
                                      std::size_t take, bool& with_replacement) {
  std::vector<std::size_t> picks;
  picks.reserve(take);
  if (take <= pool) {
    // partial Fisher-Yates
    std::vector<std::size_t> idx(pool);
    for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng::below(g, pool - i));
      std::swap(idx[i], idx[j]);
      picks.push_back(idx[i]);
    }
  } else {
    with_replacement = true;
    for (std::size_t i = 0; i < take; ++i)
      picks.push_back(static_cast<std::size_t>(rng::below(g, pool)));
  }
  return picks;
}

}  // namespace

Trace mix_traces(const Trace& seen, const Trace& unseen, Scalar seen_fraction,
                 std::size_t n, std::uint64_t seed) {
  if (seen_fraction < 0.0 || seen_fraction > 1.0)
    throw TraceError("seen_fraction must lie in [0,1]");
  const std::size_t n_seen = static_cast<std::size_t>(std::llround(seen_fraction * static_cast<Scalar>(n)));
  const std::size_t n_unseen = n - n_seen;
  if (n_seen > 0 && seen.empty()) throw TraceError("seen trace is empty");
  if (n_unseen > 0 && unseen.empty()) throw TraceError("unseen trace is empty");
  if (n_seen > 0 && n_unseen > 0 && seen.num_classes != unseen.num_classes)
    throw TraceError("mixed class counts: " + std::to_string(seen.num_classes) +
                     " vs " + std::to_string(unseen.num_classes));

  Trace out;
  out.num_classes = n_seen > 0 ? seen.num_classes : unseen.num_classes;
  out.metadata["source"] = "mix";
  out.metadata["mix_seed"] = std::to_string(seed);
  out.metadata["mix_seen_fraction"] = std::to_string(seen_fraction);

  rng::Engine g = rng::engine_for(seed, 0);
  bool replaced = false;
  const auto seen_idx = draw_indices(g, seen.size(), n_seen, replaced);
  const auto unseen_idx = draw_indices(g, unseen.size(), n_unseen, replaced);
  if (replaced) out.metadata["mix_with_replacement"] = "true";

  out.records.reserve(n);
  std::unordered_map<std::string, int> seen_ids;
  auto push = [&](const PredictionRecord& r) {
    PredictionRecord copy = r;
    // with-replacement draws can repeat a record; keep ids unique
    int& count = seen_ids[r.sample_id];
    if (count > 0) copy.sample_id += "~" + std::to_string(count);
    ++count;
    out.records.push_back(std::move(copy));
  };
  for (std::size_t i : seen_idx) push(seen.records[i]);
  for (std::size_t i : unseen_idx) push(unseen.records[i]);
  return out;
}

TopConfidence top_confidence(const Vec& probs) {
  if (probs.size() == 0) throw TraceError("empty probability vector");
  Scalar sum = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    const Scalar p = probs[i];
    if (!std::isfinite(p) || p < 0.0 || p > 1.0)
      throw TraceError("invalid probability vector entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kProbSumTol)
    throw TraceError("probability vector sums to " + std::to_string(sum));

  TopConfidence tc;
  tc.class_index = 0;
  tc.confidence = probs[0];
  for (Index i = 1; i < probs.size(); ++i)
    if (probs[i] > tc.confidence) {  // strict: ties keep the lowest index
      tc.confidence = probs[i];
      tc.class_index = static_cast<int>(i);
    }
  return tc;
}

}  // namespace hgn
