#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hgn/types.hpp"

namespace hgn {

enum class ObjectTag { Seen, Unseen };

const char* to_string(ObjectTag tag);
ObjectTag tag_from_string(const std::string& s);

// One recorded inference event: what the edge model said (full softmax
// vector), what the cloud model said (top-1 only), ground truth and the
// measured latencies. Both model outputs are captured for every sample so a
// trace can be replayed under any threshold policy.
struct PredictionRecord {
  std::string sample_id;
  ObjectTag object_tag = ObjectTag::Seen;
  int ground_truth = 0;
  Vec edge_probs;
  Scalar edge_latency_ms = 0.0;
  int cloud_pred = 0;
  Scalar cloud_latency_ms = 0.0;   // cloud inference time, excluding network
  std::optional<Vec> features;     // only needed by density-aware calibration
};

struct Trace {
  std::vector<PredictionRecord> records;
  int num_classes = 13;
  std::map<std::string, std::string> metadata;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

struct TraceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A violated trace invariant. Violations are data, not failures: validate()
// reports them all, load_trace() turns the first one into a TraceError.
struct Violation {
  std::string sample_id;  // empty for trace-level violations
  std::string field;
  std::string message;
};

std::vector<Violation> validate(const Trace& trace);

// Trace files are JSON lines: a "meta" header, then one record per line.
// See README for the key set. load_trace throws TraceError with the line
// number on parse failures and with the field name on invariant violations.
Trace load_trace(const std::string& path);
void save_trace(const Trace& trace, const std::string& path);

Trace split_by_tag(const Trace& trace, ObjectTag tag);

// Samples round(n * seen_fraction) records from `seen` and the rest from
// `unseen`, without replacement when the source is large enough (with
// replacement otherwise, recorded in metadata). Deterministic under seed.
Trace mix_traces(const Trace& seen, const Trace& unseen, Scalar seen_fraction,
                 std::size_t n, std::uint64_t seed);

struct TopConfidence {
  int class_index = 0;
  Scalar confidence = 0.0;
};

// Argmax class and its probability; ties broken by lowest class index.
TopConfidence top_confidence(const Vec& probs);

}  // namespace hgn
