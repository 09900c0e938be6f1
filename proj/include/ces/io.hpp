// SPDX-License-Identifier: Apache-2.0
#pragma once

// Line-delimited JSON records and the binary checkpoint. Every JSON record
// carries "schema_version"; field names match schemas/*.schema.json.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ces/eval.hpp"
#include "ces/policy.hpp"
#include "ces/rollout.hpp"
#include "ces/shaping.hpp"
#include "ces/tasks.hpp"
#include "ces/trainer.hpp"

namespace ces {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Malformed or incompatible input file. Distinct from runtime failures so
/// callers can report bad input separately.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io_detail {

inline Json parse_line(const std::string& line, const std::string& what, std::size_t line_no) {
  try {
    auto j = Json::parse(line);
    if (!j.is_object()) throw FormatError(what + " line " + std::to_string(line_no) + ": not a JSON object");
    const auto v = j.find("schema_version");
    if (v == j.end() || !v->is_number_integer() || v->get<int>() != kSchemaVersion)
      throw FormatError(what + " line " + std::to_string(line_no) + ": missing or unsupported schema_version");
    return j;
  } catch (const Json::exception& e) {
    throw FormatError(what + " line " + std::to_string(line_no) + ": " + e.what());
  }
}

template <class T>
T field(const Json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) throw FormatError(where + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const Json::exception&) {
    throw FormatError(where + ": field '" + key + "' has the wrong type");
  }
}

inline std::vector<std::string> read_lines(const std::string& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + what + " file '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

}  // namespace io_detail

/// Writes text to `path` in one go, failing loudly.
inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

// Metrics ------------------------------------------------------------------------

inline Json to_json(const MetricsRecord& m) {
  return Json{{"schema_version", kSchemaVersion}, {"step", m.step},
              {"samples", m.samples},             {"mean_length", m.mean_length},
              {"mean_entropy", m.mean_entropy},   {"mean_accuracy", m.mean_accuracy},
              {"objective", m.objective},         {"gradient_norm", m.gradient_norm},
              {"groups", m.groups},               {"mode", to_string(m.mode)}};
}

inline MetricsRecord metrics_from_json(const Json& j, const std::string& where = "metrics") {
  using io_detail::field;
  MetricsRecord m;
  m.step = field<long long>(j, "step", where);
  m.samples = field<long long>(j, "samples", where);
  m.mean_length = field<double>(j, "mean_length", where);
  m.mean_entropy = field<double>(j, "mean_entropy", where);
  m.mean_accuracy = field<double>(j, "mean_accuracy", where);
  m.objective = field<double>(j, "objective", where);
  m.gradient_norm = field<double>(j, "gradient_norm", where);
  m.groups = field<int>(j, "groups", where);
  try {
    m.mode = shaping_mode_from_string(field<std::string>(j, "mode", where));
  } catch (const std::invalid_argument& e) {
    throw FormatError(where + ": " + e.what());
  }
  return m;
}

inline std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::vector<MetricsRecord> out;
  std::size_t n = 0;
  for (const auto& line : io_detail::read_lines(path, "metrics")) {
    ++n;
    out.push_back(metrics_from_json(io_detail::parse_line(line, "metrics", n), "metrics line " + std::to_string(n)));
  }
  return out;
}

// Task instances -----------------------------------------------------------------

inline Json to_json(const TaskInstance& t) {
  return Json{{"schema_version", kSchemaVersion}, {"id", t.id},       {"operands", t.operands},
              {"truth", t.truth},                 {"tier", to_string(t.tier)}, {"prompt", t.prompt}};
}

/// Rebuilds the instance from its operands and checks the stored derived
/// fields against the rebuilt ones.
inline TaskInstance task_from_json(const Json& j, const std::string& where = "task") {
  using io_detail::field;
  TaskInstance t;
  try {
    t = make_instance(field<std::vector<int>>(j, "operands", where), field<std::int64_t>(j, "id", where));
  } catch (const std::invalid_argument& e) {
    throw FormatError(where + ": " + e.what());
  }
  if (field<int>(j, "truth", where) != t.truth) throw FormatError(where + ": truth does not match operands");
  if (field<std::string>(j, "tier", where) != to_string(t.tier))
    throw FormatError(where + ": tier does not match operand count");
  if (field<std::vector<int>>(j, "prompt", where) != t.prompt)
    throw FormatError(where + ": prompt does not match operands");
  return t;
}

inline std::string tasks_to_jsonl(std::span<const TaskInstance> tasks) {
  std::string s;
  for (const auto& t : tasks) s += to_json(t).dump() + "\n";
  return s;
}

inline std::vector<TaskInstance> read_tasks(const std::string& path) {
  std::vector<TaskInstance> out;
  std::size_t n = 0;
  for (const auto& line : io_detail::read_lines(path, "questions")) {
    ++n;
    out.push_back(task_from_json(io_detail::parse_line(line, "questions", n), "questions line " + std::to_string(n)));
  }
  if (out.empty()) throw FormatError("questions file '" + path + "' is empty");
  return out;
}

// Rollout dumps ------------------------------------------------------------------

/// A scored group as it appears in a dump: the training step that sampled it
/// plus the batch itself.
struct DumpedGroup {
  long long step = 0;
  GroupBatch batch;
};

inline Json rollout_record(long long step, const GroupBatch& batch, const ResponseTrace& r) {
  std::vector<double> ent, olp;
  for (const auto& t : r.tokens) {
    ent.push_back(t.entropy_bits);
    olp.push_back(t.old_log_prob);
  }
  return Json{{"schema_version", kSchemaVersion},
              {"step", step},
              {"prompt_id", batch.instance.id},
              {"operands", batch.instance.operands},
              {"response_index", r.index},
              {"tokens", r.token_ids()},
              {"entropy_bits", ent},
              {"old_log_prob", olp},
              {"r_acc", r.r_acc},
              {"r_fmt", r.r_fmt},
              {"truncated", r.truncated}};
}

inline std::string rollouts_to_jsonl(long long step, std::span<const GroupBatch> batches) {
  std::string s;
  for (const auto& b : batches)
    for (const auto& r : b.responses) s += rollout_record(step, b, r).dump() + "\n";
  return s;
}

/// Consecutive records with the same (step, prompt_id) form one group; group
/// accuracy and base advantages are recomputed from the stored rewards.
inline std::vector<DumpedGroup> parse_rollout_dump(const std::vector<std::string>& lines) {
  using io_detail::field;
  std::vector<DumpedGroup> groups;
  std::size_t n = 0;
  for (const auto& line : lines) {
    ++n;
    const std::string where = "rollouts line " + std::to_string(n);
    const auto j = io_detail::parse_line(line, "rollouts", n);
    const auto step = field<long long>(j, "step", where);
    const auto id = field<std::int64_t>(j, "prompt_id", where);
    const auto tokens = field<std::vector<int>>(j, "tokens", where);
    const auto ent = field<std::vector<double>>(j, "entropy_bits", where);
    const auto olp = field<std::vector<double>>(j, "old_log_prob", where);
    if (tokens.empty()) throw FormatError(where + ": empty response");
    if (ent.size() != tokens.size() || olp.size() != tokens.size())
      throw FormatError(where + ": tokens, entropy_bits and old_log_prob differ in length");
    ResponseTrace r;
    r.index = field<int>(j, "response_index", where);
    r.r_acc = field<int>(j, "r_acc", where);
    r.r_fmt = field<int>(j, "r_fmt", where);
    r.truncated = field<bool>(j, "truncated", where);
    if ((r.r_acc != 0 && r.r_acc != 1) || (r.r_fmt != 0 && r.r_fmt != 1))
      throw FormatError(where + ": rewards must be 0 or 1");
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (!(ent[t] >= 0.0) || !std::isfinite(ent[t])) throw FormatError(where + ": invalid entropy");
      if (!(olp[t] <= 0.0) || !std::isfinite(olp[t])) throw FormatError(where + ": invalid old_log_prob");
      r.tokens.push_back({tokens[t], static_cast<int>(t), olp[t], ent[t]});
    }
    if (groups.empty() || groups.back().step != step || groups.back().batch.instance.id != id) {
      DumpedGroup g;
      g.step = step;
      try {
        g.batch.instance = make_instance(field<std::vector<int>>(j, "operands", where), id);
      } catch (const std::invalid_argument& e) {
        throw FormatError(where + ": " + e.what());
      }
      groups.push_back(std::move(g));
    }
    groups.back().batch.responses.push_back(std::move(r));
  }
  for (auto& g : groups) {
    if (g.batch.responses.size() < 2)
      throw FormatError("rollouts: group for prompt " + std::to_string(g.batch.instance.id) + " has fewer than 2 responses");
    rescore_from_rewards(g.batch);
  }
  return groups;
}

inline std::vector<DumpedGroup> read_rollout_dump(const std::string& path) {
  return parse_rollout_dump(io_detail::read_lines(path, "rollouts"));
}

// Shaped advantages --------------------------------------------------------------

inline std::string shaped_to_jsonl(long long step, const GroupBatch& batch, const ShapingPlan& plan) {
  std::string s;
  for (std::size_t i = 0; i < plan.responses.size(); ++i) {
    const auto& rp = plan.responses[i];
    for (std::size_t j = 0; j < rp.shaped.size(); ++j) {
      s += Json{{"schema_version", kSchemaVersion},
                {"step", step},
                {"prompt_id", batch.instance.id},
                {"response_index", batch.responses[i].index},
                {"position", j},
                {"base_advantage", rp.base_advantage},
                {"shaped_advantage", rp.shaped[j]},
                {"selected", static_cast<bool>(rp.is_selected[j])},
                {"sign", rp.sign[j]},
                {"mode", to_string(plan.mode)}}
               .dump();
      s += "\n";
    }
  }
  return s;
}

// Eval reports -------------------------------------------------------------------

inline Json to_json(const Summary& s) {
  return Json{{"questions", s.questions}, {"accuracy", s.accuracy}, {"mean_length", s.mean_length}};
}

inline Json to_json(const StratumComparison& c) {
  return Json{{"questions", c.questions},
              {"baseline_accuracy", c.baseline_accuracy},
              {"new_accuracy", c.new_accuracy},
              {"baseline_length", c.baseline_length},
              {"new_length", c.new_length},
              {"length_delta", c.length_delta}};
}

/// Question records, then one summary record, then (with a comparison) one
/// record per stratum.
inline std::string report_to_jsonl(const EvalReport& rep, const StratifiedComparison* strata = nullptr) {
  std::string s;
  std::map<std::int64_t, const StratifiedQuestion*> by_id;
  if (strata)
    for (const auto& q : strata->questions) by_id[q.id] = &q;
  for (const auto& q : rep.questions) {
    Json j{{"schema_version", kSchemaVersion},
           {"kind", "question"},
           {"id", q.id},
           {"tier", to_string(q.tier)},
           {"lengths", q.lengths},
           {"correct", q.correct},
           {"accuracy", q.accuracy},
           {"mean_length", q.mean_length}};
    if (const auto it = by_id.find(q.id); it != by_id.end()) {
      j["stratum"] = to_string(it->second->stratum);
      j["baseline_accuracy"] = it->second->baseline_accuracy;
      j["baseline_length"] = it->second->baseline_length;
    }
    s += j.dump() + "\n";
  }
  s += Json{{"schema_version", kSchemaVersion}, {"kind", "summary"},    {"generations", rep.generations},
            {"temperature", rep.temperature},   {"easy", to_json(rep.easy)}, {"hard", to_json(rep.hard)},
            {"overall", to_json(rep.overall)}}
           .dump();
  s += "\n";
  if (strata) {
    for (const auto& [name, c] : {std::pair<const char*, const StratumComparison*>{"simple", &strata->simple},
                                  {"difficult", &strata->difficult},
                                  {"overall", &strata->overall}}) {
      auto j = to_json(*c);
      j["schema_version"] = kSchemaVersion;
      j["kind"] = "stratum";
      j["stratum"] = name;
      s += j.dump() + "\n";
    }
  }
  return s;
}

/// Reads the question records of a report; summaries are recomputed.
inline EvalReport read_report(const std::string& path) {
  using io_detail::field;
  EvalReport rep;
  std::size_t n = 0;
  bool summary = false;
  for (const auto& line : io_detail::read_lines(path, "report")) {
    ++n;
    const std::string where = "report line " + std::to_string(n);
    const auto j = io_detail::parse_line(line, "report", n);
    const auto kind = field<std::string>(j, "kind", where);
    if (kind == "summary") {
      summary = true;
      rep.generations = field<int>(j, "generations", where);
      rep.temperature = field<double>(j, "temperature", where);
    } else if (kind == "question") {
      QuestionResult q;
      q.id = field<std::int64_t>(j, "id", where);
      try {
        q.tier = tier_from_string(field<std::string>(j, "tier", where));
      } catch (const std::invalid_argument& e) {
        throw FormatError(where + ": " + e.what());
      }
      q.lengths = field<std::vector<int>>(j, "lengths", where);
      q.correct = field<std::vector<int>>(j, "correct", where);
      q.accuracy = field<double>(j, "accuracy", where);
      q.mean_length = field<double>(j, "mean_length", where);
      rep.questions.push_back(std::move(q));
    } else if (kind != "stratum") {
      throw FormatError(where + ": unknown record kind '" + kind + "'");
    }
  }
  if (!summary || rep.questions.empty()) throw FormatError("report '" + path + "' has no summary or no questions");
  std::vector<QuestionResult> easy, hard;
  for (const auto& q : rep.questions) (q.tier == Tier::easy ? easy : hard).push_back(q);
  rep.easy = summarize(easy);
  rep.hard = summarize(hard);
  rep.overall = summarize(rep.questions);
  return rep;
}

// Checkpoints --------------------------------------------------------------------
//
// Little-endian layout:
//   char[8]  magic "CESCKPT1"
//   u32      format version
//   u32      architecture (0 linear, 1 mlp)
//   u32      vocabulary size
//   u32      hidden width (0 for linear)
//   u32      feature window, position buckets, max length
//   f64      temperature
//   u64      vocabulary hash
//   u64      weight count
//   f64[n]   weights

inline constexpr char kCheckpointMagic[8] = {'C', 'E', 'S', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace io_detail {

template <class T>
void put(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

template <class T>
T take(const std::string& buf, std::size_t& off, const char* what) {
  if (off + sizeof(T) > buf.size()) throw FormatError(std::string("checkpoint header truncated at ") + what);
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace io_detail

inline std::string checkpoint_bytes(const PolicyParams& p) {
  using io_detail::put;
  std::string buf(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint32_t>(buf, p.architecture() == Architecture::linear ? 0U : 1U);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.vocab_size()));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.hidden()));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.feature_config().window));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.feature_config().buckets));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.feature_config().max_length));
  put<double>(buf, p.temperature());
  put<std::uint64_t>(buf, p.vocab().hash());
  put<std::uint64_t>(buf, p.weights.size());
  for (double w : p.weights) put<double>(buf, w);
  return buf;
}

/// The vocabulary is not stored; it is rebuilt as the arithmetic vocabulary
/// of the stored size (or the generic one) and must match the stored hash.
inline PolicyParams checkpoint_from_bytes(const std::string& buf) {
  using io_detail::take;
  if (buf.size() < sizeof kCheckpointMagic || std::memcmp(buf.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw FormatError("checkpoint header: bad magic");
  std::size_t off = sizeof kCheckpointMagic;
  const auto version = take<std::uint32_t>(buf, off, "version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint header: unsupported version " + std::to_string(version));
  const auto arch = take<std::uint32_t>(buf, off, "architecture");
  const auto vsize = take<std::uint32_t>(buf, off, "vocabulary size");
  const auto hidden = take<std::uint32_t>(buf, off, "hidden width");
  FeatureConfig fc;
  fc.window = static_cast<int>(take<std::uint32_t>(buf, off, "window"));
  fc.buckets = static_cast<int>(take<std::uint32_t>(buf, off, "buckets"));
  fc.max_length = static_cast<int>(take<std::uint32_t>(buf, off, "max length"));
  const auto temperature = take<double>(buf, off, "temperature");
  const auto vhash = take<std::uint64_t>(buf, off, "vocabulary hash");
  const auto count = take<std::uint64_t>(buf, off, "weight count");
  if (arch > 1) throw FormatError("checkpoint header: unknown architecture " + std::to_string(arch));
  if (vsize < 8 || vsize > 4096) throw FormatError("checkpoint header: implausible vocabulary size");
  if (buf.size() - off != count * sizeof(double))
    throw FormatError("checkpoint: expected " + std::to_string(count) + " weights, file holds " +
                      std::to_string((buf.size() - off) / sizeof(double)));
  std::vector<Vocabulary> candidates;
  if (static_cast<int>(vsize) > tok::kFirstFiller)
    candidates.push_back(arithmetic_vocabulary(static_cast<int>(vsize) - tok::kFirstFiller));
  candidates.push_back(Vocabulary::generic(static_cast<int>(vsize)));
  const Vocabulary* vocab = nullptr;
  for (const auto& v : candidates)
    if (v.hash() == vhash) vocab = &v;
  if (!vocab) throw FormatError("checkpoint header: vocabulary hash does not match any known vocabulary");
  std::vector<double> w(count);
  std::memcpy(w.data(), buf.data() + off, count * sizeof(double));
  try {
    return PolicyParams::from_parts(*vocab, fc, arch == 0 ? Architecture::linear : Architecture::mlp,
                                    static_cast<int>(hidden), temperature, std::move(w));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const PolicyParams& p) { write_text_file(path, checkpoint_bytes(p)); }

inline PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_bytes(ss.str());
}

}  // namespace ces
