#pragma once

// Trajectory JSONL: one trajectory record per line, streamed in both
// directions. Doubles use nlohmann's shortest round-trip rendering, so a
// write/read cycle reproduces every float bit-exactly.

#include "common.hpp"
#include "trajectory.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace turnroute {

using ojson = nlohmann::ordered_json;

inline ojson to_json(const Trajectory& traj) {
  ojson turns = ojson::array();
  for (const auto& t : traj.turns) {
    ojson errors = ojson::array();
    for (const auto& e : t.errors) {
      errors.push_back({{"rule", e.rule}, {"category", e.category}, {"severity", to_string(e.severity)}});
    }
    turns.push_back({
        {"t", t.t},
        {"model_id", t.model_id},
        {"raw_output", t.raw_output},
        {"action", t.action},
        {"observation", t.observation},
        {"tokens_in", t.tokens_in},
        {"tokens_out", t.tokens_out},
        {"cost", t.cost},
        {"errors", std::move(errors)},
    });
  }
  ojson j = {
      {"task_id", traj.task_id},
      {"task_text", traj.task_text},
      {"seed", traj.seed},
      {"termination", to_string(traj.termination)},
      {"terminal_score", traj.terminal_score},
      {"turns", std::move(turns)},
  };
  if (!traj.abort_reason.empty()) j["abort_reason"] = traj.abort_reason;
  return j;
}

namespace detail {

class FieldReader {
 public:
  explicit FieldReader(size_t line) : line_(line) {}

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw ValidationError("line " + std::to_string(line_) + ": field '" + field + "': " + what);
  }

  const ojson& member(const ojson& obj, const std::string& key, const std::string& path) const {
    if (!obj.is_object()) fail(path.empty() ? "<record>" : path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(join(path, key), "missing");
    return *it;
  }

  std::string str(const ojson& obj, const std::string& key, const std::string& path) const {
    const ojson& v = member(obj, key, path);
    if (!v.is_string()) fail(join(path, key), "expected a string");
    return v.get<std::string>();
  }

  uint64_t u64(const ojson& obj, const std::string& key, const std::string& path) const {
    const ojson& v = member(obj, key, path);
    if (!v.is_number_unsigned()) fail(join(path, key), "expected a non-negative integer");
    return v.get<uint64_t>();
  }

  double num(const ojson& obj, const std::string& key, const std::string& path) const {
    const ojson& v = member(obj, key, path);
    if (!v.is_number()) fail(join(path, key), "expected a number");
    return v.get<double>();
  }

  const ojson& arr(const ojson& obj, const std::string& key, const std::string& path) const {
    const ojson& v = member(obj, key, path);
    if (!v.is_array()) fail(join(path, key), "expected an array");
    return v;
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }

 private:
  size_t line_;
};

}  // namespace detail

/// Parse one record. `line` is used only for error messages.
inline Trajectory trajectory_from_json(const ojson& j, size_t line = 0) {
  detail::FieldReader r(line);
  Trajectory traj;
  traj.task_id = r.str(j, "task_id", "");
  traj.task_text = r.str(j, "task_text", "");
  traj.seed = r.u64(j, "seed", "");
  const std::string term = r.str(j, "termination", "");
  auto parsed = parse_termination(term);
  if (!parsed) r.fail("termination", "unknown value '" + term + "'");
  traj.termination = *parsed;
  traj.terminal_score = r.num(j, "terminal_score", "");
  if (auto it = j.find("abort_reason"); it != j.end() && it->is_string()) {
    traj.abort_reason = it->get<std::string>();
  }
  const ojson& turns = r.arr(j, "turns", "");
  traj.turns.reserve(turns.size());
  for (size_t i = 0; i < turns.size(); ++i) {
    const std::string path = "turns[" + std::to_string(i) + "]";
    const ojson& tj = turns[i];
    Turn t;
    t.t = r.u64(tj, "t", path);
    t.model_id = r.str(tj, "model_id", path);
    t.raw_output = r.str(tj, "raw_output", path);
    t.action = r.str(tj, "action", path);
    t.observation = r.str(tj, "observation", path);
    t.tokens_in = r.u64(tj, "tokens_in", path);
    t.tokens_out = r.u64(tj, "tokens_out", path);
    t.cost = r.num(tj, "cost", path);
    const ojson& errors = r.arr(tj, "errors", path);
    for (size_t k = 0; k < errors.size(); ++k) {
      const std::string epath = path + ".errors[" + std::to_string(k) + "]";
      ErrorEvent e;
      e.rule = r.str(errors[k], "rule", epath);
      e.category = r.str(errors[k], "category", epath);
      const std::string sev = r.str(errors[k], "severity", epath);
      auto s = parse_severity(sev);
      if (!s) r.fail(epath + ".severity", "unknown value '" + sev + "'");
      e.severity = *s;
      t.errors.push_back(std::move(e));
    }
    if (t.t != i) r.fail(path + ".t", "index does not match position " + std::to_string(i));
    traj.turns.push_back(std::move(t));
  }
  return traj;
}

inline std::string to_jsonl_line(const Trajectory& traj) { return to_json(traj).dump(); }

/// Appends whole records, flushing after each so a crash leaves a readable prefix.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path, bool append = false) : path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
  }

  void write(const Trajectory& traj) {
    out_ << to_jsonl_line(traj) << '\n';
    out_.flush();
    if (!out_) throw IoError("write failed on '" + path_.string() + "' after " + std::to_string(count_) + " records");
    ++count_;
  }

  [[nodiscard]] size_t count() const noexcept { return count_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  size_t count_ = 0;
};

/// Streams records one at a time; memory use is bounded by the longest line.
class JsonlReader {
 public:
  explicit JsonlReader(const std::filesystem::path& path) : path_(path), in_(path) {
    if (!in_) throw IoError("cannot open '" + path.string() + "' for reading");
  }

  std::optional<Trajectory> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      ojson j;
      try {
        j = ojson::parse(line);
      } catch (const ojson::parse_error& e) {
        throw ValidationError(path_.string() + ": line " + std::to_string(line_no_) +
                              ": malformed JSON at byte " + std::to_string(e.byte));
      }
      try {
        return trajectory_from_json(j, line_no_);
      } catch (const ValidationError& e) {
        throw ValidationError(path_.string() + ": " + e.what());
      }
    }
    return std::nullopt;
  }

  [[nodiscard]] size_t line() const noexcept { return line_no_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  size_t line_no_ = 0;
};

inline void write_jsonl(const std::vector<Trajectory>& trajectories, const std::filesystem::path& path) {
  JsonlWriter w(path);
  for (const auto& t : trajectories) w.write(t);
}

inline std::vector<Trajectory> read_jsonl(const std::filesystem::path& path) {
  JsonlReader r(path);
  std::vector<Trajectory> out;
  while (auto t = r.next()) out.push_back(std::move(*t));
  return out;
}

/// Visit every record without materializing the file.
template <typename Fn>
size_t for_each_trajectory(const std::filesystem::path& path, Fn&& fn) {
  JsonlReader r(path);
  size_t n = 0;
  while (auto t = r.next()) {
    fn(*t);
    ++n;
  }
  return n;
}

}  // namespace turnroute
