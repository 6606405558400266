#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dualpath::events {

enum class EventType { scored, flagged, explained, reviewed, buffered, fp_labeled, retrain_cycle, error };

std::string type_name(EventType t);
EventType type_from_name(const std::string& name);

struct Event {
  std::uint64_t sequence = 0;
  double time = 0.0;
  EventType type = EventType::scored;
  std::string transaction_id;
  std::uint64_t model_version = 0;
  nlohmann::json data = nlohmann::json::object();

  nlohmann::json to_json() const;
  static Event from_json(const nlohmann::json& j);
};

/// Append-only log with one serialized writer. Sequence numbers start at 1
/// and increase by one per event. Scored events are buffered; every other
/// event is flushed as it is written.
class EventLog {
 public:
  /// In-memory log.
  EventLog() = default;
  /// Opens (or creates) a JSONL log, continuing its sequence numbers.
  explicit EventLog(std::filesystem::path path);

  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  struct Appended {
    std::uint64_t sequence = 0;
    double time = 0.0;
  };

  Appended append(EventType type, const std::string& transaction_id, std::uint64_t model_version,
                  nlohmann::json data = nlohmann::json::object());
  void flush();

  std::uint64_t last_sequence() const;
  /// Every event except `scored` ones, which are only counted in memory.
  std::vector<Event> state_events() const;
  std::uint64_t scored_count() const;
  const std::optional<std::filesystem::path>& path() const { return path_; }

  /// Reads a log file; throws DataError on gaps or malformed records.
  static std::vector<Event> read(const std::filesystem::path& path);

 private:
  mutable std::mutex mu_;
  std::optional<std::filesystem::path> path_;
  std::ofstream out_;
  std::uint64_t next_ = 1;
  std::uint64_t scored_ = 0;
  std::vector<Event> kept_;
};

double now_seconds();

}  // namespace dualpath::events
