#include "dualpath/event_log.hpp"

#include <array>
#include <chrono>
#include <iterator>

#include "dualpath/errors.hpp"

namespace dualpath::events {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<EventType, const char*>, 8> kNames{{
    {EventType::scored, "scored"},
    {EventType::flagged, "flagged"},
    {EventType::explained, "explained"},
    {EventType::reviewed, "reviewed"},
    {EventType::buffered, "buffered"},
    {EventType::fp_labeled, "fp-labeled"},
    {EventType::retrain_cycle, "retrain-cycle"},
    {EventType::error, "error"},
}};

}  // namespace

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

std::string type_name(EventType t) {
  for (const auto& [k, n] : kNames) {
    if (k == t) return n;
  }
  return "unknown";
}

EventType type_from_name(const std::string& name) {
  for (const auto& [k, n] : kNames) {
    if (name == n) return k;
  }
  throw DataError("unknown event type '" + name + "'");
}

json Event::to_json() const {
  return {{"seq", sequence}, {"time", time}, {"type", type_name(type)}, {"txid", transaction_id},
          {"version", model_version}, {"data", data}};
}

Event Event::from_json(const json& j) {
  try {
    Event e;
    e.sequence = j.at("seq").get<std::uint64_t>();
    e.time = j.at("time").get<double>();
    e.type = type_from_name(j.at("type").get<std::string>());
    e.transaction_id = j.at("txid").get<std::string>();
    e.model_version = j.at("version").get<std::uint64_t>();
    e.data = j.value("data", json::object());
    return e;
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed event: ") + ex.what());
  }
}

std::vector<Event> EventLog::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read event log " + path.string());
  std::vector<Event> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Event e;
    try {
      e = Event::from_json(json::parse(line));
    } catch (const json::exception& ex) {
      // A torn final line from a crash is tolerated; anything else is not.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
    const std::uint64_t expected = out.empty() ? 1 : out.back().sequence + 1;
    if (e.sequence != expected) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": sequence " + std::to_string(e.sequence) +
                      " where " + std::to_string(expected) + " was expected");
    }
    out.push_back(std::move(e));
  }
  return out;
}

EventLog::EventLog(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(*path_)) {
    // Drop a torn final record so new appends start on a fresh line.
    {
      std::ifstream in(*path_, std::ios::binary);
      const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      if (!bytes.empty() && bytes.back() != '\n') {
        const auto cut = bytes.find_last_of('\n');
        std::filesystem::resize_file(*path_, cut == std::string::npos ? 0 : cut + 1);
      }
    }
    for (auto& e : read(*path_)) {
      next_ = e.sequence + 1;
      if (e.type == EventType::scored) {
        ++scored_;
      } else {
        kept_.push_back(std::move(e));
      }
    }
  }
  if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
  out_.open(*path_, std::ios::app);
  if (!out_) throw ServiceError("cannot open event log " + path_->string());
}

EventLog::Appended EventLog::append(EventType type, const std::string& transaction_id, std::uint64_t model_version,
                                   json data) {
  std::lock_guard lock(mu_);
  Event e;
  e.sequence = next_++;
  e.time = now_seconds();
  e.type = type;
  e.transaction_id = transaction_id;
  e.model_version = model_version;
  e.data = std::move(data);
  if (path_) {
    out_ << e.to_json().dump() << '\n';
    if (type != EventType::scored) out_.flush();
  }
  const Appended out{e.sequence, e.time};
  if (type == EventType::scored) {
    ++scored_;
  } else {
    kept_.push_back(std::move(e));
  }
  return out;
}

void EventLog::flush() {
  std::lock_guard lock(mu_);
  if (path_) out_.flush();
}

std::uint64_t EventLog::last_sequence() const {
  std::lock_guard lock(mu_);
  return next_ - 1;
}

std::vector<Event> EventLog::state_events() const {
  std::lock_guard lock(mu_);
  return kept_;
}

std::uint64_t EventLog::scored_count() const {
  std::lock_guard lock(mu_);
  return scored_;
}

}  // namespace dualpath::events
