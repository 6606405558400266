#include "dualpath/buffer.hpp"

#include <string>

#include "dualpath/errors.hpp"

namespace dualpath::buffer {

using nlohmann::json;

json BufferEntry::to_json(const codec::TransactionSchema& schema) const {
  return {{"index", index},
          {"transaction", codec::to_json(transaction, schema)},
          {"features", features},
          {"confirmed_at", confirmed_at},
          {"scenario_tag", scenario_tag},
          {"reviewer", reviewer},
          {"consumed", consumed}};
}

BufferEntry BufferEntry::from_json(const json& j, const codec::TransactionSchema& schema) {
  try {
    BufferEntry e;
    e.index = j.at("index").get<std::uint64_t>();
    e.transaction = codec::transaction_from_json(j.at("transaction"), schema);
    e.features = j.at("features").get<std::vector<double>>();
    e.confirmed_at = j.at("confirmed_at").get<double>();
    e.scenario_tag = j.value("scenario_tag", "");
    e.reviewer = j.value("reviewer", "");
    e.consumed = j.value("consumed", false);
    return e;
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed buffer entry: ") + ex.what());
  }
}

bool BufferEntry::operator==(const BufferEntry& o) const {
  return index == o.index && transaction.id == o.transaction.id && transaction.continuous == o.transaction.continuous &&
         transaction.categorical == o.transaction.categorical && features == o.features &&
         confirmed_at == o.confirmed_at && scenario_tag == o.scenario_tag && reviewer == o.reviewer &&
         consumed == o.consumed;
}

AdversarialBuffer::AdversarialBuffer(std::filesystem::path path, codec::TransactionSchema schema)
    : path_(std::move(path)), schema_(std::move(schema)) {
  if (std::filesystem::exists(*path_)) {
    std::ifstream in(*path_);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      json r;
      try {
        r = json::parse(line);
      } catch (const json::exception& e) {
        throw DataError(path_->string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
      const auto kind = r.value("kind", "");
      if (kind == "entry") {
        auto e = BufferEntry::from_json(r.at("entry"), *schema_);
        if (e.index != entries_.size()) throw DataError(path_->string() + ": buffer indices out of order");
        entries_.push_back(std::move(e));
      } else if (kind == "consumed") {
        for (auto i : r.at("indices").get<std::vector<std::uint64_t>>()) {
          if (i >= entries_.size()) throw DataError(path_->string() + ": consumed index " + std::to_string(i) + " unknown");
          entries_[i].consumed = true;
        }
      } else {
        throw DataError(path_->string() + ":" + std::to_string(lineno) + ": unknown record kind '" + kind + "'");
      }
    }
  }
  out_.open(*path_, std::ios::app);
  if (!out_) throw DataError("cannot open buffer log " + path_->string());
}

void AdversarialBuffer::write(const json& record) {
  if (!path_) return;
  out_ << record.dump() << '\n';
  out_.flush();
}

std::uint64_t AdversarialBuffer::append(BufferEntry entry) {
  std::lock_guard lock(mu_);
  entry.index = entries_.size();
  entry.consumed = false;
  if (schema_) write({{"kind", "entry"}, {"entry", entry.to_json(*schema_)}});
  entries_.push_back(std::move(entry));
  return entries_.back().index;
}

void AdversarialBuffer::mark_consumed(std::span<const std::uint64_t> indices) {
  std::lock_guard lock(mu_);
  for (auto i : indices) {
    if (i >= entries_.size()) throw NotFoundError("buffer entry " + std::to_string(i) + " does not exist");
  }
  for (auto i : indices) entries_[i].consumed = true;
  write({{"kind", "consumed"}, {"indices", std::vector<std::uint64_t>(indices.begin(), indices.end())}});
}

std::vector<BufferEntry> AdversarialBuffer::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::vector<BufferEntry> AdversarialBuffer::unconsumed() const {
  std::lock_guard lock(mu_);
  std::vector<BufferEntry> out;
  for (const auto& e : entries_) {
    if (!e.consumed) out.push_back(e);
  }
  return out;
}

std::size_t AdversarialBuffer::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::size_t AdversarialBuffer::unconsumed_count() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.consumed ? 0 : 1;
  return n;
}

}  // namespace dualpath::buffer
