#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualpath/codec.hpp"

namespace dualpath::buffer {

struct BufferEntry {
  std::uint64_t index = 0;
  codec::Transaction transaction;
  std::vector<double> features;
  double confirmed_at = 0.0;
  std::string scenario_tag;
  std::string reviewer;
  bool consumed = false;

  nlohmann::json to_json(const codec::TransactionSchema& schema) const;
  static BufferEntry from_json(const nlohmann::json& j, const codec::TransactionSchema& schema);
  bool operator==(const BufferEntry& other) const;
};

/// Append-only store of expert-confirmed fraud. Entries are never removed;
/// only their consumed flag changes. With a path, every change is appended
/// to a JSONL record log and replayed on open.
class AdversarialBuffer {
 public:
  AdversarialBuffer() = default;
  AdversarialBuffer(std::filesystem::path path, codec::TransactionSchema schema);

  AdversarialBuffer(const AdversarialBuffer&) = delete;
  AdversarialBuffer& operator=(const AdversarialBuffer&) = delete;

  /// Assigns the next index and returns it.
  std::uint64_t append(BufferEntry entry);
  /// Throws NotFoundError for an unknown index.
  void mark_consumed(std::span<const std::uint64_t> indices);

  std::vector<BufferEntry> entries() const;
  std::vector<BufferEntry> unconsumed() const;
  std::size_t size() const;
  std::size_t unconsumed_count() const;

 private:
  void write(const nlohmann::json& record);

  mutable std::mutex mu_;
  std::vector<BufferEntry> entries_;
  std::optional<std::filesystem::path> path_;
  std::optional<codec::TransactionSchema> schema_;
  std::ofstream out_;
};

}  // namespace dualpath::buffer
