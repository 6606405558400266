#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "dualpath/autodiff.hpp"

namespace dualpath::nn {

using ad::Tensor;
using ad::Var;

/// Named tensors in a fixed order plus a version counter that the optimiser
/// bumps on every step.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  void add(std::string name, Tensor value);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  std::uint64_t version() const { return version_; }
  void set_version(std::uint64_t v) { version_ = v; }
  void bump_version() { ++version_; }

  /// Fresh leaves (one per entry, same order) for a new graph.
  std::vector<Var> leaves(bool requires_grad = true) const;

  /// Binary checkpoint; see docs/formats.md.
  std::string serialize() const;
  static ParameterSet deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static ParameterSet load(const std::filesystem::path& path);

  bool operator==(const ParameterSet& other) const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t version_ = 0;
};

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Maps parameter names to the leaves of the current graph.
class Bindings {
 public:
  Bindings() = default;
  Bindings(const ParameterSet& params, std::vector<Var> leaves);
  const Var& operator[](const std::string& name) const;
  const std::vector<Var>& leaves() const { return leaves_; }

 private:
  std::map<std::string, Var> by_name_;
  std::vector<Var> leaves_;
};

enum class Activation { tanh, relu };

/// Fully connected network. Parameters are named `<prefix>.<layer>.w` and
/// `<prefix>.<layer>.b`; weights are stored input-major ([in, out]).
struct Mlp {
  std::string prefix;
  std::vector<std::size_t> sizes;
  Activation activation = Activation::tanh;

  void init(ParameterSet& params, std::mt19937_64& rng) const;
  /// The last layer is linear.
  Var forward(const Var& x, const Bindings& p) const;
  std::size_t depth() const { return sizes.size() - 1; }
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamConfig vae() { return {1e-3, 0.9, 0.999, 1e-8}; }
  static AdamConfig adversarial() { return {1e-4, 0.5, 0.9, 1e-8}; }
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(const ParameterSet& params, AdamConfig config);
};

/// One Adam update. Throws TrainingError naming the parameter if a gradient
/// is non-finite; nothing is modified in that case.
void adam_step(ParameterSet& params, AdamState& state, const std::vector<Tensor>& gradients);

/// Input-gradient norm of a scalar-per-row critic at every row of `points`.
/// The result stays differentiable (the gradient is built with create_graph),
/// so it can appear inside a loss.
Var input_gradient_norm(const std::function<Var(const Var&)>& critic, const Var& points);

/// Convenience form for a single point.
double gradient_norm_of_critic(const std::function<Var(const Var&)>& critic, const Tensor& point);

/// Holds the currently published immutable snapshot of T. Publishing swaps
/// the pointer under a short lock; readers keep whatever they loaded.
template <class T>
class SnapshotSlot {
 public:
  void publish(std::shared_ptr<const T> next) {
    std::lock_guard lock(mu_);
    current_ = std::move(next);
  }
  std::shared_ptr<const T> load() const {
    std::lock_guard lock(mu_);
    return current_;
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const T> current_;
};

}  // namespace dualpath::nn
