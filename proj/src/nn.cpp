#include "dualpath/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dualpath/errors.hpp"

namespace dualpath::nn {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'C', 'K'};

template <class T>
void put(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw DataError("checkpoint truncated");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw DataError("checkpoint truncated");
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void ParameterSet::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  index_[name] = entries_.size();
  entries_.push_back({std::move(name), std::move(value)});
}

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw NotFoundError("no parameter named '" + name + "'");
  return entries_[it->second].value;
}

Tensor& ParameterSet::get(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ParameterSet&>(*this).get(name));
}

bool ParameterSet::contains(const std::string& name) const { return index_.contains(name); }

std::vector<Var> ParameterSet::leaves(bool requires_grad) const {
  std::vector<Var> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(ad::leaf(e.value, requires_grad));
  return out;
}

std::string ParameterSet::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointFormatVersion);
  put<std::uint64_t>(out, version_);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) put<std::uint64_t>(out, d);
    for (double v : e.value.data()) put<double>(out, v);
  }
  return out;
}

ParameterSet ParameterSet::deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.get_string(4) != std::string(kMagic, 4)) throw DataError("not a parameter checkpoint (bad magic)");
  const auto format = r.get<std::uint32_t>();
  if (format != kCheckpointFormatVersion) {
    throw DataError("unsupported checkpoint format-version " + std::to_string(format));
  }
  ParameterSet ps;
  ps.version_ = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 2) throw DataError("checkpoint tensor '" + name + "' has unsupported rank");
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    std::vector<double> data(ad::numel(shape));
    for (auto& v : data) v = r.get<double>();
    ps.add(name, Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw DataError("trailing bytes after checkpoint");
  return ps;
}

void ParameterSet::save(const std::filesystem::path& path) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write checkpoint " + tmp);
    const auto bytes = serialize();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

ParameterSet ParameterSet::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (version_ != other.version_ || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name || !(entries_[i].value == other.entries_[i].value)) return false;
  }
  return true;
}

Bindings::Bindings(const ParameterSet& params, std::vector<Var> leaves) : leaves_(std::move(leaves)) {
  if (leaves_.size() != params.size()) throw ContractError("binding count does not match parameter count");
  for (std::size_t i = 0; i < leaves_.size(); ++i) by_name_[params.entries()[i].name] = leaves_[i];
}

const Var& Bindings::operator[](const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw NotFoundError("no bound parameter named '" + name + "'");
  return it->second;
}

void Mlp::init(ParameterSet& params, std::mt19937_64& rng) const {
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t fan_in = sizes[l], fan_out = sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Tensor w({fan_in, fan_out});
    for (auto& v : w.storage()) v = u(rng);
    params.add(prefix + "." + std::to_string(l) + ".w", std::move(w));
    params.add(prefix + "." + std::to_string(l) + ".b", Tensor({1, fan_out}));
  }
}

Var Mlp::forward(const Var& x, const Bindings& p) const {
  Var h = x;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto base = prefix + "." + std::to_string(l);
    h = ad::add(ad::matmul(h, p[base + ".w"]), p[base + ".b"]);
    if (l + 2 < sizes.size()) h = activation == Activation::tanh ? ad::tanh(h) : ad::relu(h);
  }
  return h;
}

AdamState AdamState::for_params(const ParameterSet& params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto& e : params.entries()) {
    s.first_moment.emplace_back(e.value.shape());
    s.second_moment.emplace_back(e.value.shape());
  }
  return s;
}

void adam_step(ParameterSet& params, AdamState& state, const std::vector<Tensor>& gradients) {
  auto& entries = params.entries();
  if (gradients.size() != entries.size() || state.first_moment.size() != entries.size()) {
    throw ContractError("adam_step: gradient/state count does not match parameter count");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (gradients[i].shape() != entries[i].value.shape()) {
      throw ShapeError("adam_step: gradient for '" + entries[i].name + "' has shape " +
                       ad::to_string(gradients[i].shape()) + ", parameter has " +
                       ad::to_string(entries[i].value.shape()));
    }
    if (!gradients[i].all_finite()) {
      throw TrainingError("non-finite gradient for parameter '" + entries[i].name + "'");
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& w = entries[i].value;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = gradients[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      w[j] -= c.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.epsilon);
    }
  }
  params.bump_version();
}

Var input_gradient_norm(const std::function<Var(const Var&)>& critic, const Var& points) {
  if (points.value().size() == 0 || points.value().cols() == 0) {
    throw ContractError("gradient norm of a zero-dimensional input");
  }
  // The critic scores rows independently, so d(sum of scores)/d(points) holds
  // each row's own input gradient.
  const Var scores = critic(points);
  const Var total = ad::sum(scores);
  const Var g = ad::grad(total, std::span<const Var>(&points, 1), /*create_graph=*/true)[0];
  return ad::norm2(g);
}

double gradient_norm_of_critic(const std::function<Var(const Var&)>& critic, const Tensor& point) {
  if (point.size() == 0) throw ContractError("gradient norm of a zero-dimensional input");
  Tensor row({1, point.size()}, point.storage());
  const Var x = ad::leaf(std::move(row));
  return input_gradient_norm(critic, x).value().item();
}

}  // namespace dualpath::nn
