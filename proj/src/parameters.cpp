#include "c2f/parameters.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "c2f/error.hpp"

namespace c2f {

namespace binio {

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw DataError("unexpected end of binary stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = read_u64(in);
  if (n > (1u << 30)) throw DataError("corrupt string length in binary stream");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("truncated string");
  return s;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
  for (double x : v) {
    std::uint64_t bits;
    static_assert(sizeof bits == sizeof x);
    std::memcpy(&bits, &x, sizeof x);
    write_u64(out, bits);
  }
}

std::vector<double> read_doubles(std::istream& in, std::size_t count) {
  std::vector<double> v(count);
  for (auto& x : v) {
    const auto bits = read_u64(in);
    std::memcpy(&x, &bits, sizeof x);
  }
  return v;
}

}  // namespace binio

ag::Tensor ParameterStore::add(std::string name, std::string group, ag::Tensor tensor) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  tensor.set_requires_grad(true);
  index_[name] = entries_.size();
  entries_.push_back({std::move(name), std::move(group), tensor});
  return tensor;
}

ag::Tensor ParameterStore::normal(std::string name, std::string group, ag::Shape shape,
                                  double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(ag::numel(shape));
  for (auto& v : values) v = dist(rng);
  return add(std::move(name), std::move(group), ag::Tensor::parameter(std::move(shape), std::move(values)));
}

ag::Tensor ParameterStore::zeros(std::string name, std::string group, ag::Shape shape) {
  const auto n = ag::numel(shape);
  return add(std::move(name), std::move(group),
             ag::Tensor::parameter(std::move(shape), std::vector<double>(n, 0.0)));
}

const ag::Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParameterStore::set_group_trainable(const std::string& group, bool trainable) {
  for (auto& e : entries_)
    if (e.group == group) e.tensor.set_requires_grad(trainable);
}

void ParameterStore::save(std::ostream& out) const {
  binio::write_u64(out, entries_.size());
  for (const auto& e : entries_) {
    binio::write_string(out, e.name);
    binio::write_string(out, e.group);
    binio::write_u64(out, e.tensor.rank());
    for (auto d : e.tensor.shape()) binio::write_u64(out, d);
    binio::write_doubles(out, std::vector<double>(e.tensor.values().begin(), e.tensor.values().end()));
  }
}

void ParameterStore::load(std::istream& in) {
  const auto count = binio::read_u64(in);
  if (count != entries_.size())
    throw DataError("checkpoint holds " + std::to_string(count) + " parameters, model expects " +
                    std::to_string(entries_.size()));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = binio::read_string(in);
    binio::read_string(in);  // group
    const auto rank = binio::read_u64(in);
    ag::Shape shape(rank);
    for (auto& d : shape) d = binio::read_u64(in);
    auto values = binio::read_doubles(in, ag::numel(shape));
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("checkpoint parameter not in model: " + name);
    auto& tensor = entries_[it->second].tensor;
    if (tensor.shape() != shape)
      throw DataError("shape mismatch for " + name + ": checkpoint " + ag::shape_string(shape) +
                      ", model " + ag::shape_string(tensor.shape()));
    std::copy(values.begin(), values.end(), tensor.mutable_values().begin());
  }
}

void Adam::step(ParameterStore& params, double learning_rate,
                const std::map<std::string, double>& group_scale) {
  ++steps_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (const auto& entry : params.entries()) {
    ag::Tensor tensor = entry.tensor;
    if (!tensor.requires_grad() || tensor.grad().empty()) continue;
    double lr = learning_rate;
    if (auto it = group_scale.find(entry.group); it != group_scale.end()) lr *= it->second;
    if (lr == 0.0) continue;
    auto& m = moments_[entry.name];
    if (m.first.size() != tensor.size()) {
      m.first.assign(tensor.size(), 0.0);
      m.second.assign(tensor.size(), 0.0);
    }
    auto values = tensor.mutable_values();
    const auto grad = tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      m.first[i] = beta1_ * m.first[i] + (1.0 - beta1_) * grad[i];
      m.second[i] = beta2_ * m.second[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double mhat = m.first[i] / correction1;
      const double vhat = m.second[i] / correction2;
      values[i] -= lr * mhat / (std::sqrt(vhat) + epsilon_);
    }
  }
}

void Adam::save(std::ostream& out) const {
  binio::write_u64(out, static_cast<std::uint64_t>(steps_));
  binio::write_u64(out, moments_.size());
  for (const auto& [name, m] : moments_) {
    binio::write_string(out, name);
    binio::write_u64(out, m.first.size());
    binio::write_doubles(out, m.first);
    binio::write_doubles(out, m.second);
  }
}

void Adam::load(std::istream& in) {
  steps_ = static_cast<std::int64_t>(binio::read_u64(in));
  moments_.clear();
  const auto count = binio::read_u64(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = binio::read_string(in);
    const auto n = binio::read_u64(in);
    Moments m;
    m.first = binio::read_doubles(in, n);
    m.second = binio::read_doubles(in, n);
    moments_[name] = std::move(m);
  }
}

}  // namespace c2f
