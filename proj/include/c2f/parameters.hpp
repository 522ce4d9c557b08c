#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "c2f/autograd.hpp"

namespace c2f {

using Rng = std::mt19937_64;

// Named learnable tensors, grouped for per-group learning-rate scaling.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    std::string group;
    ag::Tensor tensor;
  };

  ag::Tensor add(std::string name, std::string group, ag::Tensor tensor);
  ag::Tensor normal(std::string name, std::string group, ag::Shape shape, double stddev, Rng& rng);
  ag::Tensor zeros(std::string name, std::string group, ag::Shape shape);

  const std::vector<Entry>& entries() const { return entries_; }
  const ag::Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t scalar_count() const;

  void zero_grad();
  void set_group_trainable(const std::string& group, bool trainable);

  // Binary layout: u64 count, then per entry: name, group, rank, dims, f64 values.
  void save(std::ostream& out) const;
  // Overwrites values of existing entries by name; shapes must match exactly.
  void load(std::istream& in);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Adam with bias correction. Groups with a zero learning-rate scale or whose
// tensors do not require gradients are left untouched.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  void step(ParameterStore& params, double learning_rate,
            const std::map<std::string, double>& group_scale = {});

  std::int64_t steps_taken() const { return steps_; }

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };
  double beta1_, beta2_, epsilon_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

namespace binio {
void write_u64(std::ostream& out, std::uint64_t v);
std::uint64_t read_u64(std::istream& in);
void write_string(std::ostream& out, const std::string& s);
std::string read_string(std::istream& in);
void write_doubles(std::ostream& out, const std::vector<double>& v);
std::vector<double> read_doubles(std::istream& in, std::size_t count);
}  // namespace binio

}  // namespace c2f
