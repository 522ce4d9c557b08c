#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace oracle {

GradCheck check_gradients(const std::function<c2f::ag::Tensor()>& loss, std::vector<c2f::ag::Tensor> leaves,
                          double step, double floor) {
  return check_gradients(loss, loss, std::move(leaves), step, floor);
}

GradCheck check_gradients(const std::function<c2f::ag::Tensor()>& analytic,
                          const std::function<c2f::ag::Tensor()>& loss, std::vector<c2f::ag::Tensor> leaves,
                          double step, double floor) {
  for (auto& leaf : leaves) leaf.zero_grad();
  analytic().backward();
  std::vector<std::vector<double>> backward_grads;
  for (const auto& leaf : leaves) {
    const auto g = leaf.grad();
    backward_grads.emplace_back(g.begin(), g.end());
    if (backward_grads.back().empty()) backward_grads.back().assign(leaf.size(), 0.0);
  }

  GradCheck out;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto values = leaves[li].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss().item();
      values[i] = saved - step;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = backward_grads[li][i];
      const double abs_err = std::fabs(a - numeric);
      out.max_absolute = std::max(out.max_absolute, abs_err);
      out.max_relative = std::max(out.max_relative, abs_err / std::max({std::fabs(a), std::fabs(numeric), floor}));
      ++out.checked;
    }
  }
  return out;
}

}  // namespace oracle
