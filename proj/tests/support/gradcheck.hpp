#pragma once

// Central-difference gradient check over the model parameters.

#include "rfadoc/transformer.hpp"

#include <algorithm>
#include <random>
#include <string>

namespace gradcheck {

struct Report {
  double worst_rel = 0;
  std::string worst_at;
  int checked = 0;
  int skipped = 0;  // perturbation crossed a ReLU or denominator-floor kink
};

/// rel = |num - an| / max(|num|, |an|, floor). A perturbation that changes the
/// forward branch signature is retried with a smaller step, then skipped.
inline Report check(rfadoc::Model<double>& m, const rfadoc::Batch& batch, int per_tensor, std::uint64_t seed,
                    double floor = 1e-6) {
  Report r;
  const auto analytic = rfadoc::backward(m, batch).gradients;
  const auto base = rfadoc::forward_branch_signature(m, batch);
  auto params = m.params.tensors();
  auto grads = const_cast<rfadoc::Parameters<double>&>(analytic).tensors();
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Eigen::Index n = params[i].tensor->size();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) idx[j] = j;
    std::shuffle(idx.begin(), idx.end(), rng);
    if (idx.size() > std::size_t(per_tensor)) idx.resize(std::size_t(per_tensor));
    for (Eigen::Index j : idx) {
      double& w = params[i].tensor->data()[j];
      const double orig = w;
      auto central = [&](double h) {
        w = orig + h;
        const double lp = rfadoc::forward(m, batch).loss;
        const bool sp = rfadoc::forward_branch_signature(m, batch) == base;
        w = orig - h;
        const double lm = rfadoc::forward(m, batch).loss;
        const bool sm = rfadoc::forward_branch_signature(m, batch) == base;
        w = orig;
        return std::pair{(lp - lm) / (2 * h), sp && sm};
      };
      auto [num, smooth] = central(1e-4);
      if (!smooth) {
        std::tie(num, smooth) = central(1e-6);
        if (!smooth) {
          ++r.skipped;
          continue;
        }
      }
      const double an = grads[i].tensor->data()[j];
      const double rel = std::abs(num - an) / std::max({std::abs(num), std::abs(an), floor});
      ++r.checked;
      if (rel > r.worst_rel) {
        r.worst_rel = rel;
        r.worst_at = params[i].name + "[" + std::to_string(j) + "]";
      }
    }
  }
  return r;
}

}  // namespace gradcheck
