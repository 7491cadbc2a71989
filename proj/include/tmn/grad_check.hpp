#pragma once

// Central finite-difference verification of analytic gradients. Runs at
// 64-bit; large parameters are probed at a seeded coordinate sample.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tmn/rng.hpp"
#include "tmn/tensor.hpp"

namespace tmn {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int64_t coords_checked = 0;
  int64_t worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;

  std::vector<std::string> exceeding(double tolerance) const {
    std::vector<std::string> bad;
    for (const auto& e : entries)
      if (e.max_rel_err > tolerance) bad.push_back(e.name);
    return bad;
  }
  bool within(double tolerance) const { return max_rel_err <= tolerance; }
};

struct GradCheckOptions {
  double h = 1e-5;
  // central differences resolve |f|*eps/(2h) at best (~3e-11 for unit-scale
  // losses); differences below atol are indistinguishable from that noise
  double atol = 1e-9;
  int64_t max_coords_per_tensor = 64;
  uint64_t seed = 0;
};

// `loss_fn` rebuilds the forward graph from the given leaf parameters and
// returns a scalar. Analytic grads come from one backward pass; numeric
// grads from two forwards per probed coordinate.
inline GradCheckReport grad_check(std::vector<std::pair<std::string, Tensor<double>>> params,
                                  const std::function<Tensor<double>()>& loss_fn,
                                  GradCheckOptions opt = {}) {
  for (auto& [name, p] : params) p.zero_grad();
  loss_fn().backward();

  GradCheckReport report;
  for (size_t k = 0; k < params.size(); ++k) {
    auto& [name, p] = params[k];
    const std::vector<double> analytic = p.grad();

    std::vector<int64_t> coords;
    if (p.size() <= opt.max_coords_per_tensor) {
      coords.resize(static_cast<size_t>(p.size()));
      for (int64_t i = 0; i < p.size(); ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      std::mt19937_64 rng(mix_seed(opt.seed, static_cast<uint64_t>(k)));
      for (int64_t i = 0; i < opt.max_coords_per_tensor; ++i) coords.push_back(uniform_int(rng, p.size()));
    }

    GradCheckEntry entry;
    entry.name = name;
    entry.coords_checked = static_cast<int64_t>(coords.size());
    for (int64_t c : coords) {
      const double orig = p.data()[c];
      p.data()[c] = orig + opt.h;
      const double up = loss_fn().item();
      p.data()[c] = orig - opt.h;
      const double down = loss_fn().item();
      p.data()[c] = orig;
      const double numeric = (up - down) / (2.0 * opt.h);
      const double a = analytic[static_cast<size_t>(c)];
      if (std::fabs(a - numeric) <= opt.atol) continue;
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_coord = c;
        entry.worst_analytic = a;
        entry.worst_numeric = numeric;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace tmn
