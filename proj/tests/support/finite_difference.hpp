#pragma once
// Central finite differences over every entry of a ModelParams.

#include "compctl/model/params.hpp"

#include <functional>
#include <vector>

namespace fd {

struct Entry {
  std::string tensor;
  std::size_t index;
  double analytic;
  double numeric;
};

/// Visits every parameter entry, perturbs it by +-h and records
/// (f(w+h) - f(w-h)) / 2h next to the analytic value taken from `grads`.
inline std::vector<Entry> compare(compctl::model::ModelParams params, const compctl::model::ModelParams& grads,
                                  const std::function<double(const compctl::model::ModelParams&)>& loss,
                                  double h) {
  std::vector<const compctl::Tensor*> g;
  grads.for_each([&](const compctl::model::TensorSlot&, const compctl::Tensor& t) { g.push_back(&t); });
  std::vector<std::pair<std::string, compctl::Tensor*>> w;
  params.for_each([&](const compctl::model::TensorSlot& s, compctl::Tensor& t) { w.emplace_back(s.name, &t); });
  std::vector<Entry> out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (std::size_t j = 0; j < w[i].second->size(); ++j) {
      double& x = (*w[i].second)[j];
      const double saved = x;
      x = saved + h;
      const double up = loss(params);
      x = saved - h;
      const double down = loss(params);
      x = saved;
      out.push_back({w[i].first, j, (*g[i])[j], (up - down) / (2.0 * h)});
    }
  }
  return out;
}

}  // namespace fd
