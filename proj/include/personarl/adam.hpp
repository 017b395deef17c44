#pragma once

// Adam over any tensor-walkable parameter struct. Moment structs mirror the
// parameter layout; updates use the canonical bias-corrected form.

#include "personarl/common.hpp"
#include "personarl/nets.hpp"

namespace personarl {

template <class P>
struct AdamState {
  P m, v;
  int64_t t = 0;
};

template <class P>
AdamState<P> make_adam_state(const P& params) {
  return AdamState<P>{zeros_like(params), zeros_like(params), 0};
}

namespace detail {
struct Span {
  double* data;
  Eigen::Index size;
};
template <class P>
std::vector<Span> spans(P& params) {
  std::vector<Span> out;
  params.for_each_tensor(
      [&](const std::string&, auto& t) { out.push_back({t.data(), t.size()}); });
  return out;
}
template <class P>
std::vector<Span> spans(const P& params) {
  std::vector<Span> out;
  params.for_each_tensor([&](const std::string&, const auto& t) {
    out.push_back({const_cast<double*>(t.data()), t.size()});
  });
  return out;
}
}  // namespace detail

template <class P>
void adam_step(P& params, const P& grads, AdamState<P>& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8) {
  auto ps = detail::spans(params);
  auto gs = detail::spans(grads);
  auto ms = detail::spans(state.m);
  auto vs = detail::spans(state.v);
  if (ps.size() != gs.size() || ps.size() != ms.size())
    throw StateError("adam_step: parameter/gradient layouts differ");

  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].size != gs[i].size) throw StateError("adam_step: tensor shape mismatch");
    Eigen::Map<Eigen::ArrayXd> p(ps[i].data, ps[i].size);
    Eigen::Map<const Eigen::ArrayXd> g(gs[i].data, gs[i].size);
    Eigen::Map<Eigen::ArrayXd> m(ms[i].data, ms[i].size);
    Eigen::Map<Eigen::ArrayXd> v(vs[i].data, vs[i].size);
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.square();
    p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
  }
}

// Global L2 norm across every tensor in a gradient struct.
template <class P>
double global_norm(const P& grads) {
  double sq = 0.0;
  grads.for_each_tensor(
      [&](const std::string&, const auto& t) { sq += t.squaredNorm(); });
  return std::sqrt(sq);
}

}  // namespace personarl
