#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "claims/autodiff.hpp"
#include "claims/errors.hpp"

namespace claims::ag {

// Central-difference validation of tape gradients.
//
// `build` constructs a scalar loss on a fresh tape from the parameters'
// current values (it must bind them via tape.param). Returns the maximum over
// all parameter coordinates of |analytic - numeric| / max(1e-8, |analytic| +
// |numeric|).
template <typename Scalar, typename Build>
Scalar grad_check(Build&& build, std::span<ParameterT<Scalar>* const> params, Scalar eps) {
  const auto eval = [&]() -> Scalar {
    TapeT<Scalar> tape;
    VarT<Scalar> loss = build(tape);
    const MatrixX<Scalar>& L = loss.value();
    if (L.rows() != 1 || L.cols() != 1) throw ContractError("grad_check: loss must be scalar");
    return L(0, 0);
  };

  std::vector<MatrixX<Scalar>> analytic;
  {
    TapeT<Scalar> tape;
    VarT<Scalar> loss = build(tape);
    tape.backward(loss);
    analytic.reserve(params.size());
    for (ParameterT<Scalar>* p : params) analytic.push_back(p->grad);
  }

  Scalar worst = Scalar(0);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ParameterT<Scalar>& p = *params[pi];
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const Scalar saved = p.value.data()[i];
      p.value.data()[i] = saved + eps;
      const Scalar f_plus = eval();
      p.value.data()[i] = saved - eps;
      const Scalar f_minus = eval();
      p.value.data()[i] = saved;
      const Scalar numeric = (f_plus - f_minus) / (Scalar(2) * eps);
      const Scalar a = analytic[pi].data()[i];
      const Scalar err =
          std::abs(a - numeric) / std::max(Scalar(1e-8), std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

template <typename Scalar, typename Build>
Scalar grad_check(Build&& build, std::initializer_list<ParameterT<Scalar>*> params, Scalar eps) {
  std::vector<ParameterT<Scalar>*> v(params);
  return grad_check(std::forward<Build>(build), std::span<ParameterT<Scalar>* const>(v), eps);
}

}  // namespace claims::ag
