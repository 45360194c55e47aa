#include "brmil/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "brmil/rng.hpp"

namespace brmil {

namespace {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

}  // namespace

GradCheckReport check_gradients(const std::function<Tensor(Tape*)>& make_loss,
                                const std::vector<Tensor>& params,
                                const GradCheckOptions& opts) {
  for (const Tensor& p : params)
    if (!p.requires_grad())
      throw ShapeError("check_gradients: every parameter must have requires_grad set");

  // One taped pass for the analytic gradients.
  std::vector<Tensor> analytic;
  {
    for (Tensor p : params) p.zero_grad();
    Tape tape;
    Tensor loss = make_loss(&tape);
    tape.backward(loss);
    analytic.reserve(params.size());
    for (const Tensor& p : params) analytic.push_back(p.grad_tensor());
  }

  auto numeric_at = [&](Tensor p, int idx, double h) {
    double* v = p.data() + idx;
    const double saved = *v;
    *v = saved + h;
    const double up = make_loss(nullptr).item();
    *v = saved - h;
    const double down = make_loss(nullptr).item();
    *v = saved;
    return (up - down) / (2.0 * h);
  };

  GradCheckReport rep;
  RngState sampler(opts.sample_seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    const int n = p.numel();

    std::vector<int> coords;
    if (opts.max_coords_per_tensor > 0 && n > opts.max_coords_per_tensor) {
      // Deterministic sample without replacement.
      std::vector<int> all(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
      for (int i = 0; i < opts.max_coords_per_tensor; ++i) {
        const int j = i + static_cast<int>(sampler.uniform_int(
                              static_cast<std::uint64_t>(n - i)));
        std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
        coords.push_back(all[static_cast<std::size_t>(i)]);
      }
    } else {
      for (int i = 0; i < n; ++i) coords.push_back(i);
    }

    for (int idx : coords) {
      const double a = analytic[pi][idx];
      double num = numeric_at(p, idx, opts.step);
      double err = rel_err(a, num);
      if (err >= opts.tol) {
        // Retry with a finer step; agreement there means the first probe was
        // just too coarse.
        const double num2 = numeric_at(p, idx, opts.step / 4.0);
        const double err2 = rel_err(a, num2);
        if (err2 < opts.tol) {
          num = num2;
          err = err2;
        } else if (rel_err(num, num2) > 0.1) {
          ++rep.nonsmooth_skips;
          continue;
        } else {
          err = std::min(err, err2);
        }
      }
      ++rep.checked;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        std::ostringstream os;
        os << "param " << pi << " coord " << idx << ": analytic " << a
           << " vs numeric " << num;
        rep.worst = os.str();
      }
      if (err >= opts.tol) ++rep.failures;
    }
  }
  return rep;
}

}  // namespace brmil
