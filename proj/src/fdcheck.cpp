#include "falb/fdcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "falb/rng.hpp"

namespace falb {

template <typename T>
double finite_difference_check(const ScalarFn<T>& f, const Tensor<T>& x, double h,
                               int64_t max_coords, uint64_t coord_seed) {
  if (h <= 0) throw std::invalid_argument("finite_difference_check: step must be positive");

  Tensor<T> analytic;
  {
    Tape<T> tape;
    Var xv = tape.leaf(x, /*requires_grad=*/true);
    Var loss = f(tape, xv);
    tape.backward(loss);
    analytic = tape.grad(xv);
  }

  auto eval = [&](const Tensor<T>& pt) -> double {
    Tape<T> tape;
    Var xv = tape.leaf(pt, /*requires_grad=*/false);
    Var out = f(tape, xv);
    if (tape.value(out).numel() != 1)
      throw std::invalid_argument("finite_difference_check: f must be scalar-valued");
    return static_cast<double>(tape.value(out)[0]);
  };

  std::vector<int64_t> coords;
  if (max_coords <= 0 || max_coords >= x.numel()) {
    coords.resize(x.numel());
    for (int64_t i = 0; i < x.numel(); ++i) coords[i] = i;
  } else {
    RngStream rng(coord_seed, "fdcheck/coords");
    std::unordered_set<int64_t> seen;
    while (static_cast<int64_t>(coords.size()) < max_coords) {
      int64_t i = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(x.numel())));
      if (seen.insert(i).second) coords.push_back(i);
    }
    std::sort(coords.begin(), coords.end());
  }

  Tensor<T> pt = x;
  double max_err = 0;
  for (int64_t i : coords) {
    T orig = pt[i];
    pt[i] = orig + static_cast<T>(h);
    double fp = eval(pt);
    pt[i] = orig - static_cast<T>(h);
    double fm = eval(pt);
    pt[i] = orig;
    double central = (fp - fm) / (2 * h);
    double a = static_cast<double>(analytic[i]);
    double err = std::abs(a - central) / (std::abs(a) + std::abs(central) + 1e-12);
    max_err = std::max(max_err, err);
  }
  return max_err;
}

template double finite_difference_check<float>(const ScalarFn<float>&, const Tensor<float>&,
                                               double, int64_t, uint64_t);
template double finite_difference_check<double>(const ScalarFn<double>&, const Tensor<double>&,
                                                double, int64_t, uint64_t);

}  // namespace falb
