#include "ringplan/apportion.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace ringplan {

namespace {

__extension__ typedef __int128 Wide;

template <typename Rem, typename Weight>
std::vector<int> distribute(std::vector<int> parts, const std::vector<Rem>& rem, const std::vector<Weight>& weights,
                            int leftover) {
  std::vector<int> order(parts.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    if (rem[x] != rem[y]) return rem[x] > rem[y];
    if (weights[x] != weights[y]) return weights[x] > weights[y];
    return x > y;
  });
  for (int i = 0; i < leftover; ++i) ++parts[order[i % order.size()]];
  return parts;
}

}  // namespace

std::vector<int> apportion(const std::vector<std::int64_t>& weights, int total) {
  if (weights.empty()) throw std::invalid_argument("apportion: no weights");
  Wide sum = 0;
  for (std::int64_t w : weights) {
    if (w < 0) throw std::invalid_argument("apportion: negative weight");
    sum += w;
  }
  if (sum == 0) return apportion(std::vector<double>(weights.size(), 1.0), total);
  std::vector<int> parts(weights.size());
  std::vector<Wide> rem(weights.size());
  int given = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const Wide num = static_cast<Wide>(weights[i]) * total;
    parts[i] = static_cast<int>(num / sum);
    rem[i] = num % sum;
    given += parts[i];
  }
  return distribute(std::move(parts), rem, weights, total - given);
}

std::vector<int> apportion(const std::vector<double>& weights, int total) {
  if (weights.empty()) throw std::invalid_argument("apportion: no weights");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("apportion: negative weight");
    sum += w;
  }
  std::vector<double> w = weights;
  if (sum == 0.0) {
    std::fill(w.begin(), w.end(), 1.0);
    sum = static_cast<double>(w.size());
  }
  std::vector<int> parts(w.size());
  std::vector<double> rem(w.size());
  int given = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double q = w[i] * total / sum;
    parts[i] = static_cast<int>(q);
    rem[i] = q - parts[i];
    given += parts[i];
  }
  if (given > total) throw std::logic_error("apportion: rounding overshoot");
  return distribute(std::move(parts), rem, w, total - given);
}

void clamp_minimum(std::vector<int>& parts, int floor_value) {
  for (std::size_t i = 0; i < parts.size(); ++i) {
    while (parts[i] < floor_value) {
      auto big = std::max_element(parts.begin(), parts.end());
      if (*big <= floor_value) throw std::invalid_argument("clamp_minimum: not enough units");
      --*big;
      ++parts[i];
    }
  }
}

}  // namespace ringplan
