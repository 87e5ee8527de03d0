#pragma once

// Reference implementations written independently of the library: plain
// loops over std::vector, no shared helpers, no numerical shortcuts.

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vec unit(const Vec& v) {
  const double n = std::sqrt(dot(v, v));
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

inline double sim(const Vec& a, const Vec& b, double tau) { return std::exp(dot(a, b) / tau); }

// Patch-level loss: every anchor j, positives = other same-label items,
// negatives = different-label items.
inline double patch_loss(const std::vector<Vec>& v, const std::vector<int>& labels, double tau) {
  double total = 0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i == j) continue;
      (labels[i] == labels[j] ? pos : neg).push_back(i);
    }
    if (pos.empty()) continue;
    double term = 0;
    for (auto p : pos) {
      double denom = sim(v[j], v[p], tau);
      for (auto n : neg) denom += sim(v[j], v[n], tau);
      term += std::log(sim(v[j], v[p], tau) / denom);
    }
    total += -term / static_cast<double>(pos.size());
  }
  return total;
}

struct Prototype {
  std::string wsi;
  int label;
  Vec c;
};

// Normalized mean of the unit embeddings of each (wsi, label) group.
inline std::vector<Prototype> prototypes(const std::vector<Vec>& unit_v, const std::vector<int>& labels,
                                         const std::vector<std::string>& wsis) {
  std::map<std::pair<std::string, int>, Vec> sums;
  std::map<std::pair<std::string, int>, int> counts;
  for (std::size_t i = 0; i < unit_v.size(); ++i) {
    auto& s = sums[{wsis[i], labels[i]}];
    if (s.empty()) s.assign(unit_v[i].size(), 0.0);
    for (std::size_t d = 0; d < s.size(); ++d) s[d] += unit_v[i][d];
    ++counts[{wsis[i], labels[i]}];
  }
  std::vector<Prototype> out;
  for (auto& [key, s] : sums) {
    for (auto& x : s) x /= counts[key];
    out.push_back({key.first, key.second, unit(s)});
  }
  return out;
}

// WSI-level loss over prototypes: positives are same-label prototypes of a
// different WSI, negatives every different-label prototype.
inline double wsi_loss(const std::vector<Prototype>& c, double tau) {
  double total = 0;
  for (std::size_t j = 0; j < c.size(); ++j) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (i == j) continue;
      if (c[i].label != c[j].label) neg.push_back(i);
      else if (c[i].wsi != c[j].wsi) pos.push_back(i);
    }
    if (pos.empty()) continue;
    double term = 0;
    for (auto p : pos) {
      double denom = sim(c[j].c, c[p].c, tau);
      for (auto n : neg) denom += sim(c[j].c, c[n].c, tau);
      term += std::log(sim(c[j].c, c[p].c, tau) / denom);
    }
    total += -term / static_cast<double>(pos.size());
  }
  return total;
}

// Minimum within-cluster sum of squares over every split into two nonempty groups.
inline double best_two_partition(const std::vector<Vec>& pts) {
  const std::size_t n = pts.size();
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
    if (mask & 1u) continue;  // each partition once: point 0 always in group 0
    double sse = 0;
    for (int g = 0; g < 2; ++g) {
      Vec mean(pts[0].size(), 0.0);
      int m = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (((mask >> i) & 1u) != static_cast<unsigned>(g)) continue;
        for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += pts[i][d];
        ++m;
      }
      for (auto& x : mean) x /= m;
      for (std::size_t i = 0; i < n; ++i) {
        if (((mask >> i) & 1u) != static_cast<unsigned>(g)) continue;
        for (std::size_t d = 0; d < mean.size(); ++d) sse += (pts[i][d] - mean[d]) * (pts[i][d] - mean[d]);
      }
    }
    best = std::min(best, sse);
  }
  return best;
}

// Adjusted Rand index by explicit pair counting.
inline double ari(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  double both = 0, in_a = 0, in_b = 0, pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      both += sa && sb;
      in_a += sa;
      in_b += sb;
      pairs += 1;
    }
  }
  const double expected = in_a * in_b / pairs;
  const double max_index = 0.5 * (in_a + in_b);
  if (max_index == expected) return 1.0;
  return (both - expected) / (max_index - expected);
}

struct Scores {
  double precision, recall, f1, macro_f1;
};

// Recount from raw label vectors; positive class 1, zero denominators give 0.
inline Scores recount(const std::vector<int>& pred, const std::vector<int>& truth) {
  double tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && truth[i] == 1) tp += 1;
    if (pred[i] == 1 && truth[i] == 0) fp += 1;
    if (pred[i] == 0 && truth[i] == 1) fn += 1;
    if (pred[i] == 0 && truth[i] == 0) tn += 1;
  }
  auto ratio = [](double a, double b) { return b == 0 ? 0.0 : a / b; };
  const double p = ratio(tp, tp + fp), r = ratio(tp, tp + fn);
  const double f1 = ratio(2 * p * r, p + r);
  const double p0 = ratio(tn, tn + fn), r0 = ratio(tn, tn + fp);
  const double f1_0 = ratio(2 * p0 * r0, p0 + r0);
  return {p, r, f1, 0.5 * (f1 + f1_0)};
}

}  // namespace oracle
