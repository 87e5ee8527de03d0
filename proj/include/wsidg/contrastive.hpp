#pragma once

// Temperature-scaled contrastive objectives over unit-norm embeddings:
// the WSI-level prototype loss, the patch-level loss and the combined
// objective with cross-entropy. Each loss optionally returns its gradient
// with respect to its (unit-norm) inputs.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "wsidg/error.hpp"

namespace wsidg {

struct LossConfig {
  double temperature_patch = 0.1;
  double temperature_wsi = 0.1;
  double weight_wsi = 1.0;
  double weight_patch = 1.0;
  double weight_ce = 1.0;
  // Also treat same-class prototypes of the anchor's own WSI as positives.
  bool same_wsi_positives = false;

  void validate() const {
    if (!(temperature_patch > 0.0) || !(temperature_wsi > 0.0)) {
      throw InvalidInput("temperature must be positive");
    }
  }
};

// Positive / negative index sets per anchor. Disjoint, never containing the anchor.
struct PairSpec {
  std::vector<std::vector<Eigen::Index>> positives;
  std::vector<std::vector<Eigen::Index>> negatives;

  std::size_t size() const { return positives.size(); }

  void validate(Eigen::Index n) const {
    if (positives.size() != negatives.size() || static_cast<Eigen::Index>(positives.size()) != n) {
      throw InvalidInput("pair spec does not cover every anchor");
    }
    for (std::size_t a = 0; a < positives.size(); ++a) {
      for (const auto* set : {&positives[a], &negatives[a]}) {
        for (auto i : *set) {
          if (i < 0 || i >= n) throw InvalidInput("pair spec index out of range");
          if (i == static_cast<Eigen::Index>(a)) throw InvalidInput("pair spec contains the anchor itself");
        }
      }
      for (auto p : positives[a]) {
        if (std::find(negatives[a].begin(), negatives[a].end(), p) != negatives[a].end()) {
          throw InvalidInput("pair spec positive and negative sets overlap");
        }
      }
    }
  }
};

// Same label -> positive, different label -> negative, over one batch.
inline PairSpec label_pairs(std::span<const int> labels) {
  PairSpec spec;
  const auto n = static_cast<Eigen::Index>(labels.size());
  spec.positives.resize(labels.size());
  spec.negatives.resize(labels.size());
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      if (a == b) continue;
      (labels[a] == labels[b] ? spec.positives : spec.negatives)[a].push_back(b);
    }
  }
  return spec;
}

// S(a, b) = exp(a . b / tau) for unit vectors a, b.
template <typename DA, typename DB>
typename DA::Scalar similarity(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                               typename DA::Scalar tau) {
  if (!(tau > 0)) throw InvalidInput("similarity: temperature must be positive");
  if (!a.allFinite() || !b.allFinite()) throw InvalidInput("similarity: non-finite input");
  return std::exp(a.dot(b) / tau);
}

template <typename Scalar>
struct LossValue {
  Scalar value = 0;
  int anchors = 0;
  int empty_positive_anchors = 0;
};

// Sum over anchors j of -1/|P_j| * sum_{p in P_j} log(S_jp / (S_jp + sum_{n in N_j} S_jn)).
// Rows of `unit` are the vectors; `grad`, when given, receives d(loss)/d(unit).
template <typename Scalar>
LossValue<Scalar> anchored_contrastive_loss(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& unit,
                                            const PairSpec& pairs, Scalar tau,
                                            Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>* grad = nullptr) {
  if (!(tau > 0)) throw InvalidInput("temperature must be positive");
  pairs.validate(unit.rows());
  if (!unit.allFinite()) throw InvalidInput("contrastive loss: non-finite embedding");
  LossValue<Scalar> out;
  if (grad) grad->setZero(unit.rows(), unit.cols());
  std::vector<Scalar> s_pos, s_neg;
  for (Eigen::Index j = 0; j < unit.rows(); ++j) {
    const auto& pos = pairs.positives[j];
    const auto& neg = pairs.negatives[j];
    ++out.anchors;
    if (pos.empty()) {
      ++out.empty_positive_anchors;
      continue;
    }
    s_pos.resize(pos.size());
    s_neg.resize(neg.size());
    Scalar shift = -std::numeric_limits<Scalar>::infinity();
    for (std::size_t i = 0; i < pos.size(); ++i) shift = std::max(shift, s_pos[i] = unit.row(j).dot(unit.row(pos[i])) / tau);
    for (std::size_t i = 0; i < neg.size(); ++i) shift = std::max(shift, s_neg[i] = unit.row(j).dot(unit.row(neg[i])) / tau);
    // The negative mass is shared by every positive of this anchor.
    Scalar neg_mass = 0;
    for (auto s : s_neg) neg_mass += std::exp(s - shift);
    const Scalar w = Scalar(1) / static_cast<Scalar>(pos.size());
    Scalar inv_z_sum = 0;
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const Scalar e = std::exp(s_pos[i] - shift);
      const Scalar z = e + neg_mass;
      out.value += w * (std::log(z) - (s_pos[i] - shift));
      if (grad) {
        const Scalar g = w * (e / z - Scalar(1)) / tau;  // d/ds_jp, scaled by ds/dv
        grad->row(j) += g * unit.row(pos[i]);
        grad->row(pos[i]) += g * unit.row(j);
        inv_z_sum += Scalar(1) / z;
      }
    }
    if (grad) {
      for (std::size_t i = 0; i < neg.size(); ++i) {
        const Scalar g = w * std::exp(s_neg[i] - shift) * inv_z_sum / tau;
        grad->row(j) += g * unit.row(neg[i]);
        grad->row(neg[i]) += g * unit.row(j);
      }
    }
  }
  return out;
}

template <typename Scalar>
LossValue<Scalar> patch_level_loss(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& unit_embeddings,
                                   const PairSpec& pairs, const LossConfig& config,
                                   Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>* grad = nullptr) {
  config.validate();
  return anchored_contrastive_loss<Scalar>(unit_embeddings, pairs, static_cast<Scalar>(config.temperature_patch), grad);
}

template <typename Scalar>
struct PrototypeEntry {
  std::string wsi_id;
  int label = 0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> vector;  // unit norm
  int member_count = 0;
  std::vector<Eigen::Index> members;  // rows of the source batch
  Scalar mean_norm = 0;               // norm before renormalization

  friend bool operator==(const PrototypeEntry& a, const PrototypeEntry& b) {
    return a.wsi_id == b.wsi_id && a.label == b.label && a.member_count == b.member_count &&
           a.vector == b.vector;
  }
};

// One entry per (wsi, class) present in the batch, sorted by (wsi_id, label).
template <typename Scalar>
struct PrototypeSet {
  std::vector<PrototypeEntry<Scalar>> entries;

  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> matrix() const {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(static_cast<Eigen::Index>(entries.size()),
                                                            entries.empty() ? 0 : entries.front().vector.size());
    for (std::size_t i = 0; i < entries.size(); ++i) m.row(i) = entries[i].vector.transpose();
    return m;
  }
  friend bool operator==(const PrototypeSet&, const PrototypeSet&) = default;
};

// Mean of the members' unit embeddings, renormalized. Members are summed in a
// value-sorted order so the result does not depend on batch order.
template <typename Scalar>
PrototypeSet<Scalar> class_prototypes(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& unit_embeddings,
                                      std::span<const int> labels, std::span<const std::string> wsi_ids) {
  const Eigen::Index n = unit_embeddings.rows();
  if (n == 0) throw InvalidInput("class_prototypes: empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != n || static_cast<Eigen::Index>(wsi_ids.size()) != n) {
    throw InvalidInput("class_prototypes: labels / wsi ids length mismatch");
  }
  std::map<std::pair<std::string, int>, std::vector<Eigen::Index>> groups;
  for (Eigen::Index i = 0; i < n; ++i) groups[{wsi_ids[i], labels[i]}].push_back(i);

  PrototypeSet<Scalar> set;
  const auto row_less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < unit_embeddings.cols(); ++c) {
      if (unit_embeddings(a, c) != unit_embeddings(b, c)) return unit_embeddings(a, c) < unit_embeddings(b, c);
    }
    return false;
  };
  for (auto& [key, members] : groups) {
    std::vector<Eigen::Index> order = members;
    std::stable_sort(order.begin(), order.end(), row_less);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(unit_embeddings.cols());
    for (auto i : order) mean += unit_embeddings.row(i).transpose();
    mean /= static_cast<Scalar>(members.size());
    const Scalar norm = mean.norm();
    if (norm == Scalar(0)) throw DegeneratePrototype(key.first, key.second);
    PrototypeEntry<Scalar> e;
    e.wsi_id = key.first;
    e.label = key.second;
    e.vector = mean / norm;
    e.member_count = static_cast<int>(members.size());
    e.members = members;
    e.mean_norm = norm;
    set.entries.push_back(std::move(e));
  }
  return set;
}

// Chain rule from d(loss)/d(prototype) back to the member embeddings.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> prototype_backward(
    const PrototypeSet<Scalar>& set, const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& grad_prototypes,
    Eigen::Index batch_size) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> grad =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(batch_size, grad_prototypes.cols());
  for (std::size_t p = 0; p < set.entries.size(); ++p) {
    const auto& e = set.entries[p];
    const Vec gc = grad_prototypes.row(p).transpose();
    // c = m / |m|  =>  dm = (gc - c (c . gc)) / |m|;  m = mean(members)
    const Vec gm = (gc - e.vector * e.vector.dot(gc)) / e.mean_norm;
    const Vec gv = gm / static_cast<Scalar>(e.member_count);
    for (auto i : e.members) grad.row(i) += gv.transpose();
  }
  return grad;
}

// Anchors are prototypes; positives are same-class prototypes of the other
// WSI(s), negatives every different-class prototype.
template <typename Scalar>
PairSpec prototype_pairs(const PrototypeSet<Scalar>& set, bool same_wsi_positives) {
  PairSpec spec;
  const auto n = static_cast<Eigen::Index>(set.entries.size());
  spec.positives.resize(n);
  spec.negatives.resize(n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      if (a == b) continue;
      const auto& ea = set.entries[a];
      const auto& eb = set.entries[b];
      if (ea.label != eb.label) {
        spec.negatives[a].push_back(b);
      } else if (ea.wsi_id != eb.wsi_id || same_wsi_positives) {
        spec.positives[a].push_back(b);
      }
    }
  }
  return spec;
}

template <typename Scalar>
LossValue<Scalar> wsi_level_loss(const PrototypeSet<Scalar>& prototypes, const LossConfig& config,
                                 Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>* grad = nullptr) {
  config.validate();
  if (prototypes.entries.empty()) throw InvalidInput("wsi_level_loss: empty prototype set");
  return anchored_contrastive_loss<Scalar>(prototypes.matrix(), prototype_pairs(prototypes, config.same_wsi_positives),
                                           static_cast<Scalar>(config.temperature_wsi), grad);
}

// Mean 2-class cross-entropy; `grad` receives d(loss)/d(logits).
template <typename Scalar>
Scalar cross_entropy(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& logits, std::span<const int> labels,
                     Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>* grad = nullptr) {
  const Eigen::Index n = logits.rows();
  if (n == 0 || static_cast<Eigen::Index>(labels.size()) != n) throw InvalidInput("cross_entropy: shape mismatch");
  Scalar loss = 0;
  if (grad) grad->setZero(n, logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= logits.cols()) throw InvalidInput("cross_entropy: label out of range");
    const Scalar m = logits.row(i).maxCoeff();
    const auto e = (logits.row(i).array() - m).exp();
    const Scalar z = e.sum();
    loss += std::log(z) + m - logits(i, labels[i]);
    if (grad) {
      grad->row(i) = e / z / static_cast<Scalar>(n);
      (*grad)(i, labels[i]) -= Scalar(1) / static_cast<Scalar>(n);
    }
  }
  return loss / static_cast<Scalar>(n);
}

template <typename Scalar>
struct TotalLoss {
  Scalar l_w = 0;
  Scalar l_p = 0;
  Scalar l_c = 0;
  Scalar total = 0;
};

template <typename Scalar>
TotalLoss<Scalar> total_loss(Scalar l_w, Scalar l_p, const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& logits,
                             std::span<const int> labels, const LossConfig& config) {
  TotalLoss<Scalar> t;
  t.l_w = l_w;
  t.l_p = l_p;
  t.l_c = cross_entropy<Scalar>(logits, labels);
  t.total = static_cast<Scalar>(config.weight_wsi) * l_w + static_cast<Scalar>(config.weight_patch) * l_p +
            static_cast<Scalar>(config.weight_ce) * t.l_c;
  return t;
}

// Row-wise L2 normalization and its backward pass.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> normalize_rows(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& z) {
  const auto norms = z.rowwise().norm();
  if ((norms.array() == Scalar(0)).any()) throw InvalidInput("cannot normalize a zero embedding");
  return norms.cwiseInverse().asDiagonal() * z;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> normalize_rows_backward(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& z,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& unit,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& grad_unit) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> g(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const Scalar proj = unit.row(i).dot(grad_unit.row(i));
    g.row(i) = (grad_unit.row(i) - proj * unit.row(i)) / z.row(i).norm();
  }
  return g;
}

}  // namespace wsidg
