#include "zscl/losses.hpp"

#include <cmath>
#include <utility>

#include "zscl/error.hpp"

namespace zscl {

namespace {

struct Encoded {
  std::vector<TowerTrace> traces;
  Mat emb;
};

Encoded encode_traced(const TwoTowerModel& model, Tower tower, const Mat& xs) {
  Encoded out;
  out.traces.reserve(xs.rows());
  out.emb = Mat(xs.rows(), model.arch().d_emb);
  for (std::size_t r = 0; r < xs.rows(); ++r) {
    out.traces.push_back(model.forward(tower, xs.row(r)));
    const Vec& e = out.traces.back().embedding;
    std::copy(e.begin(), e.end(), out.emb.row(r).begin());
  }
  return out;
}

// d/dz of -Σ t_j log(max(p_j, floor)) with p = softmax(z), written into `g`.
void target_ce_grad(const Distribution& target, const Distribution& p, std::span<double> g) {
  double active_mass = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j)
    if (p[j] > kProbFloor) active_mass += target[j];
  for (std::size_t k = 0; k < p.size(); ++k) g[k] = p[k] * active_mass - (p[k] > kProbFloor ? target[k] : 0.0);
}

// Value and d/dz of -Σ p_j log(max(q_j, floor)) with p = softmax(z), q fixed.
double literal_ce(const Distribution& p, const Distribution& q, std::span<double> g) {
  double expected = 0.0;
  Vec lq(q.size());
  for (std::size_t j = 0; j < q.size(); ++j) {
    lq[j] = std::log(std::max(q[j], kProbFloor));
    expected += p[j] * lq[j];
  }
  for (std::size_t k = 0; k < p.size(); ++k) g[k] = -p[k] * (lq[k] - expected);
  return -expected;
}

/// Pushes d(loss)/d(logits) for logits = τ·A·Bᵀ back into the parameters.
/// `scale_grad_tau` is false when τ is a fixed override rather than the model's own.
void backprop_logits(const TwoTowerModel& model, const Mat& dlogits, double tau, bool tau_is_param,
                     Tower row_tower, const Encoded& rows, Tower col_tower, const Encoded& cols, Vec& grad) {
  const std::size_t d = model.arch().d_emb;
  if (tau_is_param) {
    double dlt = 0.0;
    for (std::size_t i = 0; i < dlogits.rows(); ++i)
      for (std::size_t j = 0; j < dlogits.cols(); ++j)
        dlt += dlogits(i, j) * tau * dot(rows.emb.row(i), cols.emb.row(j));
    grad[model.params().layout().find(kLogTemperature).offset] += dlt;
  }
  Vec de(d);
  for (std::size_t i = 0; i < rows.emb.rows(); ++i) {
    std::fill(de.begin(), de.end(), 0.0);
    for (std::size_t j = 0; j < cols.emb.rows(); ++j) {
      const double s = tau * dlogits(i, j);
      auto c = cols.emb.row(j);
      for (std::size_t k = 0; k < d; ++k) de[k] += s * c[k];
    }
    model.backward(row_tower, rows.traces[i], de, grad);
  }
  for (std::size_t j = 0; j < cols.emb.rows(); ++j) {
    std::fill(de.begin(), de.end(), 0.0);
    for (std::size_t i = 0; i < rows.emb.rows(); ++i) {
      const double s = tau * dlogits(i, j);
      auto r = rows.emb.row(i);
      for (std::size_t k = 0; k < d; ++k) de[k] += s * r[k];
    }
    model.backward(col_tower, cols.traces[j], de, grad);
  }
}

void require_same_arch(const TwoTowerModel& a, const TwoTowerModel& b, const char* where) {
  if (!(a.arch() == b.arch())) throw LayoutMismatchError(std::string(where) + ": student and teacher arch differ");
}

enum class DistillAxis { kImageRows, kTextRows };

GradResult distill_loss(const TwoTowerModel& student, const TwoTowerModel& teacher, const RefBatch& ref,
                        const Objective& opts, DistillAxis axis, const char* name) {
  require_same_arch(student, teacher, name);
  const Tower row_tower = axis == DistillAxis::kImageRows ? Tower::kImage : Tower::kText;
  const Tower col_tower = axis == DistillAxis::kImageRows ? Tower::kText : Tower::kImage;
  const Mat& row_x = axis == DistillAxis::kImageRows ? ref.images : ref.texts;
  const Mat& col_x = axis == DistillAxis::kImageRows ? ref.texts : ref.images;
  if (row_x.rows() < 1) throw PreconditionError(std::string(name) + ": reference batch has no rows to distill");
  if (col_x.rows() < 2) {
    throw PreconditionError(std::string(name) + ": need at least 2 " +
                            (axis == DistillAxis::kImageRows ? "texts" : "images"));
  }

  const Encoded rows = encode_traced(student, row_tower, row_x);
  const Encoded cols = encode_traced(student, col_tower, col_x);
  const Mat t_rows = teacher.encode_rows(row_tower, row_x);
  const Mat t_cols = teacher.encode_rows(col_tower, col_x);

  const bool fixed_tau = opts.distill_temperature.has_value();
  const double tau_s = fixed_tau ? *opts.distill_temperature : student.temperature();
  const double tau_t = fixed_tau ? *opts.distill_temperature : teacher.temperature();
  const Mat sim_s = matmul_transposed(rows.emb, cols.emb);
  const Mat sim_t = matmul_transposed(t_rows, t_cols);

  const std::size_t n = row_x.rows();
  Mat dlogits(n, col_x.rows());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Distribution p_teacher = similarity_distribution(sim_t.row(i), tau_t);
    const Distribution p_student = similarity_distribution(sim_s.row(i), tau_s);
    if (opts.literal_eq3) {
      loss += literal_ce(p_student, p_teacher, dlogits.row(i));
    } else {
      loss += cross_entropy(p_teacher, p_student);
      target_ce_grad(p_teacher, p_student, dlogits.row(i));
    }
  }
  for (double& v : dlogits.data()) v /= static_cast<double>(n);

  GradResult out;
  out.grad.assign(student.params().size(), 0.0);
  backprop_logits(student, dlogits, tau_s, !fixed_tau, row_tower, rows, col_tower, cols, out.grad);
  out.value.total = loss / static_cast<double>(n);
  out.value.components[name] = out.value.total;
  out.value.weights[name] = 1.0;
  return out;
}

void accumulate(GradResult& acc, const GradResult& term, const std::string& name, double weight) {
  acc.value.components[name] = term.value.total;
  acc.value.weights[name] = weight;
  if (weight == 0.0) return;
  acc.value.total += weight * term.value.total;
  for (std::size_t i = 0; i < acc.grad.size(); ++i) acc.grad[i] += weight * term.grad[i];
}

}  // namespace

double LossValue::component(const std::string& name) const {
  const auto it = components.find(name);
  return it == components.end() ? 0.0 : it->second;
}

Distribution smooth_targets(std::size_t label, std::size_t m, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) throw PreconditionError("smooth_targets: epsilon must be in [0, 1)");
  if (label >= m) throw PreconditionError("smooth_targets: label out of range");
  Vec t(m, eps / static_cast<double>(m));
  t[label] += 1.0 - eps;
  return Distribution{std::move(t)};
}

GradResult ce_loss(const TwoTowerModel& model, const Batch& batch, double eps) {
  return ce_loss(model, std::span<const Batch>(&batch, 1), eps);
}

GradResult ce_loss(const TwoTowerModel& model, std::span<const Batch> batches, double eps) {
  std::size_t total_n = 0;
  for (const auto& b : batches) {
    if (b.images.rows() != b.labels.size()) throw DimensionError("ce_loss: images/labels count mismatch");
    if (b.class_texts.rows() == 0) throw DegenerateInputError("ce_loss: batch has no classes");
    total_n += b.labels.size();
  }
  if (total_n == 0) throw DegenerateInputError("ce_loss: empty batch");

  GradResult out;
  out.grad.assign(model.params().size(), 0.0);
  const double tau = model.temperature();
  double loss = 0.0;
  for (const auto& b : batches) {
    if (b.labels.empty()) continue;
    const Encoded imgs = encode_traced(model, Tower::kImage, b.images);
    const Encoded txts = encode_traced(model, Tower::kText, b.class_texts);
    const Mat sim = matmul_transposed(imgs.emb, txts.emb);
    const std::size_t m = b.class_texts.rows();
    Mat dlogits(b.labels.size(), m);
    for (std::size_t i = 0; i < b.labels.size(); ++i) {
      const Distribution target = smooth_targets(b.labels[i], m, eps);
      const Distribution p = similarity_distribution(sim.row(i), tau);
      loss += cross_entropy(target, p);
      target_ce_grad(target, p, dlogits.row(i));
    }
    for (double& v : dlogits.data()) v /= static_cast<double>(total_n);
    backprop_logits(model, dlogits, tau, true, Tower::kImage, imgs, Tower::kText, txts, out.grad);
  }
  out.value.total = loss / static_cast<double>(total_n);
  out.value.components["ce"] = out.value.total;
  out.value.weights["ce"] = 1.0;
  return out;
}

Distribution similarity_distribution(std::span<const double> sim_row, double tau) {
  if (sim_row.size() < 2) throw DimensionError("similarity_distribution: need at least 2 entries");
  Vec z(sim_row.begin(), sim_row.end());
  for (double& v : z) v *= tau;
  return softmax(z);
}

GradResult distill_image_loss(const TwoTowerModel& student, const TwoTowerModel& teacher, const RefBatch& ref,
                              const Objective& opts) {
  return distill_loss(student, teacher, ref, opts, DistillAxis::kImageRows, "dist_img");
}

GradResult distill_text_loss(const TwoTowerModel& student, const TwoTowerModel& teacher, const RefBatch& ref,
                             const Objective& opts) {
  return distill_loss(student, teacher, ref, opts, DistillAxis::kTextRows, "dist_txt");
}

GradResult feature_distance_loss(const TwoTowerModel& student, const TwoTowerModel& teacher, const RefBatch& ref) {
  require_same_arch(student, teacher, "feature_distance_loss");
  const std::size_t count = ref.images.rows() + ref.texts.rows();
  if (count == 0) throw DegenerateInputError("feature_distance_loss: empty reference batch");
  GradResult out;
  out.grad.assign(student.params().size(), 0.0);
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  Vec de(student.arch().d_emb);
  for (Tower tower : {Tower::kImage, Tower::kText}) {
    const Mat& xs = tower == Tower::kImage ? ref.images : ref.texts;
    for (std::size_t r = 0; r < xs.rows(); ++r) {
      const TowerTrace tr = student.forward(tower, xs.row(r));
      const Vec te = teacher.encode(tower, xs.row(r));
      for (std::size_t k = 0; k < de.size(); ++k) {
        const double diff = tr.embedding[k] - te[k];
        loss += diff * diff;
        de[k] = 2.0 * diff * inv;
      }
      student.backward(tower, tr, de, out.grad);
    }
  }
  out.value.total = loss * inv;
  out.value.components["feat_dist"] = out.value.total;
  out.value.weights["feat_dist"] = 1.0;
  return out;
}

GradResult wc_loss(const ParamVector& theta, const ParamVector& anchor) {
  theta.require_same_layout(anchor, "wc_loss");
  GradResult out;
  out.grad.resize(theta.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta.values()[i] - anchor.values()[i];
    loss += d * d;
    out.grad[i] = 2.0 * d;
  }
  out.value.total = loss;
  out.value.components["wc"] = loss;
  out.value.weights["wc"] = 1.0;
  return out;
}

GradResult total_loss(const Objective& objective, const TwoTowerModel& student, const TwoTowerModel& teacher,
                      const ParamVector& wc_anchor, std::span<const Batch> ce_batches, const RefBatch* ref) {
  if (objective.lambda < 0.0 || objective.mu < 0.0) throw PreconditionError("total_loss: negative loss weight");
  if (objective.distill != DistillSides::kNone && ref == nullptr) {
    throw PreconditionError("total_loss: distillation requested without a reference batch");
  }
  GradResult acc;
  acc.grad.assign(student.params().size(), 0.0);
  accumulate(acc, ce_loss(student, ce_batches, objective.label_smoothing), "ce", 1.0);

  const bool img = objective.distill == DistillSides::kImage || objective.distill == DistillSides::kBoth;
  const bool txt = objective.distill == DistillSides::kText || objective.distill == DistillSides::kBoth;
  const bool feat = objective.distill == DistillSides::kFeatureDistance;
  acc.value.components["dist_img"] = 0.0;
  acc.value.components["dist_txt"] = 0.0;
  acc.value.components["feat_dist"] = 0.0;
  acc.value.components["wc"] = 0.0;
  for (const char* k : {"dist_img", "dist_txt", "feat_dist", "wc"}) acc.value.weights[k] = 0.0;
  if (img) accumulate(acc, distill_image_loss(student, teacher, *ref, objective), "dist_img", objective.lambda);
  if (txt) accumulate(acc, distill_text_loss(student, teacher, *ref, objective), "dist_txt", objective.lambda);
  if (feat) accumulate(acc, feature_distance_loss(student, teacher, *ref), "feat_dist", objective.lambda);
  if (objective.weight_consolidation) {
    accumulate(acc, wc_loss(student.params(), wc_anchor), "wc", objective.mu);
  }
  return acc;
}

}  // namespace zscl
