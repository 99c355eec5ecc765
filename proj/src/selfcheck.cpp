#include "zscl/selfcheck.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "zscl/benchmark.hpp"
#include "zscl/error.hpp"
#include "zscl/contlearn.hpp"
#include "zscl/weightspace.hpp"

namespace zscl {

namespace {

Mat random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(r, c);
  for (double& v : m.data()) v = n(rng);
  return m;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

GradFixture make_grad_fixture(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(3, 6);
  Arch arch;
  arch.d_img = dim(rng);
  arch.d_txt = dim(rng);
  arch.d_emb = dim(rng);
  arch.image_hidden = {dim(rng)};
  arch.text_hidden = seed % 3 == 0 ? std::vector<std::size_t>{} : std::vector<std::size_t>{dim(rng)};

  GradFixture fx;
  fx.student = TwoTowerModel::init(arch, rng);
  fx.teacher = fx.student;
  std::normal_distribution<double> jitter(0.0, 0.2);
  for (double& v : fx.teacher.mutable_values()) v += jitter(rng);
  // Keep temperatures moderate so no probability sits at the floor.
  fx.student.mutable_values().back() = std::log(2.0 + static_cast<double>(seed % 5));
  fx.teacher.mutable_values().back() = std::log(3.0);
  fx.anchor = fx.teacher.params();

  const std::size_t n = 5, m = 4;
  fx.batch.images = random_mat(n, arch.d_img, rng);
  fx.batch.class_texts = random_mat(m, arch.d_txt, rng);
  std::uniform_int_distribution<std::size_t> lab(0, m - 1);
  for (std::size_t i = 0; i < n; ++i) fx.batch.labels.push_back(lab(rng));
  fx.ref.images = random_mat(4, arch.d_img, rng);
  fx.ref.texts = random_mat(6, arch.d_txt, rng);
  return fx;
}

std::vector<std::string> loss_names() { return {"ce", "dist_img", "dist_txt", "feat_dist", "wc", "total"}; }

GradResult loss_by_name(const std::string& name, const GradFixture& fx, const TwoTowerModel& student) {
  if (name == "ce") return ce_loss(student, fx.batch, 0.2);
  if (name == "dist_img") return distill_image_loss(student, fx.teacher, fx.ref);
  if (name == "dist_txt") return distill_text_loss(student, fx.teacher, fx.ref);
  if (name == "feat_dist") return feature_distance_loss(student, fx.teacher, fx.ref);
  if (name == "wc") return wc_loss(student.params(), fx.anchor);
  if (name == "total") {
    Objective o;
    o.distill = DistillSides::kBoth;
    o.weight_consolidation = true;
    o.lambda = 0.7;
    o.mu = 0.3;
    return total_loss(o, student, fx.teacher, fx.anchor, std::span<const Batch>(&fx.batch, 1), &fx.ref);
  }
  throw PreconditionError("loss_by_name: unknown loss '" + name + "'");
}

double gradient_error(const std::string& loss, const GradFixture& fx, double h) {
  const Vec analytic = loss_by_name(loss, fx, fx.student).grad;
  TwoTowerModel probe = fx.student;
  auto f = [&](const Vec& x) {
    probe.mutable_values() = x;
    return loss_by_name(loss, fx, probe).value.total;
  };
  const Vec numeric = finite_diff_grad(f, fx.student.params().values(), h);
  return max_relative_error(analytic, numeric);
}

std::vector<CheckResult> run_property_checks(std::size_t grad_configs) {
  std::vector<CheckResult> out;

  for (const auto& loss : loss_names()) {
    double worst = 0.0;
    for (std::size_t s = 0; s < grad_configs; ++s) worst = std::max(worst, gradient_error(loss, make_grad_fixture(s + 1)));
    out.push_back({"gradient:" + loss, worst <= 1e-5, "max rel err " + fmt("%.2e", worst)});
  }

  {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    const ParamLayout layout = Arch{}.layout();
    Vec sum(layout.total(), 0.0);
    ParamVector first(layout);
    for (double& v : first.values()) v = n(rng);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += first.values()[i];
    EnsembleState st = we_init(first);
    const std::size_t k = 1000;
    for (std::size_t t = 0; t < k; ++t) {
      ParamVector p(layout);
      for (double& v : p.values()) v = n(rng);
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += p.values()[i];
      we_update_in_place(st, p);
    }
    double err = 0.0;
    for (std::size_t i = 0; i < sum.size(); ++i) {
      err = std::max(err, std::abs(st.average.values()[i] - sum[i] / static_cast<double>(k + 1)));
    }
    out.push_back({"ensemble:running-mean", err <= 1e-12, "inf-norm " + fmt("%.2e", err)});
  }

  {
    std::mt19937_64 rng(12);
    const TwoTowerModel a = TwoTowerModel::init(Arch{}, rng), b = TwoTowerModel::init(Arch{}, rng);
    const bool ok = wise_interpolate(a.params(), b.params(), 0.0) == a.params() &&
                    wise_interpolate(a.params(), b.params(), 1.0) == b.params();
    out.push_back({"wise:endpoints", ok, ok ? "exact" : "endpoint mismatch"});

    std::ostringstream os;
    write_checkpoint(os, a);
    std::istringstream is(os.str());
    const bool same = read_checkpoint(is).params() == a.params();
    out.push_back({"checkpoint:round-trip", same, same ? "bit-exact" : "values differ"});
  }

  {
    AccuracyMatrix a{{"t1", "t2", "t3"}, Mat{{80, 50, 40}, {70, 90, 45}, {65, 85, 95}}};
    const MetricReport r = compute_metrics(a);
    const bool ok = r.transfer && std::abs(*r.transfer - 46.25) < 1e-4 && std::abs(r.avg - 68.8889) < 1e-4 &&
                    std::abs(r.last - 81.6667) < 1e-4;
    out.push_back({"metrics:hand-matrix", ok,
                   "transfer " + fmt("%.4f", r.transfer.value_or(NAN)) + " avg " + fmt("%.4f", r.avg) + " last " +
                       fmt("%.4f", r.last)});
  }

  {
    Vec theta{0.0};
    OptState st = make_opt_state(1, AdamWConfig{0.1});
    const Vec g{2.0};
    optimizer_step(st, theta, g);
    out.push_back({"adamw:first-step", std::abs(theta[0] + 0.1) <= 1e-6, "theta " + fmt("%.8f", theta[0])});
  }
  return out;
}

}  // namespace zscl
