#include "zscl/contlearn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "zscl/error.hpp"

namespace zscl {

// ---------------------------------------------------------------- recipes

void TrainRecipe::validate() const {
  auto unit = [](double a) { return a >= 0.0 && a <= 1.0; };
  if (!unit(teacher_alpha)) throw ConfigError("teacher_alpha", "must be in [0, 1]");
  if (!unit(wise_alpha)) throw ConfigError("wise_alpha", "must be in [0, 1]");
  if (!(lambda >= 0.0)) throw ConfigError("lambda", "must be >= 0");
  if (!(wc_mu >= 0.0)) throw ConfigError("wc_mu", "must be >= 0");
  if (!(lr >= 0.0)) throw ConfigError("lr", "must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be >= 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing", "must be in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size", "must be >= 1");
  if (we && we_interval == 0) throw ConfigError("we_interval", "must be >= 1");
  if (replay && replay_capacity == 0) throw ConfigError("replay_capacity", "must be >= 1 when replay is on");
  if (distill_temperature && !(*distill_temperature >= 0.0)) {
    throw ConfigError("distill_temperature", "must be >= 0");
  }
  if (distills()) {
    if (ref_images < 1) throw ConfigError("ref_images", "must be >= 1");
    const bool text_side = distill_sides == DistillSides::kText || distill_sides == DistillSides::kBoth;
    const bool image_side = distill_sides == DistillSides::kImage || distill_sides == DistillSides::kBoth;
    if (image_side && text_source != TextSource::kTaskClasses && ref_texts < 2) {
      throw ConfigError("ref_texts", "image-side distillation needs >= 2 texts");
    }
    if (text_side && ref_images < 2) throw ConfigError("ref_images", "text-side distillation needs >= 2 images");
  }
}

Objective TrainRecipe::objective() const {
  Objective o;
  o.label_smoothing = label_smoothing;
  o.distill = distill_sides;
  o.lambda = lambda;
  o.weight_consolidation = wc;
  o.mu = wc_mu;
  o.literal_eq3 = literal_eq3;
  o.distill_temperature = distill_temperature;
  return o;
}

std::vector<std::string> preset_names() { return {"FT", "LwF", "LwF-VR", "Replay", "WiSE-FT", "ZSCL*", "ZSCL"}; }

TrainRecipe preset(std::string_view name) {
  TrainRecipe r;
  r.method = std::string(name);
  if (name == "FT") return r;
  if (name == "LwF") {
    r.distill_sides = DistillSides::kBoth;
    r.data_source = DataSource::kCurrentTask;
    r.text_source = TextSource::kTaskClasses;
    r.teacher = TeacherKind::kPrevious;
    return r;
  }
  if (name == "LwF-VR") {
    r.distill_sides = DistillSides::kBoth;
    r.data_source = DataSource::kReference;
    r.text_source = TextSource::kRandom;
    r.teacher = TeacherKind::kPrevious;
    return r;
  }
  if (name == "Replay") {
    r.replay = true;
    r.replay_capacity = 200;
    return r;
  }
  if (name == "WiSE-FT") {
    r.wise_ft_post = true;
    r.wise_alpha = 0.5;
    r.wise_anchor = AnchorKind::kPrevious;
    return r;
  }
  if (name == "ZSCL*" || name == "ZSCL") {
    r.distill_sides = DistillSides::kBoth;
    r.data_source = DataSource::kReference;
    r.text_source = TextSource::kReference;
    r.teacher = TeacherKind::kInitial;
    r.we = true;
    r.we_interval = 100;
    if (name == "ZSCL") {
      r.wc = true;
      r.wc_anchor = AnchorKind::kInitial;
    }
    return r;
  }
  throw ConfigError("method", "unknown preset '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- optimizer

OptState make_opt_state(std::size_t n, const AdamWConfig& hp) { return OptState{Vec(n, 0.0), Vec(n, 0.0), 0, hp}; }

void optimizer_step(OptState& state, Vec& params, std::span<const double> grad, std::span<const std::uint8_t> trainable) {
  if (grad.size() != params.size() || state.m.size() != params.size()) {
    throw DimensionError("optimizer_step: length mismatch");
  }
  if (!trainable.empty() && trainable.size() != params.size()) throw DimensionError("optimizer_step: mask length");
  if (!all_finite(grad)) throw NonFiniteError("optimizer_step: non-finite gradient");
  const AdamWConfig& hp = state.hp;
  ++state.step;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable.empty() && !trainable[i]) continue;
    params[i] -= hp.lr * hp.weight_decay * params[i];
    state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * grad[i];
    state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= hp.lr * m_hat / (std::sqrt(v_hat) + hp.eps);
  }
}

std::pair<OptState, ParamVector> optimizer_step(const OptState& state, const ParamVector& params,
                                                std::span<const double> grad) {
  OptState next = state;
  Vec values = params.values();
  optimizer_step(next, values, grad);
  return {std::move(next), ParamVector(params.layout(), std::move(values))};
}

// ---------------------------------------------------------------- teacher and sampling

TwoTowerModel select_teacher(const TrainRecipe& recipe, const TwoTowerModel& initial, const TwoTowerModel& previous) {
  switch (recipe.teacher) {
    case TeacherKind::kInitial:
      return initial;
    case TeacherKind::kPrevious:
      return previous;
    case TeacherKind::kWise:
      return TwoTowerModel(initial.arch(),
                           wise_interpolate(initial.params(), previous.params(), recipe.teacher_alpha));
  }
  throw PreconditionError("select_teacher: unknown teacher kind");
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  if (count > n) throw PreconditionError("sample_without_replacement: count exceeds population");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  return idx;
}

namespace {

std::vector<std::size_t> draw(std::size_t pool, std::size_t count, std::mt19937_64& rng, bool& replaced) {
  if (count <= pool) return sample_without_replacement(pool, count, rng);
  replaced = true;
  std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
  std::vector<std::size_t> idx(count);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

}  // namespace

RefSample sample_ref_batch(const Mat& image_pool, const Mat& text_pool, std::size_t n_images, std::size_t n_texts,
                           std::mt19937_64& rng, bool text_side_active) {
  if (image_pool.rows() == 0 || text_pool.rows() == 0) throw PreconditionError("sample_ref_batch: empty pool");
  if (n_texts < 2) throw PreconditionError("sample_ref_batch: need at least 2 texts");
  if (text_side_active && n_images < 2) {
    throw PreconditionError("sample_ref_batch: text-side distillation needs at least 2 images");
  }
  RefSample out;
  const auto img_idx = draw(image_pool.rows(), n_images, rng, out.with_replacement);
  const auto txt_idx = draw(text_pool.rows(), n_texts, rng, out.with_replacement);
  out.batch.images = image_pool.gather_rows(img_idx);
  out.batch.texts = text_pool.gather_rows(txt_idx);
  return out;
}

RefSample sample_ref_batch(const ReferenceSet& ref, std::size_t n_images, std::size_t n_texts, std::mt19937_64& rng,
                           bool text_side_active) {
  return sample_ref_batch(ref.images, ref.texts, n_images, n_texts, rng, text_side_active);
}

// ---------------------------------------------------------------- replay

ReplayMemory update_replay_memory(ReplayMemory mem, const TaskData& task, std::mt19937_64& rng) {
  if (mem.capacity == 0) throw PreconditionError("update_replay_memory: capacity must be >= 1");
  const std::size_t task_id = mem.tasks_seen;
  const std::size_t seen = mem.tasks_seen + 1;
  if (mem.capacity < seen) throw PreconditionError("update_replay_memory: capacity smaller than number of tasks");
  const std::size_t quota = mem.capacity / seen;

  std::vector<Exemplar> kept;
  std::vector<std::size_t> per_task(seen, 0);
  for (auto& e : mem.items) {
    if (per_task[e.task_id] < quota) {
      ++per_task[e.task_id];
      kept.push_back(std::move(e));
    }
  }
  const std::size_t take = std::min(quota, task.train_images.rows());
  for (std::size_t i : sample_without_replacement(task.train_images.rows(), take, rng)) {
    kept.push_back({task.train_images.row_copy(i), task.train_labels[i], task_id});
  }
  mem.items = std::move(kept);
  mem.class_texts.push_back(task.class_texts);
  mem.tasks_seen = seen;
  return mem;
}

namespace {

std::vector<Batch> replay_batches(const ReplayMemory& mem, std::size_t count, std::mt19937_64& rng) {
  std::vector<Batch> out;
  if (mem.items.empty() || count == 0) return out;
  std::uniform_int_distribution<std::size_t> pick(0, mem.items.size() - 1);
  std::vector<std::vector<std::size_t>> by_task(mem.tasks_seen);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t k = pick(rng);
    by_task[mem.items[k].task_id].push_back(k);
  }
  for (std::size_t t = 0; t < by_task.size(); ++t) {
    if (by_task[t].empty()) continue;
    Batch b;
    std::vector<Vec> rows;
    for (std::size_t k : by_task[t]) {
      rows.push_back(mem.items[k].image);
      b.labels.push_back(mem.items[k].label);
    }
    b.images = Mat::from_rows(rows);
    b.class_texts = mem.class_texts[t];
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<std::uint8_t> trainable_mask(const TwoTowerModel& model, bool train_temperature) {
  std::vector<std::uint8_t> mask(model.params().size(), 1);
  if (!train_temperature) mask[model.params().layout().find(kLogTemperature).offset] = 0;
  return mask;
}

}  // namespace

// ---------------------------------------------------------------- training loop

TaskResult train_task(const TwoTowerModel& model, const TaskData& task, const TrainRecipe& recipe,
                      const ReferenceSet* ref, const TwoTowerModel& initial, ReplayMemory memory,
                      std::mt19937_64& rng, EnsembleState* ensemble) {
  recipe.validate();
  if (task.num_classes() == 0) throw DegenerateInputError("train_task: task has no classes");
  if (task.train_images.rows() == 0) throw DegenerateInputError("train_task: task has no training samples");
  if (recipe.distills() && recipe.data_source == DataSource::kReference && ref == nullptr) {
    throw PreconditionError("train_task: recipe distills on a reference set but none was given");
  }
  if (recipe.distills() && recipe.text_source != TextSource::kTaskClasses && ref == nullptr) {
    throw PreconditionError("train_task: recipe needs reference texts but no reference set was given");
  }

  const TwoTowerModel previous = model;
  const TwoTowerModel teacher = select_teacher(recipe, initial, previous);
  const ParamVector& wc_anchor =
      recipe.wc_anchor == AnchorKind::kInitial ? initial.params() : previous.params();
  const Objective objective = recipe.objective();
  const auto mask = trainable_mask(model, recipe.train_temperature);

  TaskResult result{model, std::move(memory), {}};
  TwoTowerModel& student = result.model;
  OptState opt = make_opt_state(student.params().size(), AdamWConfig{recipe.lr, 0.9, 0.999, 1e-8, recipe.weight_decay});

  EnsembleState local_ensemble;
  EnsembleState* ens = nullptr;
  if (recipe.we) {
    if (ensemble != nullptr && recipe.we_carry_across_tasks) {
      ens = ensemble;
      if (ens->average.size() == 0) *ens = we_init(student.params());
    } else {
      local_ensemble = we_init(student.params());
      ens = &local_ensemble;
    }
  }

  const bool text_side =
      recipe.distill_sides == DistillSides::kText || recipe.distill_sides == DistillSides::kBoth;
  const std::size_t batch_n = std::min(recipe.batch_size, task.train_images.rows());
  result.log.reserve(recipe.iterations);

  for (std::size_t it = 1; it <= recipe.iterations; ++it) {
    std::vector<Batch> batches(1);
    const auto idx = sample_without_replacement(task.train_images.rows(), batch_n, rng);
    batches[0].images = task.train_images.gather_rows(idx);
    batches[0].labels.reserve(idx.size());
    for (std::size_t i : idx) batches[0].labels.push_back(task.train_labels[i]);
    batches[0].class_texts = task.class_texts;
    if (recipe.replay) {
      for (auto& b : replay_batches(result.memory, recipe.batch_size, rng)) batches.push_back(std::move(b));
    }

    RefBatch distill_batch;
    if (recipe.distills()) {
      const Mat& image_pool = recipe.data_source == DataSource::kReference ? ref->images : task.train_images;
      const Mat& text_pool = recipe.text_source == TextSource::kTaskClasses ? task.class_texts
                             : recipe.text_source == TextSource::kRandom   ? ref->random_texts
                                                                           : ref->texts;
      const std::size_t n_texts =
          recipe.text_source == TextSource::kTaskClasses ? task.class_texts.rows() : recipe.ref_texts;
      distill_batch = sample_ref_batch(image_pool, text_pool, recipe.ref_images, n_texts, rng, text_side).batch;
    }

    GradResult g = total_loss(objective, student, teacher, wc_anchor, batches,
                              recipe.distills() ? &distill_batch : nullptr);
    if (!all_finite(g.grad) || !std::isfinite(g.value.total)) {
      throw NonFiniteError("train_task: non-finite loss or gradient at iteration " + std::to_string(it) + " of task '" +
                           task.name + "'");
    }
    optimizer_step(opt, student.mutable_values(), g.grad, mask);
    if (ens != nullptr && we_should_sample(it, recipe.we_interval)) we_update_in_place(*ens, student.params());

    const LossValue& v = g.value;
    result.log.push_back({it, v.component("ce"), v.component("dist_img"), v.component("dist_txt"),
                          v.component("feat_dist"), v.component("wc"), v.total});
  }

  if (ens != nullptr) student.set_params(ens->average);
  if (recipe.wise_ft_post) {
    const ParamVector& anchor = recipe.wise_anchor == AnchorKind::kInitial ? initial.params() : previous.params();
    student.set_params(wise_interpolate(anchor, student.params(), recipe.wise_alpha));
  }
  if (recipe.replay) result.memory = update_replay_memory(std::move(result.memory), task, rng);
  return result;
}

ContinualLearner::ContinualLearner(TwoTowerModel initial, TrainRecipe recipe, const ReferenceSet* ref,
                                   std::uint64_t seed)
    : initial_(std::move(initial)), current_(initial_), recipe_(std::move(recipe)), ref_(ref), rng_(seed) {
  recipe_.validate();
  memory_.capacity = recipe_.replay_capacity;
  if (recipe_.we && recipe_.we_carry_across_tasks) ensemble_ = we_init(initial_.params());
}

const TwoTowerModel& ContinualLearner::learn(const TaskData& task) {
  TaskResult r = train_task(current_, task, recipe_, ref_, initial_, std::move(memory_), rng_,
                            ensemble_ ? &*ensemble_ : nullptr);
  current_ = std::move(r.model);
  memory_ = std::move(r.memory);
  last_log_ = std::move(r.log);
  return current_;
}

std::string iteration_log_csv(std::span<const IterationLog> log) {
  std::ostringstream os;
  os.precision(17);
  os << "iter,ce,dist_img,dist_txt,wc,total\n";
  for (const auto& e : log) {
    os << e.iter << ',' << e.ce << ',' << e.dist_img << ',' << e.dist_txt << ',' << e.wc << ',' << e.total << '\n';
  }
  return os.str();
}

}  // namespace zscl
