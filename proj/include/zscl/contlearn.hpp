#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zscl/losses.hpp"
#include "zscl/model.hpp"
#include "zscl/task_data.hpp"
#include "zscl/weightspace.hpp"

namespace zscl {

/// Where distillation images come from.
enum class DataSource { kCurrentTask, kReference };
/// Where distillation texts come from.
enum class TextSource { kReference, kRandom, kTaskClasses };
enum class TeacherKind { kInitial, kPrevious, kWise };
/// Which parameters a parameter-space regularizer is tied to.
enum class AnchorKind { kInitial, kPrevious };

struct TrainRecipe {
  std::string method = "FT";

  DistillSides distill_sides = DistillSides::kNone;
  DataSource data_source = DataSource::kReference;
  TextSource text_source = TextSource::kReference;
  TeacherKind teacher = TeacherKind::kInitial;
  double teacher_alpha = 0.5;
  double lambda = 1.0;
  std::size_t ref_images = 64;
  std::size_t ref_texts = 64;

  bool wc = false;
  double wc_mu = 0.1;
  AnchorKind wc_anchor = AnchorKind::kInitial;

  bool we = false;
  std::size_t we_interval = 100;
  bool we_carry_across_tasks = false;

  bool wise_ft_post = false;
  double wise_alpha = 0.5;
  AnchorKind wise_anchor = AnchorKind::kPrevious;

  bool replay = false;
  std::size_t replay_capacity = 0;

  double lr = 1e-4;
  std::size_t iterations = 1000;
  std::size_t batch_size = 64;
  double label_smoothing = 0.2;
  double weight_decay = 0.0;
  bool literal_eq3 = false;
  bool train_temperature = false;
  std::optional<double> distill_temperature;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
  Objective objective() const;
  bool distills() const noexcept { return distill_sides != DistillSides::kNone; }

  friend bool operator==(const TrainRecipe&, const TrainRecipe&) = default;
};

/// Method presets: FT, LwF, LwF-VR, Replay, WiSE-FT, ZSCL*, ZSCL.
TrainRecipe preset(std::string_view name);
std::vector<std::string> preset_names();

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct OptState {
  Vec m;
  Vec v;
  std::size_t step = 0;
  AdamWConfig hp;
};

OptState make_opt_state(std::size_t n, const AdamWConfig& hp);

/// Bias-corrected Adam with decoupled weight decay. Entries whose `trainable`
/// flag is zero are left untouched; an empty mask trains everything.
/// Throws NonFiniteError (state untouched) when `grad` has a NaN or infinity.
void optimizer_step(OptState& state, Vec& params, std::span<const double> grad,
                    std::span<const std::uint8_t> trainable = {});
std::pair<OptState, ParamVector> optimizer_step(const OptState& state, const ParamVector& params,
                                                std::span<const double> grad);

TwoTowerModel select_teacher(const TrainRecipe& recipe, const TwoTowerModel& initial, const TwoTowerModel& previous);

struct RefSample {
  RefBatch batch;
  bool with_replacement = false;
};

/// Uniform draw without replacement from each pool; falls back to drawing with
/// replacement (and flags it) when a pool is smaller than the request.
RefSample sample_ref_batch(const Mat& image_pool, const Mat& text_pool, std::size_t n_images, std::size_t n_texts,
                           std::mt19937_64& rng, bool text_side_active = false);
RefSample sample_ref_batch(const ReferenceSet& ref, std::size_t n_images, std::size_t n_texts, std::mt19937_64& rng,
                           bool text_side_active = false);

/// `count` distinct indices from [0, n) in random order (partial Fisher-Yates).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, std::mt19937_64& rng);

struct Exemplar {
  Vec image;
  std::size_t label = 0;
  std::size_t task_id = 0;
};

struct ReplayMemory {
  std::size_t capacity = 0;
  std::vector<Exemplar> items;
  std::vector<Mat> class_texts;  // indexed by task id
  std::size_t tasks_seen = 0;
};

/// Adds `task` as the next task id and rebalances to capacity / tasks_seen per task.
ReplayMemory update_replay_memory(ReplayMemory mem, const TaskData& task, std::mt19937_64& rng);

struct IterationLog {
  std::size_t iter = 0;
  double ce = 0.0;
  double dist_img = 0.0;
  double dist_txt = 0.0;
  double feat_dist = 0.0;
  double wc = 0.0;
  double total = 0.0;
};

struct TaskResult {
  TwoTowerModel model;
  ReplayMemory memory;
  std::vector<IterationLog> log;
};

/// Trains one task. `ensemble` carries the weight ensemble across tasks when
/// the recipe asks for it; pass nullptr otherwise.
TaskResult train_task(const TwoTowerModel& model, const TaskData& task, const TrainRecipe& recipe,
                      const ReferenceSet* ref, const TwoTowerModel& initial, ReplayMemory memory,
                      std::mt19937_64& rng, EnsembleState* ensemble = nullptr);

/// Runs a recipe over a task sequence, keeping replay memory and ensemble state.
class ContinualLearner {
 public:
  ContinualLearner(TwoTowerModel initial, TrainRecipe recipe, const ReferenceSet* ref, std::uint64_t seed);

  /// Trains on the next task and returns the updated model.
  const TwoTowerModel& learn(const TaskData& task);

  const TwoTowerModel& model() const noexcept { return current_; }
  const TwoTowerModel& initial() const noexcept { return initial_; }
  const std::vector<IterationLog>& last_log() const noexcept { return last_log_; }

 private:
  TwoTowerModel initial_;
  TwoTowerModel current_;
  TrainRecipe recipe_;
  const ReferenceSet* ref_;
  std::mt19937_64 rng_;
  ReplayMemory memory_;
  std::optional<EnsembleState> ensemble_;
  std::vector<IterationLog> last_log_;
};

/// `iter,ce,dist_img,dist_txt,wc,total` CSV.
std::string iteration_log_csv(std::span<const IterationLog> log);

}  // namespace zscl
