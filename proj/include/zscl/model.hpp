#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "zscl/numerics.hpp"

namespace zscl {

/// One named contiguous slice of the flat parameter vector.
struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;

  friend bool operator==(const Segment&, const Segment&) = default;
};

inline constexpr const char* kLogTemperature = "log_temperature";

/// Ordered, contiguous, non-overlapping segments covering the whole vector.
class ParamLayout {
 public:
  ParamLayout() = default;
  /// Validates contiguity and the single log_temperature segment.
  explicit ParamLayout(std::vector<Segment> segments);

  const std::vector<Segment>& segments() const noexcept { return segments_; }
  std::size_t total() const noexcept;
  /// Throws PreconditionError when absent.
  const Segment& find(const std::string& name) const;
  bool contains(const std::string& name) const;

  friend bool operator==(const ParamLayout&, const ParamLayout&) = default;

 private:
  std::vector<Segment> segments_;
};

class ParamVector {
 public:
  ParamVector() = default;
  /// Zero-filled vector for `layout`.
  explicit ParamVector(ParamLayout layout);
  ParamVector(ParamLayout layout, Vec values);

  const ParamLayout& layout() const noexcept { return layout_; }
  const Vec& values() const noexcept { return values_; }
  Vec& values() noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> segment(const std::string& name);
  std::span<const double> segment(const std::string& name) const;

  /// Throws LayoutMismatchError unless layouts are identical.
  void require_same_layout(const ParamVector& other, const char* where) const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  ParamLayout layout_;
  Vec values_;
};

enum class Tower { kImage, kText };

struct Arch {
  std::size_t d_img = 32;
  std::size_t d_txt = 16;
  std::size_t d_emb = 16;
  std::vector<std::size_t> image_hidden{32};
  std::vector<std::size_t> text_hidden{32};

  /// Layer widths from input to embedding for one tower.
  std::vector<std::size_t> widths(Tower t) const;
  ParamLayout layout() const;
  std::size_t input_dim(Tower t) const { return t == Tower::kImage ? d_img : d_txt; }

  friend bool operator==(const Arch&, const Arch&) = default;
};

std::string layer_weight_name(Tower t, std::size_t layer);
std::string layer_bias_name(Tower t, std::size_t layer);

/// Cached activations of one tower pass, consumed by `backward`.
struct TowerTrace {
  std::vector<Vec> activations;  // activations[0] is the input
  Vec pre_norm;                  // final affine output before normalization
  double norm = 0.0;
  Vec embedding;                 // pre_norm / norm
};

/// MLP image and text towers with tanh hidden layers and L2-normalized outputs,
/// plus a shared log-temperature.
class TwoTowerModel {
 public:
  TwoTowerModel() = default;
  TwoTowerModel(Arch arch, ParamVector params);

  /// Uniform(±1/√fan_in) weights and biases; log_temperature = ln(1/0.07).
  static TwoTowerModel init(const Arch& arch, std::mt19937_64& rng);

  const Arch& arch() const noexcept { return arch_; }
  const ParamVector& params() const noexcept { return params_; }
  /// Direct access to the flat values; the layout stays fixed.
  Vec& mutable_values() noexcept { return params_.values(); }
  /// Replaces the parameters; throws LayoutMismatchError on a foreign layout.
  void set_params(ParamVector p);

  double log_temperature() const;
  double temperature() const;

  Vec encode_image(std::span<const double> x) const;
  Vec encode_text(std::span<const double> t) const;
  Vec encode(Tower tower, std::span<const double> x) const;
  /// Encodes every row of `xs`.
  Mat encode_rows(Tower tower, const Mat& xs) const;

  TowerTrace forward(Tower tower, std::span<const double> x) const;
  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(embedding).
  void backward(Tower tower, const TowerTrace& trace, std::span<const double> d_embedding,
                std::span<double> grad) const;

  /// Index of the highest-similarity class text; ties go to the lowest index.
  std::size_t predict(std::span<const double> x, const Mat& class_texts) const;

 private:
  struct LayerSlot {
    std::size_t weight_offset;
    std::size_t bias_offset;
    std::size_t in;
    std::size_t out;
  };
  const std::vector<LayerSlot>& slots(Tower t) const { return t == Tower::kImage ? image_slots_ : text_slots_; }
  void build_slots();

  Arch arch_;
  ParamVector params_;
  std::vector<LayerSlot> image_slots_;
  std::vector<LayerSlot> text_slots_;
};

/// Pairwise cosine similarities of unit-norm rows (N×m result).
Mat similarity_matrix(const Mat& img_embs, const Mat& txt_embs);
/// Similarities scaled by exp(log_temperature).
Mat logits(const Mat& sim, const ParamVector& params);
/// First index of the maximum; throws DegenerateInputError when empty.
std::size_t argmax_lowest(std::span<const double> scores);

// Checkpoints: header line, arch/layout line, then raw little-endian f64 values.
void write_checkpoint(std::ostream& os, const TwoTowerModel& model);
TwoTowerModel read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const TwoTowerModel& model);
TwoTowerModel load_checkpoint(const std::filesystem::path& path);

}  // namespace zscl
