#include "zscl/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "zscl/error.hpp"

namespace zscl {

namespace {

constexpr const char* kCheckpointMagic = "ZSCL-CKPT v1";

const char* tower_prefix(Tower t) { return t == Tower::kImage ? "image" : "text"; }

std::string join_widths(const std::vector<std::size_t>& w) {
  if (w.empty()) return "-";
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(w[i]);
  }
  return out;
}

std::vector<std::size_t> split_widths(const std::string& s) {
  std::vector<std::size_t> out;
  if (s == "-") return out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, 'x')) out.push_back(std::stoul(tok));
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) out.push_back(tok);
  return out;
}

}  // namespace

// ---------------------------------------------------------------- ParamLayout

ParamLayout::ParamLayout(std::vector<Segment> segments) : segments_(std::move(segments)) {
  std::size_t expected = 0;
  int temperature_count = 0;
  for (const auto& s : segments_) {
    if (s.offset != expected) throw PreconditionError("ParamLayout: segment '" + s.name + "' is not contiguous");
    expected += s.length;
    if (s.name == kLogTemperature) {
      ++temperature_count;
      if (s.length != 1) throw PreconditionError("ParamLayout: log_temperature must have length 1");
    }
  }
  if (temperature_count != 1) throw PreconditionError("ParamLayout: log_temperature must appear exactly once");
}

std::size_t ParamLayout::total() const noexcept {
  return segments_.empty() ? 0 : segments_.back().offset + segments_.back().length;
}

const Segment& ParamLayout::find(const std::string& name) const {
  for (const auto& s : segments_)
    if (s.name == name) return s;
  throw PreconditionError("ParamLayout: no segment named '" + name + "'");
}

bool ParamLayout::contains(const std::string& name) const {
  return std::any_of(segments_.begin(), segments_.end(), [&](const Segment& s) { return s.name == name; });
}

// ---------------------------------------------------------------- ParamVector

ParamVector::ParamVector(ParamLayout layout) : layout_(std::move(layout)), values_(layout_.total(), 0.0) {}

ParamVector::ParamVector(ParamLayout layout, Vec values) : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_.total()) throw DimensionError("ParamVector: values length does not match layout");
  if (!all_finite(values_)) throw NonFiniteError("ParamVector: non-finite value");
}

std::span<double> ParamVector::segment(const std::string& name) {
  const auto& s = layout_.find(name);
  return {values_.data() + s.offset, s.length};
}

std::span<const double> ParamVector::segment(const std::string& name) const {
  const auto& s = layout_.find(name);
  return {values_.data() + s.offset, s.length};
}

void ParamVector::require_same_layout(const ParamVector& other, const char* where) const {
  if (!(layout_ == other.layout_)) throw LayoutMismatchError(std::string(where) + ": parameter layouts differ");
}

// ---------------------------------------------------------------- Arch

std::vector<std::size_t> Arch::widths(Tower t) const {
  std::vector<std::size_t> w{input_dim(t)};
  const auto& hidden = t == Tower::kImage ? image_hidden : text_hidden;
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(d_emb);
  return w;
}

std::string layer_weight_name(Tower t, std::size_t layer) {
  return std::string(tower_prefix(t)) + ".l" + std::to_string(layer) + ".weight";
}

std::string layer_bias_name(Tower t, std::size_t layer) {
  return std::string(tower_prefix(t)) + ".l" + std::to_string(layer) + ".bias";
}

ParamLayout Arch::layout() const {
  if (d_img == 0 || d_txt == 0 || d_emb == 0) throw DimensionError("Arch: dimensions must be positive");
  std::vector<Segment> segs;
  std::size_t off = 0;
  for (Tower t : {Tower::kImage, Tower::kText}) {
    const auto w = widths(t);
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      if (w[l + 1] == 0) throw DimensionError("Arch: zero hidden width");
      segs.push_back({layer_weight_name(t, l), off, w[l + 1] * w[l]});
      off += w[l + 1] * w[l];
      segs.push_back({layer_bias_name(t, l), off, w[l + 1]});
      off += w[l + 1];
    }
  }
  segs.push_back({kLogTemperature, off, 1});
  return ParamLayout(std::move(segs));
}

// ---------------------------------------------------------------- TwoTowerModel

TwoTowerModel::TwoTowerModel(Arch arch, ParamVector params) : arch_(std::move(arch)), params_(std::move(params)) {
  if (!(params_.layout() == arch_.layout())) throw LayoutMismatchError("TwoTowerModel: layout inconsistent with arch");
  build_slots();
}

void TwoTowerModel::build_slots() {
  for (Tower t : {Tower::kImage, Tower::kText}) {
    auto& out = t == Tower::kImage ? image_slots_ : text_slots_;
    out.clear();
    const auto w = arch_.widths(t);
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      out.push_back({params_.layout().find(layer_weight_name(t, l)).offset,
                     params_.layout().find(layer_bias_name(t, l)).offset, w[l], w[l + 1]});
    }
  }
}

TwoTowerModel TwoTowerModel::init(const Arch& arch, std::mt19937_64& rng) {
  ParamVector p(arch.layout());
  for (Tower t : {Tower::kImage, Tower::kText}) {
    const auto w = arch.widths(t);
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(w[l]));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : p.segment(layer_weight_name(t, l))) v = u(rng);
      for (double& v : p.segment(layer_bias_name(t, l))) v = u(rng);
    }
  }
  p.segment(kLogTemperature)[0] = std::log(1.0 / 0.07);
  return TwoTowerModel(arch, std::move(p));
}

void TwoTowerModel::set_params(ParamVector p) {
  params_.require_same_layout(p, "TwoTowerModel::set_params");
  params_ = std::move(p);
}

double TwoTowerModel::log_temperature() const { return params_.segment(kLogTemperature)[0]; }
double TwoTowerModel::temperature() const { return std::exp(log_temperature()); }

TowerTrace TwoTowerModel::forward(Tower tower, std::span<const double> x) const {
  const auto& layers = slots(tower);
  if (x.size() != layers.front().in) throw DimensionError("encode: input dimension mismatch");
  if (!all_finite(x)) throw NonFiniteError("encode: non-finite input");
  const double* p = params_.values().data();
  TowerTrace tr;
  tr.activations.reserve(layers.size());
  tr.activations.emplace_back(x.begin(), x.end());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSlot& s = layers[l];
    const double* W = p + s.weight_offset;
    const double* b = p + s.bias_offset;
    const Vec& in = tr.activations.back();
    Vec z(s.out);
    for (std::size_t o = 0; o < s.out; ++o) {
      double acc = b[o];
      const double* row = W + o * s.in;
      for (std::size_t i = 0; i < s.in; ++i) acc += row[i] * in[i];
      z[o] = acc;
    }
    if (l + 1 < layers.size()) {
      for (double& v : z) v = std::tanh(v);
      tr.activations.push_back(std::move(z));
    } else {
      tr.pre_norm = std::move(z);
    }
  }
  tr.norm = norm2(tr.pre_norm);
  if (!(tr.norm > 0.0)) throw DegenerateInputError("encode: zero vector before normalization");
  tr.embedding = tr.pre_norm;
  for (double& v : tr.embedding) v /= tr.norm;
  return tr;
}

void TwoTowerModel::backward(Tower tower, const TowerTrace& trace, std::span<const double> d_embedding,
                             std::span<double> grad) const {
  const auto& layers = slots(tower);
  if (d_embedding.size() != arch_.d_emb) throw DimensionError("backward: embedding gradient dimension mismatch");
  if (grad.size() != params_.size()) throw DimensionError("backward: gradient buffer length mismatch");
  // d/du (u/|u|) applied to g: (g - e (e.g)) / |u|
  const double eg = dot(trace.embedding, d_embedding);
  Vec delta(arch_.d_emb);
  for (std::size_t k = 0; k < delta.size(); ++k) delta[k] = (d_embedding[k] - trace.embedding[k] * eg) / trace.norm;

  const double* p = params_.values().data();
  for (std::size_t l = layers.size(); l-- > 0;) {
    const LayerSlot& s = layers[l];
    const Vec& in = trace.activations[l];
    double* gW = grad.data() + s.weight_offset;
    double* gb = grad.data() + s.bias_offset;
    for (std::size_t o = 0; o < s.out; ++o) {
      gb[o] += delta[o];
      double* row = gW + o * s.in;
      for (std::size_t i = 0; i < s.in; ++i) row[i] += delta[o] * in[i];
    }
    if (l == 0) break;
    const double* W = p + s.weight_offset;
    Vec prev(s.in, 0.0);
    for (std::size_t o = 0; o < s.out; ++o) {
      const double* row = W + o * s.in;
      for (std::size_t i = 0; i < s.in; ++i) prev[i] += row[i] * delta[o];
    }
    for (std::size_t i = 0; i < prev.size(); ++i) prev[i] *= 1.0 - in[i] * in[i];
    delta = std::move(prev);
  }
}

Vec TwoTowerModel::encode(Tower tower, std::span<const double> x) const { return forward(tower, x).embedding; }
Vec TwoTowerModel::encode_image(std::span<const double> x) const { return encode(Tower::kImage, x); }
Vec TwoTowerModel::encode_text(std::span<const double> t) const { return encode(Tower::kText, t); }

Mat TwoTowerModel::encode_rows(Tower tower, const Mat& xs) const {
  Mat out(xs.rows(), arch_.d_emb);
  for (std::size_t r = 0; r < xs.rows(); ++r) {
    const Vec e = encode(tower, xs.row(r));
    std::copy(e.begin(), e.end(), out.row(r).begin());
  }
  return out;
}

std::size_t TwoTowerModel::predict(std::span<const double> x, const Mat& class_texts) const {
  if (class_texts.rows() == 0) throw DegenerateInputError("predict: empty class set");
  const Vec img = encode_image(x);
  const Mat txt = encode_rows(Tower::kText, class_texts);
  Vec scores(txt.rows());
  for (std::size_t j = 0; j < txt.rows(); ++j) scores[j] = dot(img, txt.row(j));
  return argmax_lowest(scores);
}

// ---------------------------------------------------------------- free functions

Mat similarity_matrix(const Mat& img_embs, const Mat& txt_embs) {
  if (img_embs.cols() != txt_embs.cols()) throw DimensionError("similarity_matrix: embedding dimension mismatch");
  for (const Mat* m : {&img_embs, &txt_embs}) {
    for (std::size_t r = 0; r < m->rows(); ++r) {
      if (std::abs(norm2(m->row(r)) - 1.0) > 1e-6) throw PreconditionError("similarity_matrix: rows must be unit-norm");
    }
  }
  return matmul_transposed(img_embs, txt_embs);
}

Mat logits(const Mat& sim, const ParamVector& params) {
  if (!all_finite(sim.data())) throw NonFiniteError("logits: non-finite similarity");
  const double tau = std::exp(params.segment(kLogTemperature)[0]);
  Mat out = sim;
  for (double& v : out.data()) v *= tau;
  return out;
}

std::size_t argmax_lowest(std::span<const double> scores) {
  if (scores.empty()) throw DegenerateInputError("argmax: empty score set");
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j)
    if (scores[j] > scores[best]) best = j;
  return best;
}

// ---------------------------------------------------------------- checkpoints

void write_checkpoint(std::ostream& os, const TwoTowerModel& model) {
  const Arch& a = model.arch();
  os << kCheckpointMagic << '\n';
  os << "d_img=" << a.d_img << ",d_txt=" << a.d_txt << ",d_emb=" << a.d_emb
     << ",image_hidden=" << join_widths(a.image_hidden) << ",text_hidden=" << join_widths(a.text_hidden)
     << ",activation=tanh";
  for (const auto& s : model.params().layout().segments()) os << ',' << s.name << ':' << s.offset << ':' << s.length;
  os << '\n';
  for (double v : model.params().values()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    char buf[8];
    std::memcpy(buf, &bits, 8);
    os.write(buf, 8);
  }
  if (!os) throw IoError("write_checkpoint: stream failure");
}

TwoTowerModel read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) throw IoError("read_checkpoint: bad header");
  if (!std::getline(is, line)) throw IoError("read_checkpoint: missing layout line");
  Arch arch;
  std::vector<Segment> segs;
  try {
    for (const auto& field : split(line, ',')) {
      const auto eq = field.find('=');
      if (eq != std::string::npos) {
        const std::string key = field.substr(0, eq);
        const std::string val = field.substr(eq + 1);
        if (key == "d_img") arch.d_img = std::stoul(val);
        else if (key == "d_txt") arch.d_txt = std::stoul(val);
        else if (key == "d_emb") arch.d_emb = std::stoul(val);
        else if (key == "image_hidden") arch.image_hidden = split_widths(val);
        else if (key == "text_hidden") arch.text_hidden = split_widths(val);
        else if (key == "activation") {
          if (val != "tanh") throw IoError("read_checkpoint: unsupported activation '" + val + "'");
        } else {
          throw IoError("read_checkpoint: unknown field '" + key + "'");
        }
        continue;
      }
      const auto parts = split(field, ':');
      if (parts.size() != 3) throw IoError("read_checkpoint: bad segment field '" + field + "'");
      segs.push_back({parts[0], std::stoul(parts[1]), std::stoul(parts[2])});
    }
  } catch (const std::logic_error&) {
    throw IoError("read_checkpoint: malformed number in layout line");
  }
  ParamLayout layout(std::move(segs));
  if (!(layout == arch.layout())) throw IoError("read_checkpoint: layout does not match arch");
  Vec values(layout.total());
  for (double& v : values) {
    char buf[8];
    if (!is.read(buf, 8)) throw IoError("read_checkpoint: truncated parameter block");
    std::uint64_t bits;
    std::memcpy(&bits, buf, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    v = std::bit_cast<double>(bits);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw IoError("read_checkpoint: trailing bytes");
  return TwoTowerModel(std::move(arch), ParamVector(std::move(layout), std::move(values)));
}

void save_checkpoint(const std::filesystem::path& path, const TwoTowerModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_checkpoint: cannot open " + path.string());
  write_checkpoint(os, model);
}

TwoTowerModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace zscl
