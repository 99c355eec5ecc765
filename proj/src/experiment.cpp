#include "zscl/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "zscl/error.hpp"

namespace zscl {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------- json reading

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Strips the "key: " prefix ConfigError adds, so errors can be re-keyed.
std::string bare_message(const ConfigError& e) {
  const std::string w = e.what();
  const std::string prefix = e.key() + ": ";
  return w.rfind(prefix, 0) == 0 ? w.substr(prefix.size()) : w;
}

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
}

void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : j.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!ok) throw ConfigError(join(path, key), "unknown key");
  }
}

const json* field(const json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

void read(const json& j, const char* key, const std::string& path, double& out) {
  if (const json* v = field(j, key)) {
    if (!v->is_number()) throw ConfigError(join(path, key), "expected a number");
    out = v->get<double>();
  }
}

void read(const json& j, const char* key, const std::string& path, std::size_t& out) {
  if (const json* v = field(j, key)) {
    if (v->is_number_unsigned()) {
      out = v->get<std::size_t>();
    } else if (v->is_number_integer() && v->get<std::int64_t>() >= 0) {
      out = static_cast<std::size_t>(v->get<std::int64_t>());
    } else {
      throw ConfigError(join(path, key), "expected a non-negative integer");
    }
  }
}

void read(const json& j, const char* key, const std::string& path, bool& out) {
  if (const json* v = field(j, key)) {
    if (!v->is_boolean()) throw ConfigError(join(path, key), "expected true or false");
    out = v->get<bool>();
  }
}

void read(const json& j, const char* key, const std::string& path, std::string& out) {
  if (const json* v = field(j, key)) {
    if (!v->is_string()) throw ConfigError(join(path, key), "expected a string");
    out = v->get<std::string>();
  }
}

void read(const json& j, const char* key, const std::string& path, std::vector<std::size_t>& out) {
  if (const json* v = field(j, key)) {
    if (!v->is_array()) throw ConfigError(join(path, key), "expected an array of integers");
    out.clear();
    for (const auto& e : *v) {
      if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<std::int64_t>() >= 0)) {
        throw ConfigError(join(path, key), "expected an array of non-negative integers");
      }
      out.push_back(e.get<std::size_t>());
    }
  }
}

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<DistillSides> kSides[] = {{DistillSides::kNone, "none"},
                                             {DistillSides::kImage, "image"},
                                             {DistillSides::kText, "text"},
                                             {DistillSides::kBoth, "both"},
                                             {DistillSides::kFeatureDistance, "feat_dist"}};
constexpr EnumName<DataSource> kDataSources[] = {{DataSource::kCurrentTask, "current_task"},
                                                 {DataSource::kReference, "reference"}};
constexpr EnumName<TextSource> kTextSources[] = {
    {TextSource::kReference, "reference"}, {TextSource::kRandom, "random"}, {TextSource::kTaskClasses, "task_classes"}};
constexpr EnumName<TeacherKind> kTeachers[] = {
    {TeacherKind::kInitial, "initial"}, {TeacherKind::kPrevious, "previous"}, {TeacherKind::kWise, "wise"}};
constexpr EnumName<AnchorKind> kAnchors[] = {{AnchorKind::kInitial, "initial"}, {AnchorKind::kPrevious, "previous"}};
constexpr EnumName<EvalMode> kEvalModes[] = {{EvalMode::kTaskIncremental, "task_incremental"},
                                             {EvalMode::kClassIncremental, "class_incremental"}};

template <typename E, std::size_t N>
const char* enum_name(E v, const EnumName<E> (&table)[N]) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

template <typename E, std::size_t N>
void read_enum(const json& j, const char* key, const std::string& path, E& out, const EnumName<E> (&table)[N]) {
  std::string s;
  if (!field(j, key)) return;
  read(j, key, path, s);
  for (const auto& e : table) {
    if (s == e.name) {
      out = e.value;
      return;
    }
  }
  std::string opts;
  for (const auto& e : table) opts += std::string(opts.empty() ? "" : ", ") + e.name;
  throw ConfigError(join(path, key), "unknown value '" + s + "' (expected one of: " + opts + ")");
}

// ---------------------------------------------------------------- sections

void read_domain(const json& j, const std::string& path, DomainSpec& d) {
  require_object(j, path);
  reject_unknown(j, path,
                 {"name", "classes", "train_per_class", "test_per_class", "prototype_scale", "sigma_img", "sigma_txt",
                  "seed", "concentration", "nuisance_rank", "nuisance_sigma"});
  if (!field(j, "name")) throw ConfigError(join(path, "name"), "missing required field");
  read(j, "name", path, d.name);
  read(j, "classes", path, d.classes);
  read(j, "train_per_class", path, d.train_per_class);
  read(j, "test_per_class", path, d.test_per_class);
  read(j, "prototype_scale", path, d.prototype_scale);
  read(j, "sigma_img", path, d.sigma_img);
  read(j, "sigma_txt", path, d.sigma_txt);
  read(j, "seed", path, d.seed);
  read(j, "concentration", path, d.concentration);
  read(j, "nuisance_rank", path, d.nuisance_rank);
  read(j, "nuisance_sigma", path, d.nuisance_sigma);
}

json write_domain(const DomainSpec& d) {
  return json{{"name", d.name},
              {"classes", d.classes},
              {"train_per_class", d.train_per_class},
              {"test_per_class", d.test_per_class},
              {"prototype_scale", d.prototype_scale},
              {"sigma_img", d.sigma_img},
              {"sigma_txt", d.sigma_txt},
              {"seed", d.seed},
              {"concentration", d.concentration},
              {"nuisance_rank", d.nuisance_rank},
              {"nuisance_sigma", d.nuisance_sigma}};
}

void read_benchmark(const json& j, const std::string& path, BenchmarkSpec& b) {
  require_object(j, path);
  reject_unknown(j, path, {"arch", "style_dims", "domains", "class_split", "corpus", "reference", "pretrain"});
  if (const json* a = field(j, "arch")) {
    const std::string p = join(path, "arch");
    require_object(*a, p);
    reject_unknown(*a, p, {"d_img", "d_txt", "d_emb", "image_hidden", "text_hidden"});
    read(*a, "d_img", p, b.arch.d_img);
    read(*a, "d_txt", p, b.arch.d_txt);
    read(*a, "d_emb", p, b.arch.d_emb);
    read(*a, "image_hidden", p, b.arch.image_hidden);
    read(*a, "text_hidden", p, b.arch.text_hidden);
  }
  read(j, "style_dims", path, b.style_dims);
  if (const json* ds = field(j, "domains")) {
    const std::string p = join(path, "domains");
    if (!ds->is_array()) throw ConfigError(p, "expected an array of domain objects");
    b.domains.clear();
    for (std::size_t i = 0; i < ds->size(); ++i) {
      DomainSpec d;
      d.seed = 101 + i;
      read_domain((*ds)[i], p + "[" + std::to_string(i) + "]", d);
      b.domains.push_back(d);
    }
  }
  if (const json* cs = field(j, "class_split")) {
    const std::string p = join(path, "class_split");
    require_object(*cs, p);
    reject_unknown(*cs, p, {"domain", "steps"});
    if (!field(*cs, "domain")) throw ConfigError(join(p, "domain"), "missing required field");
    if (!field(*cs, "steps")) throw ConfigError(join(p, "steps"), "missing required field");
    ClassSplit split;
    read_domain((*cs)["domain"], join(p, "domain"), split.domain);
    read(*cs, "steps", p, split.steps);
    b.class_split = split;
    if (!field(j, "domains")) b.domains.clear();
  }
  if (const json* c = field(j, "corpus")) {
    const std::string p = join(path, "corpus");
    require_object(*c, p);
    reject_unknown(*c, p, {"concepts_per_domain", "generic_concepts", "sigma_img", "sigma_txt"});
    read(*c, "concepts_per_domain", p, b.corpus.concepts_per_domain);
    read(*c, "generic_concepts", p, b.corpus.generic_concepts);
    read(*c, "sigma_img", p, b.corpus.sigma_img);
    read(*c, "sigma_txt", p, b.corpus.sigma_txt);
  }
  if (const json* r = field(j, "reference")) {
    const std::string p = join(path, "reference");
    require_object(*r, p);
    reject_unknown(*r, p, {"images", "texts", "random_texts", "domain_fraction", "sigma_img", "sigma_txt"});
    read(*r, "images", p, b.reference.images);
    read(*r, "texts", p, b.reference.texts);
    read(*r, "random_texts", p, b.reference.random_texts);
    read(*r, "domain_fraction", p, b.reference.domain_fraction);
    read(*r, "sigma_img", p, b.reference.sigma_img);
    read(*r, "sigma_txt", p, b.reference.sigma_txt);
  }
  if (const json* pt = field(j, "pretrain")) {
    const std::string p = join(path, "pretrain");
    require_object(*pt, p);
    reject_unknown(*pt, p, {"iterations", "batch_size", "lr", "min_accuracy_factor"});
    read(*pt, "iterations", p, b.pretrain.iterations);
    read(*pt, "batch_size", p, b.pretrain.batch_size);
    read(*pt, "lr", p, b.pretrain.lr);
    read(*pt, "min_accuracy_factor", p, b.pretrain.min_accuracy_factor);
  }
}

json write_benchmark_spec(const BenchmarkSpec& b) {
  json j;
  j["arch"] = json{{"d_img", b.arch.d_img},
                   {"d_txt", b.arch.d_txt},
                   {"d_emb", b.arch.d_emb},
                   {"image_hidden", b.arch.image_hidden},
                   {"text_hidden", b.arch.text_hidden}};
  j["style_dims"] = b.style_dims;
  if (b.class_split) {
    j["class_split"] = json{{"domain", write_domain(b.class_split->domain)}, {"steps", b.class_split->steps}};
  } else {
    json ds = json::array();
    for (const auto& d : b.domains) ds.push_back(write_domain(d));
    j["domains"] = ds;
  }
  j["corpus"] = json{{"concepts_per_domain", b.corpus.concepts_per_domain},
                     {"generic_concepts", b.corpus.generic_concepts},
                     {"sigma_img", b.corpus.sigma_img},
                     {"sigma_txt", b.corpus.sigma_txt}};
  j["reference"] = json{{"images", b.reference.images},
                        {"texts", b.reference.texts},
                        {"random_texts", b.reference.random_texts},
                        {"domain_fraction", b.reference.domain_fraction},
                        {"sigma_img", b.reference.sigma_img},
                        {"sigma_txt", b.reference.sigma_txt}};
  j["pretrain"] = json{{"iterations", b.pretrain.iterations},
                       {"batch_size", b.pretrain.batch_size},
                       {"lr", b.pretrain.lr},
                       {"min_accuracy_factor", b.pretrain.min_accuracy_factor}};
  return j;
}

void read_recipe(const json& j, const std::string& path, TrainRecipe& r) {
  require_object(j, path);
  reject_unknown(j, path,
                 {"distill_sides", "data_source", "text_source", "teacher", "teacher_alpha", "lambda", "ref_images",
                  "ref_texts", "wc", "wc_mu", "wc_anchor", "we", "we_interval", "we_carry_across_tasks", "wise_ft_post",
                  "wise_alpha", "wise_anchor", "replay", "replay_capacity", "lr", "iterations", "batch_size",
                  "label_smoothing", "weight_decay", "literal_eq3", "train_temperature", "distill_temperature"});
  read_enum(j, "distill_sides", path, r.distill_sides, kSides);
  read_enum(j, "data_source", path, r.data_source, kDataSources);
  read_enum(j, "text_source", path, r.text_source, kTextSources);
  read_enum(j, "teacher", path, r.teacher, kTeachers);
  read(j, "teacher_alpha", path, r.teacher_alpha);
  read(j, "lambda", path, r.lambda);
  read(j, "ref_images", path, r.ref_images);
  read(j, "ref_texts", path, r.ref_texts);
  read(j, "wc", path, r.wc);
  read(j, "wc_mu", path, r.wc_mu);
  read_enum(j, "wc_anchor", path, r.wc_anchor, kAnchors);
  read(j, "we", path, r.we);
  read(j, "we_interval", path, r.we_interval);
  read(j, "we_carry_across_tasks", path, r.we_carry_across_tasks);
  read(j, "wise_ft_post", path, r.wise_ft_post);
  read(j, "wise_alpha", path, r.wise_alpha);
  read_enum(j, "wise_anchor", path, r.wise_anchor, kAnchors);
  read(j, "replay", path, r.replay);
  read(j, "replay_capacity", path, r.replay_capacity);
  read(j, "lr", path, r.lr);
  read(j, "iterations", path, r.iterations);
  read(j, "batch_size", path, r.batch_size);
  read(j, "label_smoothing", path, r.label_smoothing);
  read(j, "weight_decay", path, r.weight_decay);
  read(j, "literal_eq3", path, r.literal_eq3);
  read(j, "train_temperature", path, r.train_temperature);
  if (const json* t = field(j, "distill_temperature")) {
    if (t->is_null()) {
      r.distill_temperature.reset();
    } else {
      double v = 0.0;
      read(j, "distill_temperature", path, v);
      r.distill_temperature = v;
    }
  }
}

json write_recipe(const TrainRecipe& r) {
  json j;
  j["distill_sides"] = enum_name(r.distill_sides, kSides);
  j["data_source"] = enum_name(r.data_source, kDataSources);
  j["text_source"] = enum_name(r.text_source, kTextSources);
  j["teacher"] = enum_name(r.teacher, kTeachers);
  j["teacher_alpha"] = r.teacher_alpha;
  j["lambda"] = r.lambda;
  j["ref_images"] = r.ref_images;
  j["ref_texts"] = r.ref_texts;
  j["wc"] = r.wc;
  j["wc_mu"] = r.wc_mu;
  j["wc_anchor"] = enum_name(r.wc_anchor, kAnchors);
  j["we"] = r.we;
  j["we_interval"] = r.we_interval;
  j["we_carry_across_tasks"] = r.we_carry_across_tasks;
  j["wise_ft_post"] = r.wise_ft_post;
  j["wise_alpha"] = r.wise_alpha;
  j["wise_anchor"] = enum_name(r.wise_anchor, kAnchors);
  j["replay"] = r.replay;
  j["replay_capacity"] = r.replay_capacity;
  j["lr"] = r.lr;
  j["iterations"] = r.iterations;
  j["batch_size"] = r.batch_size;
  j["label_smoothing"] = r.label_smoothing;
  j["weight_decay"] = r.weight_decay;
  j["literal_eq3"] = r.literal_eq3;
  j["train_temperature"] = r.train_temperature;
  j["distill_temperature"] = r.distill_temperature ? json(*r.distill_temperature) : json(nullptr);
  return j;
}

std::string fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::mt19937_64 seeded(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kInitTag = 0x1417;
constexpr std::uint32_t kOrderTag = 0x0ed2;

std::string step_stem(std::size_t k, const std::string& name) { return "step-" + std::to_string(k + 1) + "-" + name; }

}  // namespace

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
  if (label.empty()) throw ConfigError("label", "must not be empty");
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  try {
    recipe.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("recipe." + e.key(), bare_message(e));
  }
  try {
    benchmark.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("benchmark." + e.key(), bare_message(e));
  }
  resolve_order(*this);
}

std::vector<std::string> order_names() { return {"order-i", "order-ii", "reverse"}; }

std::vector<std::size_t> resolve_order(const ExperimentConfig& config) {
  const auto names = task_names(config.benchmark);
  const std::size_t n = names.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (!config.order.empty()) {
    if (config.order.size() != n) throw ConfigError("order", "must list every task exactly once");
    std::vector<bool> used(n, false);
    for (std::size_t k = 0; k < n; ++k) {
      auto it = std::find(names.begin(), names.end(), config.order[k]);
      if (it == names.end()) throw ConfigError("order", "unknown task '" + config.order[k] + "'");
      const auto i = static_cast<std::size_t>(it - names.begin());
      if (used[i]) throw ConfigError("order", "task '" + config.order[k] + "' listed twice");
      used[i] = true;
      idx[k] = i;
    }
    return idx;
  }
  if (config.order_name == "order-i") return idx;
  if (config.order_name == "reverse") {
    std::reverse(idx.begin(), idx.end());
    return idx;
  }
  if (config.order_name == "order-ii") {
    // A fixed shuffle, independent of the run seed.
    auto rng = seeded(n, kOrderTag);
    return sample_without_replacement(n, n, rng);
  }
  throw ConfigError("order", "unknown order '" + config.order_name + "'");
}

ExperimentConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError("<document>", std::string("malformed JSON: ") + e.what());
  }
  require_object(j, "");
  reject_unknown(j, "",
                 {"label", "method", "seed", "seeds", "order", "eval_mode", "output_dir", "pretrain_cache", "emit",
                  "benchmark", "recipe"});

  ExperimentConfig c;
  if (!field(j, "method")) throw ConfigError("method", "missing required field");
  std::string method;
  read(j, "method", "", method);
  c.recipe = preset(method);
  if (const json* r = field(j, "recipe")) read_recipe(*r, "recipe", c.recipe);

  c.label = method;
  read(j, "label", "", c.label);

  const json* one = field(j, "seed");
  const json* many = field(j, "seeds");
  if (one && many) throw ConfigError("seeds", "give either seed or seeds, not both");
  if (!one && !many) throw ConfigError("seed", "missing required field");
  if (one) {
    std::uint64_t s = 0;
    read(j, "seed", "", s);
    c.seeds = {s};
  } else {
    if (!many->is_array()) throw ConfigError("seeds", "expected an array of integers");
    c.seeds.clear();
    for (const auto& e : *many) {
      if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<std::int64_t>() >= 0)) {
        throw ConfigError("seeds", "expected non-negative integers");
      }
      c.seeds.push_back(e.get<std::uint64_t>());
    }
  }

  if (const json* o = field(j, "order")) {
    if (o->is_string()) {
      c.order_name = o->get<std::string>();
    } else if (o->is_array()) {
      for (const auto& e : *o) {
        if (!e.is_string()) throw ConfigError("order", "expected task names");
        c.order.push_back(e.get<std::string>());
      }
    } else {
      throw ConfigError("order", "expected a named order or a list of task names");
    }
  }
  read_enum(j, "eval_mode", "", c.eval_mode, kEvalModes);
  std::string out = c.output_dir.string();
  read(j, "output_dir", "", out);
  c.output_dir = out;
  std::string cache;
  read(j, "pretrain_cache", "", cache);
  c.pretrain_cache = cache;
  if (const json* e = field(j, "emit")) {
    require_object(*e, "emit");
    reject_unknown(*e, "emit", {"checkpoints", "iteration_logs"});
    read(*e, "checkpoints", "emit", c.emit.checkpoints);
    read(*e, "iteration_logs", "emit", c.emit.iteration_logs);
  }
  if (const json* b = field(j, "benchmark")) read_benchmark(*b, "benchmark", c.benchmark);

  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(read_file(path)); }

std::string serialize_config(const ExperimentConfig& c) {
  json j;
  j["label"] = c.label;
  j["method"] = c.recipe.method;
  j["seeds"] = c.seeds;
  if (c.order.empty()) {
    j["order"] = c.order_name;
  } else {
    j["order"] = c.order;
  }
  j["eval_mode"] = enum_name(c.eval_mode, kEvalModes);
  j["output_dir"] = c.output_dir.generic_string();
  j["pretrain_cache"] = c.pretrain_cache.generic_string();
  j["emit"] = json{{"checkpoints", c.emit.checkpoints}, {"iteration_logs", c.emit.iteration_logs}};
  j["benchmark"] = write_benchmark_spec(c.benchmark);
  j["recipe"] = write_recipe(c.recipe);
  return j.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.seeds.clear();
  c.output_dir.clear();
  c.pretrain_cache.clear();
  c.emit = EmitFlags{};
  return fnv1a(serialize_config(c));
}

std::string benchmark_hash(const BenchmarkSpec& spec) { return fnv1a(write_benchmark_spec(spec).dump()); }

// ---------------------------------------------------------------- files

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " into place");
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

namespace {

std::string mat_csv(const Mat& m, const std::vector<std::size_t>* labels) {
  std::string out;
  char buf[40];
  if (labels) out += "label,";
  for (std::size_t c = 0; c < m.cols(); ++c) out += (c ? ",x" : "x") + std::to_string(c);
  out += '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (labels) out += std::to_string((*labels)[r]) + ",";
    for (std::size_t c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%s%.17g", c ? "," : "", m(r, c));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace

std::vector<fs::path> write_benchmark(const Benchmark& bench, const fs::path& dir) {
  std::vector<fs::path> written;
  auto put = [&](const fs::path& p, const std::string& s) {
    write_file_atomic(p, s);
    written.push_back(p);
  };
  for (const auto& t : bench.tasks) {
    put(dir / t.name / "train.csv", mat_csv(t.train_images, &t.train_labels));
    put(dir / t.name / "test.csv", mat_csv(t.test_images, &t.test_labels));
    put(dir / t.name / "class_texts.csv", mat_csv(t.class_texts, nullptr));
  }
  put(dir / "reference" / "images.csv", mat_csv(bench.reference.images, nullptr));
  put(dir / "reference" / "texts.csv", mat_csv(bench.reference.texts, nullptr));
  put(dir / "reference" / "random_texts.csv", mat_csv(bench.reference.random_texts, nullptr));
  put(dir / "projection.csv", mat_csv(bench.world.projection, nullptr));
  return written;
}

// ---------------------------------------------------------------- metrics json

std::string metrics_json(const MetricReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["transfer"] = opt(r.transfer);
  j["avg"] = r.avg;
  j["last"] = r.last;
  j["tasks"] = r.names;
  json per = json::object();
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    per[r.names[i]] = json{{"transfer", opt(r.transfer_j[i])}, {"avg", r.avg_j[i]}, {"last", r.last_j[i]}};
  }
  j["per_dataset"] = per;
  return j.dump(2) + "\n";
}

MetricReport parse_metrics_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    auto opt = [](const json& v) -> std::optional<double> {
      if (v.is_null()) return std::nullopt;
      return v.get<double>();
    };
    MetricReport r;
    r.transfer = opt(j.at("transfer"));
    r.avg = j.at("avg").get<double>();
    r.last = j.at("last").get<double>();
    r.names = j.at("tasks").get<std::vector<std::string>>();
    for (const auto& n : r.names) {
      const json& p = j.at("per_dataset").at(n);
      r.transfer_j.push_back(opt(p.at("transfer")));
      r.avg_j.push_back(p.at("avg").get<double>());
      r.last_j.push_back(p.at("last").get<double>());
    }
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed metrics document: ") + e.what());
  }
}

// ---------------------------------------------------------------- runs

Prepared prepare(const BenchmarkSpec& spec, std::uint64_t seed, const fs::path& cache_dir) {
  Prepared p;
  p.bench = build_benchmark(spec, seed);
  p.checkpoint = cache_dir / ("pretrained-" + benchmark_hash(spec) + "-s" + std::to_string(seed) + ".ckpt");
  if (fs::exists(p.checkpoint)) {
    p.pretrained = load_checkpoint(p.checkpoint);
    if (p.pretrained.params().layout() != spec.arch.layout()) {
      throw LayoutMismatchError("cached checkpoint " + p.checkpoint.string() + " does not match the architecture");
    }
    p.from_cache = true;
    return p;
  }
  auto rng = seeded(seed, kInitTag);
  p.pretrained = pretrain_toy(TwoTowerModel::init(spec.arch, rng), p.bench, spec.pretrain, seed);
  std::ostringstream os;
  write_checkpoint(os, p.pretrained);
  write_file_atomic(p.checkpoint, os.str());
  return p;
}

std::string manifest_json(const RunManifest& m) {
  auto rel = [&](const fs::path& p) { return p.empty() ? std::string() : p.lexically_relative(m.dir).generic_string(); };
  json j;
  j["label"] = m.label;
  j["method"] = m.method;
  j["status"] = m.status;
  if (!m.error.empty()) j["error"] = m.error;
  j["config_hash"] = m.config_hash;
  j["benchmark_hash"] = m.benchmark_hash;
  j["seed"] = m.seed;
  j["task_order"] = m.task_order;
  j["pretrained"] = rel(m.pretrained);
  json ck = json::array();
  for (const auto& p : m.checkpoints) ck.push_back(rel(p));
  j["checkpoints"] = ck;
  json lg = json::array();
  for (const auto& p : m.logs) lg.push_back(rel(p));
  j["iteration_logs"] = lg;
  j["matrix"] = rel(m.matrix);
  j["metrics"] = rel(m.metrics);
  j["zero_shot_matrix"] = rel(m.zero_shot_matrix);
  j["zero_shot_metrics"] = rel(m.zero_shot_metrics);
  j["wall_clock_seconds"] = m.wall_clock_seconds;
  return j.dump(2) + "\n";
}

RunManifest load_manifest(const fs::path& path) {
  try {
    const json j = json::parse(read_file(path));
    RunManifest m;
    m.dir = path.parent_path();
    auto abs = [&](const json& v) {
      const std::string s = v.get<std::string>();
      return s.empty() ? fs::path() : (m.dir / s).lexically_normal();
    };
    m.label = j.at("label").get<std::string>();
    m.method = j.at("method").get<std::string>();
    m.status = j.at("status").get<std::string>();
    if (j.contains("error")) m.error = j.at("error").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.benchmark_hash = j.at("benchmark_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.task_order = j.at("task_order").get<std::vector<std::string>>();
    m.pretrained = abs(j.at("pretrained"));
    for (const auto& p : j.at("checkpoints")) m.checkpoints.push_back(abs(p));
    for (const auto& p : j.at("iteration_logs")) m.logs.push_back(abs(p));
    m.matrix = abs(j.at("matrix"));
    m.metrics = abs(j.at("metrics"));
    m.zero_shot_matrix = abs(j.at("zero_shot_matrix"));
    m.zero_shot_metrics = abs(j.at("zero_shot_metrics"));
    m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    return m;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
}

RunManifest run_seed(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest m;
  m.label = config.label;
  m.method = config.recipe.method;
  m.config_hash = config_hash(config);
  m.benchmark_hash = benchmark_hash(config.benchmark);
  m.seed = seed;
  m.dir = config.output_dir / ("seed-" + std::to_string(seed));
  fs::create_directories(m.dir);
  const fs::path manifest_path = m.dir / "manifest.json";
  const fs::path cache = config.pretrain_cache.empty() ? config.output_dir / "pretrained" : config.pretrain_cache;

  try {
    ExperimentConfig resolved = config;
    resolved.seeds = {seed};
    write_file_atomic(m.dir / "config.json", serialize_config(resolved));

    Prepared prep = prepare(config.benchmark, seed, cache);
    m.pretrained = prep.checkpoint;

    std::vector<TaskData> tasks;
    for (std::size_t i : resolve_order(config)) tasks.push_back(prep.bench.tasks[i]);
    for (const auto& t : tasks) m.task_order.push_back(t.name);

    const std::vector<TwoTowerModel> zs(tasks.size(), prep.pretrained);
    const AccuracyMatrix zs_matrix = build_matrix(zs, tasks, config.eval_mode);
    m.zero_shot_matrix = m.dir / "zeroshot_matrix.csv";
    m.zero_shot_metrics = m.dir / "zeroshot_metrics.json";
    write_file_atomic(m.zero_shot_matrix, matrix_csv(zs_matrix));
    write_file_atomic(m.zero_shot_metrics, metrics_json(compute_metrics(zs_matrix)));

    ContinualLearner learner(prep.pretrained, config.recipe, &prep.bench.reference, seed);
    std::vector<TwoTowerModel> snapshots;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      snapshots.push_back(learner.learn(tasks[k]));
      const std::string stem = step_stem(k, tasks[k].name);
      if (config.emit.checkpoints) {
        const fs::path p = m.dir / "checkpoints" / (stem + ".ckpt");
        std::ostringstream os;
        write_checkpoint(os, snapshots.back());
        write_file_atomic(p, os.str());
        m.checkpoints.push_back(p);
      }
      if (config.emit.iteration_logs) {
        const fs::path p = m.dir / "logs" / (stem + ".csv");
        write_file_atomic(p, iteration_log_csv(learner.last_log()));
        m.logs.push_back(p);
      }
    }

    const AccuracyMatrix matrix = build_matrix(snapshots, tasks, config.eval_mode);
    m.matrix = m.dir / "matrix.csv";
    m.metrics = m.dir / "metrics.json";
    write_file_atomic(m.matrix, matrix_csv(matrix));
    write_file_atomic(m.metrics, metrics_json(compute_metrics(matrix)));
  } catch (const std::exception& e) {
    m.status = "failed";
    m.error = e.what();
    m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    try {
      write_file_atomic(manifest_path, manifest_json(m));
    } catch (...) {
    }
    throw;
  }
  m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file_atomic(manifest_path, manifest_json(m));
  return m;
}

std::vector<RunManifest> run_experiment(const ExperimentConfig& config) {
  config.validate();
  std::vector<RunManifest> out;
  for (std::uint64_t s : config.seeds) out.push_back(run_seed(config, s));
  return out;
}

// ---------------------------------------------------------------- report

double median(std::vector<double> v) {
  if (v.empty()) throw DegenerateInputError("median: empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

ReportRow summarize(const std::string& label, const std::vector<MetricReport>& runs) {
  ReportRow row;
  row.label = label;
  row.runs = runs.size();
  std::vector<double> t, a, l;
  bool has_transfer = true;
  for (const auto& r : runs) {
    if (r.transfer) {
      t.push_back(*r.transfer);
    } else {
      has_transfer = false;
    }
    a.push_back(r.avg);
    l.push_back(r.last);
  }
  if (has_transfer) row.transfer = median(t);
  row.avg = median(a);
  row.last = median(l);
  return row;
}

}  // namespace

Report emit_report(const std::vector<RunManifest>& manifests) {
  if (manifests.empty()) throw PreconditionError("emit_report: no manifests");
  for (const auto& m : manifests) {
    if (m.benchmark_hash != manifests.front().benchmark_hash) {
      throw PreconditionError("emit_report: manifests come from different benchmarks (" + m.benchmark_hash + " vs " +
                              manifests.front().benchmark_hash + ")");
    }
    if (m.status != "ok") throw PreconditionError("emit_report: run " + m.dir.string() + " did not complete");
  }

  // Zero-shot once per seed; every label shares the same pretrained model per seed.
  std::map<std::uint64_t, MetricReport> zs_by_seed;
  std::vector<std::string> labels;
  std::map<std::string, std::vector<MetricReport>> by_label;
  for (const auto& m : manifests) {
    if (!zs_by_seed.count(m.seed)) zs_by_seed[m.seed] = parse_metrics_json(read_file(m.zero_shot_metrics));
    if (!by_label.count(m.label)) labels.push_back(m.label);
    by_label[m.label].push_back(parse_metrics_json(read_file(m.metrics)));
  }
  std::vector<MetricReport> zs;
  for (auto& [_, r] : zs_by_seed) zs.push_back(r);

  Report rep;
  rep.zero_shot = summarize("Zero-shot", zs);
  for (const auto& label : labels) {
    ReportRow row = summarize(label, by_label[label]);
    if (row.transfer && rep.zero_shot.transfer) row.d_transfer = *row.transfer - *rep.zero_shot.transfer;
    row.d_avg = row.avg - rep.zero_shot.avg;
    row.d_last = row.last - rep.zero_shot.last;
    rep.rows.push_back(row);
  }
  if (rep.zero_shot.transfer) rep.zero_shot.d_transfer = 0.0;
  return rep;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string opt_fmt(const char* f, const std::optional<double>& v) { return v ? fmt(f, *v) : std::string(); }

}  // namespace

std::string report_csv(const Report& r) {
  std::string out = "label,runs,transfer,avg,last,delta_transfer,delta_avg,delta_last\n";
  auto line = [&](const ReportRow& row) {
    out += row.label + "," + std::to_string(row.runs) + "," + opt_fmt("%.6f", row.transfer) + "," +
           fmt("%.6f", row.avg) + "," + fmt("%.6f", row.last) + "," + opt_fmt("%.6f", row.d_transfer) + "," +
           fmt("%.6f", row.d_avg) + "," + fmt("%.6f", row.d_last) + "\n";
  };
  line(r.zero_shot);
  for (const auto& row : r.rows) line(row);
  return out;
}

std::string report_text(const Report& r) {
  std::size_t w = 10;
  for (const auto& row : r.rows) w = std::max(w, row.label.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %5s %17s %17s %17s\n", static_cast<int>(w), "method", "runs", "Transfer",
                "Avg", "Last");
  out += buf;
  auto cell = [](const std::optional<double>& v, const std::optional<double>& d) {
    if (!v) return std::string("        -        ");
    char c[64];
    std::snprintf(c, sizeof c, "%5.1f (%+5.1f)", 100.0 * *v, 100.0 * d.value_or(0.0));
    return std::string(c);
  };
  auto line = [&](const ReportRow& row) {
    std::snprintf(buf, sizeof buf, "%-*s %5zu %17s %17s %17s\n", static_cast<int>(w), row.label.c_str(), row.runs,
                  cell(row.transfer, row.d_transfer).c_str(), cell(row.avg, row.d_avg).c_str(),
                  cell(row.last, row.d_last).c_str());
    out += buf;
  };
  line(r.zero_shot);
  for (const auto& row : r.rows) line(row);
  out += "accuracy in %, (delta vs zero-shot), medians across seeds\n";
  return out;
}

}  // namespace zscl
