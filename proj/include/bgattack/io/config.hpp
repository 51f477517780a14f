#pragma once

// INI run configuration. Sections: [dataset] [detector] [attack] [losses]
// [pa] [eval] [output]. Unknown sections or keys are rejected.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bgattack/attack.hpp"
#include "bgattack/detector.hpp"
#include "bgattack/errors.hpp"
#include "bgattack/metrics.hpp"
#include "bgattack/rng.hpp"
#include "bgattack/scene.hpp"

namespace bgattack::io {

enum class PlacementMode { Cell, Free };
enum class DetectorInit { MatchedFilter, Random, Zeros };

struct DatasetSpec {
  std::size_t count = 20;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 3;
  std::vector<std::string> sprite_kinds{"ring"};  // class id = position in this list
  std::size_t sprite_size = 6;
  std::size_t sprites_per_scene = 1;
  double background_fill = 0.5;
  std::uint64_t seed = 0;
  PlacementMode placement = PlacementMode::Cell;
  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct DetectorSpec {
  std::size_t cell_size = 8;
  std::size_t num_classes = 2;
  DetectorInit init = DetectorInit::MatchedFilter;
  std::uint64_t seed = 0;
  std::uint64_t model_b_seed = 1;
  double sigma = kHeadSigma;  // head std for Random init
  friend bool operator==(const DetectorSpec&, const DetectorSpec&) = default;
};

struct AttackSpec {
  std::size_t epochs = 50;
  std::size_t batch_size = 1;
  LrSchedule schedule;
  AmsGradConfig amsgrad;
  std::uint64_t seed = 0;
  std::uint64_t init_seed = 0;
  bool ensemble = false;
  EnsemblePhaseMode phase_mode = EnsemblePhaseMode::Preserve;
  std::size_t checkpoint_every = 0;  // 0 disables checkpoints
  std::size_t gradient_replicates = 1;
  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

struct RunConfig {
  DatasetSpec dataset;
  DetectorSpec detector;
  AttackSpec attack;
  LossWeights losses;
  PhysicalAdaptation pa;
  EvalConfig eval;
  std::string output_dir = "out";

  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seeds and counts share one reader");

template <class E>
struct EnumNames;

template <>
struct EnumNames<PlacementMode> {
  static constexpr std::pair<PlacementMode, const char*> items[] = {{PlacementMode::Cell, "cell"},
                                                                    {PlacementMode::Free, "free"}};
};
template <>
struct EnumNames<DetectorInit> {
  static constexpr std::pair<DetectorInit, const char*> items[] = {
      {DetectorInit::MatchedFilter, "matched_filter"},
      {DetectorInit::Random, "random"},
      {DetectorInit::Zeros, "zeros"}};
};
template <>
struct EnumNames<LrMode> {
  static constexpr std::pair<LrMode, const char*> items[] = {{LrMode::Constant, "constant"},
                                                             {LrMode::PolyDecay, "poly"}};
};
template <>
struct EnumNames<EnsemblePhaseMode> {
  static constexpr std::pair<EnsemblePhaseMode, const char*> items[] = {
      {EnsemblePhaseMode::Preserve, "preserve"}, {EnsemblePhaseMode::Literal, "literal"}};
};
template <>
struct EnumNames<TvMode> {
  static constexpr std::pair<TvMode, const char*> items[] = {
      {TvMode::Plain, "plain"},
      {TvMode::Adaptive, "adaptive"},
      {TvMode::AdaptiveBidirectional, "bidirectional"}};
};
template <>
struct EnumNames<BidirAnchor> {
  static constexpr std::pair<BidirAnchor, const char*> items[] = {
      {BidirAnchor::Successor, "successor"}, {BidirAnchor::Literal, "literal"}};
};
template <>
struct EnumNames<TvNormalization> {
  static constexpr std::pair<TvNormalization, const char*> items[] = {
      {TvNormalization::PerTerm, "per_term"}, {TvNormalization::Sum, "sum"}};
};

template <class E>
const char* enum_name(E e) {
  for (const auto& [v, n] : EnumNames<E>::items) {
    if (v == e) return n;
  }
  return "?";
}

inline std::string format_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// One INI section; every read marks the key as known.
class SectionReader {
 public:
  SectionReader(std::string name, const boost::property_tree::ptree* tree)
      : name_(std::move(name)), tree_(tree) {}

  void read(const char* key, std::size_t& out) {
    if (auto s = raw(key)) {
      std::uint64_t v = 0;
      if (!parse_full(*s, v)) fail(key, "a non-negative integer", *s);
      out = static_cast<std::size_t>(v);
    }
  }
  void read(const char* key, double& out) {
    if (auto s = raw(key)) {
      double v = 0.0;
      if (!parse_full(*s, v) || !std::isfinite(v)) fail(key, "a finite number", *s);
      out = v;
    }
  }
  void read(const char* key, bool& out) {
    if (auto s = raw(key)) {
      if (*s == "true") {
        out = true;
      } else if (*s == "false") {
        out = false;
      } else {
        fail(key, "true or false", *s);
      }
    }
  }
  void read(const char* key, std::string& out) {
    if (auto s = raw(key)) out = *s;
  }
  void read(const char* key, std::vector<std::string>& out) {
    if (auto s = raw(key)) {
      std::vector<std::string> items;
      std::istringstream in(*s);
      std::string item;
      while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) fail(key, "a comma-separated list of names", *s);
        items.push_back(item);
      }
      if (items.empty()) fail(key, "a comma-separated list of names", *s);
      out = std::move(items);
    }
  }
  template <class E>
    requires std::is_enum_v<E>
  void read(const char* key, E& out) {
    if (auto s = raw(key)) {
      std::string allowed;
      for (const auto& [v, n] : EnumNames<E>::items) {
        if (*s == n) {
          out = v;
          return;
        }
        allowed += (allowed.empty() ? "" : "|") + std::string(n);
      }
      fail(key, "one of " + allowed, *s);
    }
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [k, v] : *tree_) {
      if (!known_.count(k)) throw ConfigError("unknown key [" + name_ + "] " + k);
    }
  }

 private:
  std::optional<std::string> raw(const char* key) {
    known_.insert(key);
    if (!tree_) return std::nullopt;
    auto it = tree_->find(key);
    if (it == tree_->not_found()) return std::nullopt;
    return trim(it->second.data());
  }

  template <class T>
  static bool parse_full(const std::string& s, T& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    if (b != e && *b == '+') ++b;
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc{} && p == e && b != e;
  }

  [[noreturn]] void fail(const char* key, const std::string& expected, const std::string& got) const {
    throw ConfigError("[" + name_ + "] " + key + ": expected " + expected + ", got '" + got + "'");
  }

  std::string name_;
  const boost::property_tree::ptree* tree_;
  std::set<std::string> known_;
};

/// Visits every (section, key, field) triple; shared by parse and serialize.
template <class RC, class F>
void visit_fields(RC& rc, F&& f) {
  auto& d = rc.dataset;
  f("dataset", "count", d.count);
  f("dataset", "height", d.height);
  f("dataset", "width", d.width);
  f("dataset", "channels", d.channels);
  f("dataset", "sprite_kinds", d.sprite_kinds);
  f("dataset", "sprite_size", d.sprite_size);
  f("dataset", "sprites_per_scene", d.sprites_per_scene);
  f("dataset", "background_fill", d.background_fill);
  f("dataset", "seed", d.seed);
  f("dataset", "placement", d.placement);

  auto& det = rc.detector;
  f("detector", "cell_size", det.cell_size);
  f("detector", "num_classes", det.num_classes);
  f("detector", "init", det.init);
  f("detector", "seed", det.seed);
  f("detector", "model_b_seed", det.model_b_seed);
  f("detector", "sigma", det.sigma);

  auto& a = rc.attack;
  f("attack", "epochs", a.epochs);
  f("attack", "batch_size", a.batch_size);
  f("attack", "alpha", a.schedule.alpha0);
  f("attack", "schedule", a.schedule.mode);
  f("attack", "exponent", a.schedule.exponent);
  f("attack", "beta1", a.amsgrad.beta1);
  f("attack", "beta2", a.amsgrad.beta2);
  f("attack", "eps", a.amsgrad.eps);
  f("attack", "seed", a.seed);
  f("attack", "init_seed", a.init_seed);
  f("attack", "ensemble", a.ensemble);
  f("attack", "phase_mode", a.phase_mode);
  f("attack", "checkpoint_every", a.checkpoint_every);
  f("attack", "gradient_replicates", a.gradient_replicates);

  auto& l = rc.losses;
  f("losses", "eta", l.eta);
  f("losses", "lambda", l.lambda);
  f("losses", "delta", l.delta);
  f("losses", "eps_w", l.eps_w);
  f("losses", "tv_mode", l.tv_mode);
  f("losses", "bidir_anchor", l.bidir_anchor);
  f("losses", "tv_normalization", l.tv_normalization);
  f("losses", "grid_n", l.grid_n);

  auto& p = rc.pa;
  f("pa", "contrast_lo", p.contrast.lo);
  f("pa", "contrast_hi", p.contrast.hi);
  f("pa", "brightness_lo", p.brightness.lo);
  f("pa", "brightness_hi", p.brightness.hi);
  f("pa", "noise_sigma", p.noise_sigma);
  f("pa", "seed", p.rng_seed);

  auto& e = rc.eval;
  f("eval", "conf_threshold", e.conf_threshold);
  f("eval", "iou_threshold", e.iou_threshold);
  f("eval", "nms_iou", e.nms_iou);

  f("output", "dir", rc.output_dir);
}

inline constexpr const char* kSections[] = {"dataset", "detector", "attack", "losses",
                                            "pa",      "eval",     "output"};

}  // namespace detail

inline void RunConfig::validate() const {
  const auto& d = dataset;
  if (d.count < 1) throw ConfigError("[dataset] count must be >= 1");
  if (d.height < 2 || d.width < 2) throw ConfigError("[dataset] height and width must be >= 2");
  if (d.channels < 1) throw ConfigError("[dataset] channels must be >= 1");
  if (d.sprites_per_scene < 1) throw ConfigError("[dataset] sprites_per_scene must be >= 1");
  if (d.sprite_size < 2 || d.sprite_size > std::min(d.height, d.width)) {
    throw ConfigError("[dataset] sprite_size must lie in [2, min(height, width)]");
  }
  if (!(d.background_fill >= 0.0 && d.background_fill <= 1.0)) {
    throw ConfigError("[dataset] background_fill must lie in [0, 1]");
  }
  for (const auto& k : d.sprite_kinds) {
    if (k != "ring" && k != "disk" && k != "cross" && k != "checker") {
      throw ConfigError("[dataset] sprite_kinds: unknown kind '" + k + "' (ring|disk|cross|checker)");
    }
  }
  if (detector.cell_size < 1 || detector.cell_size > std::min(d.height, d.width)) {
    throw ConfigError("[detector] cell_size must lie in [1, min(height, width)]");
  }
  if (d.placement == PlacementMode::Cell && d.sprite_size > detector.cell_size) {
    throw ConfigError("[dataset] placement=cell needs sprite_size <= [detector] cell_size");
  }
  if (detector.num_classes < d.sprite_kinds.size()) {
    throw ConfigError("[detector] num_classes must be >= the number of sprite kinds");
  }
  if (!(detector.sigma >= 0.0)) throw ConfigError("[detector] sigma must be >= 0");
  if (attack.epochs < 1) throw ConfigError("[attack] epochs must be >= 1");
  if (attack.batch_size < 1) throw ConfigError("[attack] batch_size must be >= 1");
  if (attack.gradient_replicates < 1) throw ConfigError("[attack] gradient_replicates must be >= 1");
  if (losses.grid_n < 2 || losses.grid_n > std::min(d.height, d.width)) {
    throw ConfigError("[losses] grid_n must lie in [2, min(height, width)]");
  }
  auto tagged = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("[") + section + "] " + e.what());
    }
  };
  tagged("attack", [&] {
    attack.schedule.validate();
    attack.amsgrad.validate();
  });
  tagged("losses", [&] { losses.validate(); });
  tagged("pa", [&] { pa.validate(); });
  tagged("eval", [&] { eval.validate(); });
  if (output_dir.empty()) throw ConfigError("[output] dir must not be empty");
}

inline RunConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("malformed config (line " + std::to_string(e.line()) + "): " + e.message());
  }
  std::map<std::string, detail::SectionReader> readers;
  for (const char* s : detail::kSections) {
    auto it = tree.find(s);
    readers.emplace(s, detail::SectionReader(s, it == tree.not_found() ? nullptr : &it->second));
  }
  for (const auto& [name, sub] : tree) {
    if (!readers.count(name)) {
      if (sub.empty()) throw ConfigError("key '" + name + "' must be inside a section");
      throw ConfigError("unknown section [" + name + "]");
    }
  }
  RunConfig rc;
  detail::visit_fields(rc, [&](const char* sec, const char* key, auto& field) {
    readers.at(sec).read(key, field);
  });
  for (const auto& [name, r] : readers) r.reject_unknown();
  rc.validate();
  return rc;
}

inline std::string serialize_config(const RunConfig& rc) {
  std::string out;
  std::string current;
  detail::visit_fields(rc, [&](const char* sec, const char* key, const auto& field) {
    using T = std::decay_t<decltype(field)>;
    if (current != sec) {
      out += (out.empty() ? "[" : "\n[") + std::string(sec) + "]\n";
      current = sec;
    }
    out += std::string(key) + " = ";
    if constexpr (std::is_same_v<T, double>) {
      out += detail::format_exact(field);
    } else if constexpr (std::is_same_v<T, bool>) {
      out += field ? "true" : "false";
    } else if constexpr (std::is_same_v<T, std::string>) {
      out += field;
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      for (std::size_t i = 0; i < field.size(); ++i) out += (i ? "," : "") + field[i];
    } else if constexpr (std::is_enum_v<T>) {
      out += detail::enum_name(field);
    } else {
      out += std::to_string(field);
    }
    out += '\n';
  });
  return out;
}

// ---- builders ---------------------------------------------------------------

inline std::vector<Sprite> build_sprites(const RunConfig& rc) {
  std::vector<Sprite> out;
  for (std::size_t k = 0; k < rc.dataset.sprite_kinds.size(); ++k) {
    out.push_back(make_sprite(rc.dataset.sprite_kinds[k], rc.dataset.sprite_size,
                              rc.dataset.channels, k));
  }
  return out;
}

inline std::uint64_t scene_seed(std::uint64_t dataset_seed, std::size_t index) {
  return splitmix64(splitmix64(dataset_seed) + index);
}

/// Scene i holds sprites_per_scene sprites with kinds taken round-robin from
/// position i.
inline std::vector<Scene> build_dataset(const RunConfig& rc) {
  const auto& d = rc.dataset;
  const auto kinds = build_sprites(rc);
  Placement pl;
  if (d.placement == PlacementMode::Cell) {
    pl.stride = rc.detector.cell_size;
    pl.offset = (rc.detector.cell_size - d.sprite_size) / 2;
  }
  std::vector<Scene> scenes;
  scenes.reserve(d.count);
  for (std::size_t i = 0; i < d.count; ++i) {
    std::vector<Sprite> sprites;
    for (std::size_t j = 0; j < d.sprites_per_scene; ++j) {
      sprites.push_back(kinds[(i + j) % kinds.size()]);
    }
    scenes.push_back(generate_scene(scene_seed(d.seed, i), sprites,
                                    Canvas{d.height, d.width, d.channels}, d.background_fill, pl));
  }
  return scenes;
}

/// Matched-filter init calibrates against the first sprite kind.
inline ToyGridDetector build_detector(const RunConfig& rc, std::uint64_t seed) {
  const auto& s = rc.detector;
  switch (s.init) {
    case DetectorInit::MatchedFilter:
      return matched_filter_init(build_sprites(rc).front(), s.cell_size, s.num_classes, seed);
    case DetectorInit::Random:
      return ToyGridDetector::random(s.cell_size, rc.dataset.channels, s.num_classes, seed, s.sigma);
    case DetectorInit::Zeros:
      break;
  }
  return ToyGridDetector::zeros(s.cell_size, rc.dataset.channels, s.num_classes);
}

inline AttackConfig build_attack_config(const RunConfig& rc) {
  AttackConfig cfg;
  cfg.epochs = rc.attack.epochs;
  cfg.batch_size = rc.attack.batch_size;
  cfg.loss_weights = rc.losses;
  cfg.schedule = rc.attack.schedule;
  cfg.amsgrad = rc.attack.amsgrad;
  cfg.pa = rc.pa;
  cfg.seed = rc.attack.seed;
  cfg.gradient_replicates = rc.attack.gradient_replicates;
  if (rc.attack.ensemble) {
    cfg.ensemble = EnsembleConfig{rc.losses.grid_n, rc.attack.phase_mode,
                                  AnyDetector(build_detector(rc, rc.detector.model_b_seed))};
  }
  return cfg;
}

inline Shape perturbation_shape(const RunConfig& rc) {
  return {rc.dataset.height, rc.dataset.width, rc.dataset.channels};
}

}  // namespace bgattack::io
