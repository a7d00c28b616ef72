#include "flowlab/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace flowlab {

namespace {

using nlohmann::json;

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }
  ~Section() = default;

  // Call after reading every known key.
  void reject_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + path_ + "." + it.key() + "'");
    }
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + path_ + "." + key + "' has the wrong type");
    }
  }

  template <typename Enum, typename Parse>
  void read_enum(const char* key, Enum& out, Parse parse) {
    std::string name;
    seen_.insert(key);
    if (!j_.contains(key)) return;
    read(key, name);
    try {
      out = parse(name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("config key '" + path_ + "." + key + "': " + e.what());
    }
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), path_ + "." + key);
  }

 private:
  std::string where() const { return "config section '" + path_ + "'"; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_train(Section& s, TrainConfig& c) {
  s.read("lr", c.lr);
  s.read("batch_size", c.batch_size);
  s.read("epochs", c.epochs);
  s.read("warmup_steps", c.warmup_steps);
  s.read("dropout", c.dropout);
  s.read("ema_decay", c.ema_decay);
  s.read("flow_steps", c.flow_steps);
  s.read("reg_rate", c.reg_rate);
  s.read_enum("loss_mode", c.loss_mode, parse_loss_mode);
  s.read_enum("pred_target", c.pred_target, parse_pred_target);
  s.read_enum("time_strategy", c.time_strategy, parse_time_strategy);
  s.read("logit_mu", c.logit_mu);
  s.read("logit_sigma", c.logit_sigma);
  s.read("grad_clip", c.grad_clip);
  s.reject_unknown();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig rc;
  Section top(root, "config");
  top.read("seed", rc.seed);
  top.read("probe_size", rc.probe_size);
  top.read("timing_repeats", rc.timing_repeats);

  if (auto d = top.child("data")) {
    d->read_enum("task", rc.data.task, parse_task);
    d->read("pairs", rc.data.pairs);
    d->read("min_len", rc.data.lengths.min);
    d->read("max_len", rc.data.lengths.max);
    d->read("vocab_size", rc.data.vocab_size);
    d->read("splits", rc.data.splits);
    d->read("jsonl", rc.data.jsonl);
    d->read("tgt_len", rc.data.tgt_len);
    d->reject_unknown();
  }
  if (auto m = top.child("model")) {
    m->read("latent_dim", rc.model.latent_dim);
    m->read("hidden", rc.model.hidden);
    m->read("layers", rc.model.layers);
    m->read("heads", rc.model.heads);
    m->read("max_len", rc.model.max_len);
    m->read("rescale_max", rc.model.rescale_max);
    m->read("embed_std", rc.embed_std);
    m->reject_unknown();
  }
  if (auto d = top.child("diffusion")) {
    d->read("steps", rc.diffusion_steps);
    d->reject_unknown();
  }
  if (auto p = top.child("pretrain")) read_train(*p, rc.pretrain);
  if (auto f = top.child("finetune")) read_train(*f, rc.finetune);
  if (auto s = top.child("sample")) {
    s->read_enum("sampler", rc.sample.sampler, parse_sampler);
    s->read("steps", rc.sample.steps);
    s->read("mbr", rc.sample.mbr);
    s->read("clamp", rc.sample.clamp);
    s->reject_unknown();
  }
  top.reject_unknown();

  if (rc.diffusion_steps < 1) throw ConfigError("diffusion.steps must be at least 1");
  if (rc.sample.steps < 1) throw ConfigError("sample.steps must be at least 1");
  if (rc.sample.mbr < 1) throw ConfigError("sample.mbr must be at least 1");
  if (rc.probe_size < 1) throw ConfigError("probe_size must be at least 1");
  if (rc.timing_repeats < 3) throw ConfigError("timing_repeats must be at least 3");
  if (rc.model.hidden % rc.model.heads != 0) throw ConfigError("model.hidden must be a multiple of model.heads");
  set_run_seed(rc, rc.seed);
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void set_run_seed(RunConfig& rc, std::uint64_t seed) {
  rc.seed = seed;
  rc.pretrain.seed = derive_seed(seed, "pretrain");
  rc.finetune.seed = derive_seed(seed, "finetune");
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  std::uint64_t h = 0xcbf29ce484222325ull ^ seed;
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

}  // namespace flowlab
