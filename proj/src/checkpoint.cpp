#include "flowlab/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace flowlab {

namespace {

using nlohmann::ordered_json;

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

void write_array(std::ostream& out, const Matrix<float>& m) {
  std::vector<std::uint32_t> words(static_cast<std::size_t>(m.size()));
  std::memcpy(words.data(), m.data(), words.size() * sizeof(float));
  for (auto& w : words) w = to_little(w);
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
}

void read_array(std::istream& in, Matrix<float>& m, const std::string& name) {
  std::vector<std::uint32_t> words(static_cast<std::size_t>(m.size()));
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (in.gcount() != static_cast<std::streamsize>(words.size() * 4)) {
    throw CheckpointError("checkpoint truncated while reading array " + name);
  }
  for (auto& w : words) w = to_little(w);
  std::memcpy(m.data(), words.data(), words.size() * sizeof(float));
}

ordered_json model_json(const DenoiserConfig& c, Index vocab_size) {
  return {{"latent_dim", c.latent_dim}, {"hidden", c.hidden},   {"layers", c.layers},
          {"heads", c.heads},           {"max_len", c.max_len}, {"dropout", c.dropout},
          {"rescale_max", c.rescale_max}, {"vocab_size", vocab_size}};
}

std::vector<std::pair<std::string, const Matrix<float>*>> layout(const LanguageModel& m, const std::string& prefix) {
  std::vector<std::pair<std::string, const Matrix<float>*>> out;
  for (const auto& a : m.net.arrays) out.emplace_back(prefix + a.name, &a.value);
  out.emplace_back(prefix + "embedding", &m.embedding.weights);
  return out;
}

template <typename T>
T field(const ordered_json& j, const char* key) {
  if (!j.contains(key)) throw CheckpointError(std::string("checkpoint header lacks '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header field '") + key + "': " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (ckpt.model.net.arrays.size() != ckpt.ema.net.arrays.size()) {
    throw CheckpointError("checkpoint EMA layout differs from the model layout");
  }
  auto arrays = layout(ckpt.model, "");
  auto ema = layout(ckpt.ema, "ema/");
  arrays.insert(arrays.end(), ema.begin(), ema.end());

  ordered_json header;
  header["format"] = kCheckpointFormat;
  header["version"] = kCheckpointVersion;
  header["stage"] = ckpt.stage;
  header["model"] = model_json(ckpt.model.net.config, ckpt.model.embedding.weights.rows());
  header["pred_target"] = to_string(ckpt.model.net.target);
  header["diffusion_steps"] = ckpt.diffusion_steps;
  header["flow_steps"] = ckpt.flow_steps;
  header["tgt_len"] = ckpt.tgt_len;
  header["vocab_hash"] = ckpt.vocab_hash;
  header["train_step"] = ckpt.train_step;
  header["seed"] = ckpt.seed;
  ordered_json list = ordered_json::array();
  for (const auto& [name, m] : arrays) list.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}});
  header["arrays"] = list;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  for (const auto& [name, m] : arrays) write_array(out, *m);
  if (!out) throw CheckpointError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_vocab_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("checkpoint has no header: " + path.string());
  ordered_json h;
  try {
    h = ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint header is not JSON: " + std::string(e.what()));
  }
  if (field<std::string>(h, "format") != kCheckpointFormat) throw CheckpointError("not a flowlab checkpoint");
  if (field<int>(h, "version") != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(field<int>(h, "version")));
  }

  Checkpoint c;
  c.stage = field<std::string>(h, "stage");
  c.diffusion_steps = field<int>(h, "diffusion_steps");
  c.flow_steps = field<int>(h, "flow_steps");
  c.tgt_len = field<int>(h, "tgt_len");
  c.vocab_hash = field<std::string>(h, "vocab_hash");
  c.train_step = field<long>(h, "train_step");
  c.seed = field<std::uint64_t>(h, "seed");
  if (!expected_vocab_hash.empty() && expected_vocab_hash != c.vocab_hash) {
    throw VocabMismatch("checkpoint vocab hash " + c.vocab_hash + " does not match vocab " + expected_vocab_hash);
  }

  const auto& mj = field<ordered_json>(h, "model");
  DenoiserConfig cfg;
  cfg.latent_dim = field<int>(mj, "latent_dim");
  cfg.hidden = field<int>(mj, "hidden");
  cfg.layers = field<int>(mj, "layers");
  cfg.heads = field<int>(mj, "heads");
  cfg.max_len = field<int>(mj, "max_len");
  cfg.dropout = field<double>(mj, "dropout");
  cfg.rescale_max = field<double>(mj, "rescale_max");
  const Index vocab_size = field<Index>(mj, "vocab_size");
  PredTarget target;
  try {
    target = parse_pred_target(field<std::string>(h, "pred_target"));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(e.what());
  }

  // Shapes come from a fresh init so the header cannot smuggle in a foreign layout.
  c.model.net = DenoiserParams<float>::init(cfg, target, 0);
  c.model.embedding.weights = Matrix<float>::Zero(vocab_size, cfg.latent_dim);
  c.ema = c.model;
  auto want = layout(c.model, "");
  auto want_ema = layout(c.ema, "ema/");
  want.insert(want.end(), want_ema.begin(), want_ema.end());

  const auto& list = field<ordered_json>(h, "arrays");
  if (list.size() != want.size()) {
    throw CheckpointError("checkpoint declares " + std::to_string(list.size()) + " arrays, expected " +
                          std::to_string(want.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    const auto name = field<std::string>(list[i], "name");
    const auto shape = field<std::vector<Index>>(list[i], "shape");
    const auto* m = want[i].second;
    if (name != want[i].first || shape.size() != 2 || shape[0] != m->rows() || shape[1] != m->cols()) {
      throw CheckpointError("checkpoint array " + std::to_string(i) + " is '" + name + "', expected '" +
                            want[i].first + "' " + shape_string(*m));
    }
  }
  for (const auto& [name, m] : want) read_array(in, const_cast<Matrix<float>&>(*m), name);
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after checkpoint arrays");
  return c;
}

std::string parameter_hash(const LanguageModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Matrix<float>* m : model.trainables()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(m->data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(m->size()) * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  }
  std::ostringstream s;
  s << std::hex << h;
  return s.str();
}

}  // namespace flowlab
