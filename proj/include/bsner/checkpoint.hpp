#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsner/corpus.hpp"
#include "bsner/model.hpp"

namespace bsner {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Named-tensor archive of all model parameters plus the config manifest and
// the vocabularies needed to run the model standalone.
//
// On-disk layout:
//   magic "BSNER1\n"
//   uint64 LE manifest byte length
//   UTF-8 JSON manifest: {version, model_config, vocab, tensors:[{name, shape,
//     offset}]}  (offset is into the payload, in floats)
//   concatenated little-endian float32 payloads in directory order
struct Checkpoint {
  static constexpr int kVersion = 1;
  ModelConfig config;
  Vocab vocab;
  std::vector<std::pair<std::string, std::vector<float>>> tensors;
  std::vector<std::vector<int>> shapes;
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"embed_dim", c.embed_dim},
          {"lstm_hidden", c.lstm_hidden},
          {"lstm_dropout", c.lstm_dropout},
          {"affine_hidden", c.affine_hidden},
          {"affine_dropout", c.affine_dropout},
          {"width_embed_dim", c.width_embed_dim},
          {"max_width", c.max_width},
          {"type_count", c.type_count}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.lstm_hidden = j.value("lstm_hidden", c.lstm_hidden);
  c.lstm_dropout = j.value("lstm_dropout", c.lstm_dropout);
  c.affine_hidden = j.value("affine_hidden", c.affine_hidden);
  c.affine_dropout = j.value("affine_dropout", c.affine_dropout);
  c.width_embed_dim = j.value("width_embed_dim", c.width_embed_dim);
  c.max_width = j.value("max_width", c.max_width);
  c.type_count = j.value("type_count", c.type_count);
  return c;
}

inline Checkpoint checkpoint_from_model(Model& model, const Vocab& vocab) {
  Checkpoint ck;
  ck.config = model.cfg;
  ck.vocab = vocab;
  for (auto& [name, t] : model.named_params()) {
    ck.tensors.emplace_back(name, t->data);
    ck.shapes.push_back(t->shape);
  }
  return ck;
}

// Builds a model from a checkpoint; shape disagreement with the stored config
// is an error.
inline Model model_from_checkpoint(const Checkpoint& ck) {
  Model model(ck.config);
  auto params = model.named_params();
  if (params.size() != ck.tensors.size())
    throw CheckpointError("checkpoint tensor count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].first != ck.tensors[k].first ||
        params[k].second->shape != ck.shapes[k] ||
        params[k].second->data.size() != ck.tensors[k].second.size())
      throw CheckpointError("checkpoint shape mismatch for tensor '" + ck.tensors[k].first +
                            "'");
    params[k].second->data = ck.tensors[k].second;
  }
  return model;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  nlohmann::json manifest;
  manifest["version"] = Checkpoint::kVersion;
  manifest["model_config"] = model_config_to_json(ck.config);
  manifest["vocab"] = {{"tokens", ck.vocab.id_to_token}, {"types", ck.vocab.id_to_type}};
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t k = 0; k < ck.tensors.size(); ++k) {
    dir.push_back({{"name", ck.tensors[k].first},
                   {"shape", ck.shapes[k]},
                   {"offset", offset}});
    offset += ck.tensors[k].second.size();
  }
  manifest["tensors"] = dir;
  const std::string mjson = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
  os.write("BSNER1\n", 7);
  std::uint64_t len = mjson.size();
  char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((len >> (8 * i)) & 0xff);
  os.write(lenbuf, 8);
  os.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
  for (const auto& [name, data] : ck.tensors)
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!os) throw CheckpointError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open '" + path + "'");
  char magic[7];
  is.read(magic, 7);
  if (!is || std::memcmp(magic, "BSNER1\n", 7) != 0)
    throw CheckpointError("bad magic in '" + path + "'");
  char lenbuf[8];
  is.read(lenbuf, 8);
  if (!is) throw CheckpointError("truncated header in '" + path + "'");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i)
    len |= static_cast<std::uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
  std::string mjson(len, '\0');
  is.read(mjson.data(), static_cast<std::streamsize>(len));
  if (!is) throw CheckpointError("truncated manifest in '" + path + "'");
  nlohmann::json manifest = nlohmann::json::parse(mjson);
  if (manifest.at("version").get<int>() != Checkpoint::kVersion)
    throw CheckpointError("unsupported checkpoint version");

  Checkpoint ck;
  ck.config = model_config_from_json(manifest.at("model_config"));
  ck.vocab.id_to_token = manifest.at("vocab").at("tokens").get<std::vector<std::string>>();
  ck.vocab.id_to_type = manifest.at("vocab").at("types").get<std::vector<std::string>>();
  ck.vocab.token_to_id.clear();
  for (std::size_t i = 0; i < ck.vocab.id_to_token.size(); ++i)
    ck.vocab.token_to_id.emplace(ck.vocab.id_to_token[i], static_cast<int>(i));
  ck.vocab.type_to_id.clear();
  for (std::size_t i = 0; i < ck.vocab.id_to_type.size(); ++i)
    ck.vocab.type_to_id.emplace(ck.vocab.id_to_type[i], static_cast<int>(i));

  for (const auto& entry : manifest.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<float> data(static_cast<std::size_t>(n));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!is) throw CheckpointError("truncated payload for tensor '" + name + "'");
    ck.tensors.emplace_back(std::move(name), std::move(data));
    ck.shapes.push_back(std::move(shape));
  }
  return ck;
}

}  // namespace bsner
