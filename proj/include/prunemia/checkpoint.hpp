#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunemia/mask.hpp"
#include "prunemia/mlp.hpp"

namespace prunemia {

// Model checkpoint: a magic line, a JSON header describing the spec and the
// tensor manifest, then the raw little-endian float64 payload in manifest
// order.
inline constexpr const char* kCheckpointMagic = "PRUNEMIA-CKPT-1";

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  MlpModel model;
  std::optional<prune::Mask> mask;
  std::string method;  // pruning metadata, empty for unpruned models
  double gamma = 0.0;
};

namespace detail_ckpt {

inline nlohmann::json tensor_entry(const std::string& name, const Tensor& t) {
  return nlohmann::json{{"name", name}, {"shape", t.shape()}};
}

inline void write_payload(std::ofstream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

inline Tensor read_payload(std::ifstream& in, const Shape& shape, const std::string& name) {
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!in) throw CheckpointError("checkpoint: truncated payload at tensor " + name);
  return t;
}

}  // namespace detail_ckpt

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json header;
  header["kind"] = "mlp";
  header["spec"] = {{"input_dim", ckpt.model.spec.input_dim},
                    {"hidden", ckpt.model.spec.hidden},
                    {"num_classes", ckpt.model.spec.num_classes}};
  header["has_scales"] = ckpt.model.has_scales();
  header["has_mask"] = ckpt.mask.has_value();
  header["method"] = ckpt.method;
  header["gamma"] = ckpt.gamma;
  nlohmann::json manifest = nlohmann::json::array();
  std::vector<const Tensor*> payload;
  auto push = [&](const std::string& name, const Tensor& t) {
    manifest.push_back(detail_ckpt::tensor_entry(name, t));
    payload.push_back(&t);
  };
  for (std::size_t i = 0; i < ckpt.model.weights.size(); ++i) {
    push("w" + std::to_string(i), ckpt.model.weights[i]);
    push("b" + std::to_string(i), ckpt.model.biases[i]);
  }
  for (std::size_t i = 0; i < ckpt.model.scales.size(); ++i)
    push("s" + std::to_string(i), ckpt.model.scales[i]);
  if (ckpt.mask) {
    for (std::size_t i = 0; i < ckpt.mask->weights.size(); ++i) {
      push("mask.w" + std::to_string(i), ckpt.mask->weights[i]);
      push("mask.b" + std::to_string(i), ckpt.mask->biases[i]);
    }
    for (std::size_t i = 0; i < ckpt.mask->scales.size(); ++i)
      push("mask.s" + std::to_string(i), ckpt.mask->scales[i]);
  }
  header["manifest"] = manifest;
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  out << kCheckpointMagic << '\n';
  const std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const Tensor* t : payload) detail_ckpt::write_payload(out, *t);
  if (!out) throw CheckpointError("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  std::string magic;
  if (!std::getline(in, magic) || magic != kCheckpointMagic)
    throw CheckpointError("checkpoint: bad magic in " + path + " (expected " +
                          std::string(kCheckpointMagic) + ")");
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in) throw CheckpointError("checkpoint: truncated header length");
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw CheckpointError("checkpoint: truncated header");
  nlohmann::json header = nlohmann::json::parse(htext, nullptr, /*allow_exceptions=*/false);
  if (header.is_discarded()) throw CheckpointError("checkpoint: malformed header JSON");

  Checkpoint ckpt;
  ckpt.model.spec.input_dim = header.at("spec").at("input_dim").get<std::int64_t>();
  ckpt.model.spec.hidden = header.at("spec").at("hidden").get<std::vector<std::int64_t>>();
  ckpt.model.spec.num_classes = header.at("spec").at("num_classes").get<std::int64_t>();
  ckpt.method = header.at("method").get<std::string>();
  ckpt.gamma = header.at("gamma").get<double>();
  if (header.at("has_mask").get<bool>()) ckpt.mask.emplace();

  for (const auto& entry : header.at("manifest")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    Tensor t = detail_ckpt::read_payload(in, shape, name);
    const bool is_mask = name.rfind("mask.", 0) == 0;
    const std::string base = is_mask ? name.substr(5) : name;
    std::vector<Tensor>* dst = nullptr;
    if (is_mask) {
      prune::Mask& mk = *ckpt.mask;
      dst = base[0] == 'w' ? &mk.weights : base[0] == 'b' ? &mk.biases : &mk.scales;
    } else {
      dst = base[0] == 'w' ? &ckpt.model.weights
            : base[0] == 'b' ? &ckpt.model.biases
                             : &ckpt.model.scales;
    }
    dst->push_back(std::move(t));
  }
  if (ckpt.model.weights.size() != ckpt.model.spec.hidden.size() + 1)
    throw CheckpointError("checkpoint: manifest does not match spec layer count");
  return ckpt;
}

}  // namespace prunemia
