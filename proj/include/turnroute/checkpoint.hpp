#pragma once

/**
 * Checkpoint file: one JSON document holding the network tensors, the feature
 * options the network was trained with, and an FNV-1a digest over the
 * serialized payload.
 */

#include "common.hpp"
#include "encoding.hpp"
#include "estimator.hpp"
#include "jsonl.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace turnroute {

inline constexpr int kCheckpointVersion = 1;

struct FeatureOptions {
  bool route_history = true;
  size_t history_token_budget = kDefaultHistoryBudget;
  bool hardcoded_encoder = false;
  bool ridge = false;
  bool error_penalty = true;
  friend bool operator==(const FeatureOptions&, const FeatureOptions&) = default;
};

struct Checkpoint {
  RouterNet net;
  std::string provider;  // EmbeddingProvider::describe() at training time
  FeatureOptions features;
  TrainConfig train;
  std::vector<EpochRecord> history;
};

namespace detail {

inline ojson tensor_json(const std::string& name, const Matrix& m) {
  ojson data = ojson::array();
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) data.push_back(m(r, c));
  }
  return ojson{{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix tensor_from_json(const ojson& j, const std::string& expected_name) {
  if (j.at("name").get<std::string>() != expected_name) {
    throw DataError("checkpoint: expected tensor '" + expected_name + "', found '" +
                    j.at("name").get<std::string>() + "'");
  }
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<size_t>(rows * cols)) {
    throw DataError("checkpoint: tensor '" + expected_name + "' has inconsistent shape");
  }
  Matrix m(rows, cols);
  size_t k = 0;
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = data[k++].get<double>();
  }
  return m;
}

inline ojson train_config_json(const TrainConfig& c) {
  return ojson{{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
               {"batch_size", c.batch_size},       {"max_epochs", c.max_epochs},
               {"patience", c.patience},           {"residual_l2", c.residual_l2},
               {"seed", c.seed},                   {"dropout", c.dropout},
               {"hidden", c.hidden},               {"lr_floor", c.lr_floor}};
}

inline TrainConfig train_config_from_json(const ojson& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<size_t>();
  c.max_epochs = j.at("max_epochs").get<size_t>();
  c.patience = j.at("patience").get<size_t>();
  c.residual_l2 = j.at("residual_l2").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  c.dropout = j.at("dropout").get<double>();
  c.hidden = j.at("hidden").get<std::vector<size_t>>();
  c.lr_floor = j.at("lr_floor").get<double>();
  return c;
}

}  // namespace detail

inline ojson checkpoint_payload(const Checkpoint& ck) {
  const RouterNet& n = ck.net;
  const auto& e = n.encoder;
  ojson tensors = ojson::array();
  tensors.push_back(detail::tensor_json("encoder.attr_w", e.attr_w));
  tensors.push_back(detail::tensor_json("encoder.attr_b", e.attr_b));
  tensors.push_back(detail::tensor_json("encoder.residuals", e.residuals));
  tensors.push_back(detail::tensor_json("encoder.proj_w", e.proj_w));
  tensors.push_back(detail::tensor_json("encoder.proj_b", e.proj_b));
  for (size_t l = 0; l < n.layers.size(); ++l) {
    tensors.push_back(detail::tensor_json("layers." + std::to_string(l) + ".w", n.layers[l].w));
    tensors.push_back(detail::tensor_json("layers." + std::to_string(l) + ".b", n.layers[l].b));
  }
  ojson history = ojson::array();
  for (const auto& r : ck.history) {
    history.push_back({{"epoch", r.epoch}, {"learning_rate", r.learning_rate}, {"train_loss", r.train_loss},
                       {"val_loss", r.val_loss}});
  }
  return ojson{
      {"version", kCheckpointVersion},
      {"model_ids", e.ids},
      {"input_dim", n.input_dim},
      {"encoder_dims", {{"attr_hidden", e.dims.attr_hidden}, {"residual", e.dims.residual}, {"out", e.dims.out}}},
      {"n_layers", n.layers.size()},
      {"dropout", n.dropout},
      {"provider", ck.provider},
      {"features",
       {{"route_history", ck.features.route_history},
        {"history_token_budget", ck.features.history_token_budget},
        {"hardcoded_encoder", ck.features.hardcoded_encoder},
        {"ridge", ck.features.ridge},
        {"error_penalty", ck.features.error_penalty}}},
      {"train", detail::train_config_json(ck.train)},
      {"history", std::move(history)},
      {"tensors", std::move(tensors)},
  };
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string payload = checkpoint_payload(ck).dump();
  ojson doc{{"digest", hex64(fnv1a64(payload))}, {"payload", payload}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << doc.dump(1) << '\n';
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string where = "checkpoint '" + path.string() + "'";
  ojson doc = ojson::parse(buf.str(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw DataError(where + ": malformed JSON");
  try {
    const std::string payload_text = doc.at("payload").get<std::string>();
    if (hex64(fnv1a64(payload_text)) != doc.at("digest").get<std::string>()) {
      throw DataError(where + ": digest mismatch");
    }
    const ojson p = ojson::parse(payload_text);
    if (p.at("version").get<int>() != kCheckpointVersion) {
      throw DataError(where + ": unsupported version " + std::to_string(p.at("version").get<int>()));
    }
    Checkpoint ck;
    ck.provider = p.at("provider").get<std::string>();
    const auto& f = p.at("features");
    ck.features.route_history = f.at("route_history").get<bool>();
    ck.features.history_token_budget = f.at("history_token_budget").get<size_t>();
    ck.features.hardcoded_encoder = f.at("hardcoded_encoder").get<bool>();
    ck.features.ridge = f.at("ridge").get<bool>();
    ck.features.error_penalty = f.at("error_penalty").get<bool>();
    ck.train = detail::train_config_from_json(p.at("train"));
    for (const auto& r : p.at("history")) {
      ck.history.push_back({r.at("epoch").get<size_t>(), r.at("learning_rate").get<double>(),
                            r.at("train_loss").get<double>(), r.at("val_loss").get<double>()});
    }
    RouterNet& n = ck.net;
    n.input_dim = p.at("input_dim").get<size_t>();
    n.dropout = p.at("dropout").get<double>();
    auto& e = n.encoder;
    e.ids = p.at("model_ids").get<std::vector<std::string>>();
    const auto& dims = p.at("encoder_dims");
    e.dims = {dims.at("attr_hidden").get<size_t>(), dims.at("residual").get<size_t>(), dims.at("out").get<size_t>()};
    e.hardcoded = ck.features.hardcoded_encoder;
    const auto& t = p.at("tensors");
    const size_t n_layers = p.at("n_layers").get<size_t>();
    if (t.size() != 5 + 2 * n_layers) throw DataError(where + ": wrong tensor count");
    e.attr_w = detail::tensor_from_json(t[0], "encoder.attr_w");
    e.attr_b = detail::tensor_from_json(t[1], "encoder.attr_b");
    e.residuals = detail::tensor_from_json(t[2], "encoder.residuals");
    e.proj_w = detail::tensor_from_json(t[3], "encoder.proj_w");
    e.proj_b = detail::tensor_from_json(t[4], "encoder.proj_b");
    size_t in_dim = n.input_dim + e.dims.out;
    for (size_t l = 0; l < n_layers; ++l) {
      DenseLayer layer;
      layer.w = detail::tensor_from_json(t[5 + 2 * l], "layers." + std::to_string(l) + ".w");
      layer.b = detail::tensor_from_json(t[6 + 2 * l], "layers." + std::to_string(l) + ".b");
      if (static_cast<size_t>(layer.w.cols()) != in_dim || layer.b.size() != layer.w.rows()) {
        throw DataError(where + ": layer " + std::to_string(l) + " has inconsistent shape");
      }
      in_dim = static_cast<size_t>(layer.w.rows());
      n.layers.push_back(std::move(layer));
    }
    if (n.layers.empty() || in_dim != 1) throw DataError(where + ": network must end in a scalar head");
    if (static_cast<size_t>(e.residuals.cols()) != e.ids.size() ||
        static_cast<size_t>(e.proj_w.rows()) != e.dims.out) {
      throw DataError(where + ": encoder tensors do not match declared dimensions");
    }
    if (!n.all_finite()) throw NumericError(where + ": non-finite parameters");
    return ck;
  } catch (const ojson::exception& ex) {
    throw DataError(where + ": " + ex.what());
  }
}

/// Rejects a checkpoint that cannot serve `pool` with `provider`, naming the field.
inline void check_compatible(const Checkpoint& ck, const ModelPool& pool, const EmbeddingProvider& provider) {
  if (ck.net.input_dim != provider.dim()) {
    throw ValidationError("checkpoint field 'input_dim' is " + std::to_string(ck.net.input_dim) + ", provider '" +
                          provider.describe() + "' has dimension " + std::to_string(provider.dim()));
  }
  if (ck.provider != provider.describe()) {
    throw ValidationError("checkpoint field 'provider' is '" + ck.provider + "', active provider is '" +
                          provider.describe() + "'");
  }
  for (const auto& d : pool.models()) {
    if (!ck.net.encoder.index_of(d.id)) {
      throw ValidationError("checkpoint field 'model_ids' has no entry for pool model '" + d.id + "'");
    }
  }
}

/// One row per model: id followed by the 64 components of z_a.
inline std::string model_embeddings_csv(const RouterNet& net, const ModelPool& pool) {
  std::string out = "model_id";
  for (size_t k = 0; k < net.encoder.dims.out; ++k) out += ",z" + std::to_string(k);
  out += '\n';
  for (const auto& d : pool.models()) {
    const Vector z = encode_model(net.encoder, d);
    out += d.id;
    for (Eigen::Index k = 0; k < z.size(); ++k) out += "," + format_double(z[k]);
    out += '\n';
  }
  return out;
}

}  // namespace turnroute
