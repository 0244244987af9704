#pragma once

/**
 * HTTP embedding provider. Wire contract:
 *
 *   GET  /health                      -> {"status": "ok", "dim": D}
 *   POST /embed {"texts": [string]}   -> {"dim": D, "embeddings": [[real]]}
 *   POST /count {"texts": [string]}   -> {"counts": [integer]}
 */

#include "common.hpp"
#include "encoding.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <memory>
#include <string>
#include <thread>
#include <vector>

namespace turnroute {

struct SidecarOptions {
  size_t retries = 2;                         // extra attempts after the first
  std::chrono::milliseconds backoff{100};     // doubled after every failed attempt
  std::chrono::seconds timeout{60};
};

class SidecarProvider final : public EmbeddingProvider {
 public:
  explicit SidecarProvider(std::string url, SidecarOptions opt = {})
      : url_(std::move(url)), opt_(opt), client_(std::make_unique<httplib::Client>(url_)) {
    client_->set_connection_timeout(opt_.timeout);
    client_->set_read_timeout(opt_.timeout);
    client_->set_write_timeout(opt_.timeout);
    const nlohmann::json h = request("GET", "/health", nullptr);
    if (!h.is_object() || h.value("status", "") != "ok" || !h.contains("dim") || !h["dim"].is_number_unsigned()) {
      throw ContractError(describe() + ": /health must return {status: \"ok\", dim}");
    }
    dim_ = h["dim"].get<size_t>();
    if (dim_ == 0) throw ContractError(describe() + ": /health reported dimension 0");
  }

  [[nodiscard]] size_t dim() const override { return dim_; }
  [[nodiscard]] std::string describe() const override { return "sidecar(" + url_ + ")"; }
  // One connection per client; calls are serialized by the base class.
  [[nodiscard]] bool single_flight() const override { return true; }

 protected:
  std::vector<Vector> do_embed(std::span<const std::string> texts) override {
    const nlohmann::json body{{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
    const nlohmann::json r = request("POST", "/embed", &body);
    if (!r.is_object() || !r.contains("embeddings") || !r["embeddings"].is_array()) {
      throw ContractError(describe() + ": /embed response lacks an 'embeddings' array");
    }
    if (r.contains("dim") && r["dim"].is_number() && r["dim"].get<size_t>() != dim_) {
      throw ContractError(describe() + ": /embed reported dimension " + r["dim"].dump() + ", expected " +
                          std::to_string(dim_));
    }
    std::vector<Vector> out;
    for (const auto& row : r["embeddings"]) {
      if (!row.is_array()) throw ContractError(describe() + ": /embed row is not an array");
      Vector v(static_cast<Eigen::Index>(row.size()));
      for (size_t i = 0; i < row.size(); ++i) {
        if (!row[i].is_number()) throw ContractError(describe() + ": /embed row contains a non-number");
        v[static_cast<Eigen::Index>(i)] = row[i].get<double>();
      }
      out.push_back(std::move(v));
    }
    return out;
  }

  std::vector<size_t> do_count(std::span<const std::string> texts) override {
    const nlohmann::json body{{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
    const nlohmann::json r = request("POST", "/count", &body);
    if (!r.is_object() || !r.contains("counts") || !r["counts"].is_array()) {
      throw ContractError(describe() + ": /count response lacks a 'counts' array");
    }
    std::vector<size_t> out;
    for (const auto& c : r["counts"]) {
      if (!c.is_number_unsigned()) throw ContractError(describe() + ": /count returned a non-count value");
      out.push_back(c.get<size_t>());
    }
    return out;
  }

 private:
  nlohmann::json request(const std::string& method, const std::string& path, const nlohmann::json* body) {
    std::string last_error;
    auto delay = opt_.backoff;
    for (size_t attempt = 0; attempt <= opt_.retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
      const httplib::Result res =
          body ? client_->Post(path, body->dump(), "application/json") : client_->Get(path);
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw ContractError(describe() + ": " + method + " " + path + " returned HTTP " +
                            std::to_string(res->status) + ": " + res->body);
      }
      nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded()) throw ContractError(describe() + ": " + path + " returned malformed JSON");
      return j;
    }
    throw TransportError(describe() + ": " + method + " " + path + " failed after " +
                         std::to_string(opt_.retries + 1) + " attempts: " + last_error);
  }

  std::string url_;
  SidecarOptions opt_;
  std::unique_ptr<httplib::Client> client_;
  size_t dim_ = 0;
};

}  // namespace turnroute
