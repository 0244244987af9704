#include "support.hpp"

#include <gtest/gtest.h>
#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <thread>

using namespace turnroute;
using namespace turnroute::testing;

namespace {

enum class Mode { ok, fail_once, always_500, bad_request, malformed, wrong_dim, short_batch };

/// In-process stand-in for the embedding sidecar.
class MockSidecar {
 public:
  explicit MockSidecar(size_t dim) : dim_(dim) {
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      ++hits_;
      res.set_content(nlohmann::json{{"status", "ok"}, {"dim", dim_}}.dump(), "application/json");
    });
    server_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++hits_;
      if (!respond_with_mode(n, res)) return;
      const auto texts = nlohmann::json::parse(req.body).at("texts");
      nlohmann::json rows = nlohmann::json::array();
      const size_t width = mode_ == Mode::wrong_dim ? dim_ + 1 : dim_;
      const size_t n_rows = mode_ == Mode::short_batch ? texts.size() - 1 : texts.size();
      for (size_t i = 0; i < n_rows; ++i) {
        std::vector<double> v(width);
        const auto len = static_cast<double>(texts[i].get<std::string>().size());
        for (size_t k = 0; k < width; ++k) v[k] = len + static_cast<double>(k);
        rows.push_back(v);
      }
      res.set_content(nlohmann::json{{"embeddings", rows}}.dump(), "application/json");
    });
    server_.Post("/count", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++hits_;
      if (!respond_with_mode(n, res)) return;
      nlohmann::json counts = nlohmann::json::array();
      const auto texts = nlohmann::json::parse(req.body).at("texts");
      for (const auto& t : texts) counts.push_back(t.get<std::string>().size());
      res.set_content(nlohmann::json{{"counts", counts}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockSidecar() {
    server_.stop();
    thread_.join();
  }

  [[nodiscard]] std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  void set_mode(Mode m) {
    mode_ = m;
    hits_ = 0;
  }
  [[nodiscard]] int hits() const { return hits_; }

 private:
  bool respond_with_mode(int n, httplib::Response& res) {
    switch (mode_) {
      case Mode::always_500: res.status = 503; return false;
      case Mode::fail_once:
        if (n == 1) {
          res.status = 500;
          return false;
        }
        return true;
      case Mode::bad_request: res.status = 400; res.set_content("bad texts", "text/plain"); return false;
      case Mode::malformed: res.set_content("{\"embeddings\": [", "application/json"); return false;
      default: return true;
    }
  }

  size_t dim_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<Mode> mode_{Mode::ok};
  std::atomic<int> hits_{0};
};

SidecarOptions fast() {
  SidecarOptions o;
  o.retries = 2;
  o.backoff = std::chrono::milliseconds(1);
  o.timeout = std::chrono::seconds(5);
  return o;
}

const std::vector<std::string> kTexts{"a", "three", ""};

}  // namespace

TEST(Sidecar, HealthSetsDimension) {
  MockSidecar mock(5);
  SidecarProvider p(mock.url(), fast());
  EXPECT_EQ(p.dim(), 5u);
  EXPECT_EQ(p.describe(), "sidecar(" + mock.url() + ")");
}

TEST(Sidecar, EmbedAndCountFollowWireFormat) {
  MockSidecar mock(4);
  SidecarProvider p(mock.url(), fast());
  const auto v = p.embed(kTexts);
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[1][0], 5.0);
  EXPECT_EQ(v[1][3], 8.0);
  EXPECT_EQ(p.count(kTexts), (std::vector<size_t>{1, 5, 0}));
}

TEST(Sidecar, TransientServerErrorIsRetried) {
  MockSidecar mock(4);
  SidecarProvider p(mock.url(), fast());
  mock.set_mode(Mode::fail_once);
  EXPECT_EQ(p.embed(kTexts).size(), 3u);
  EXPECT_EQ(mock.hits(), 2);
}

TEST(Sidecar, PersistentServerErrorIsTransportError) {
  MockSidecar mock(4);
  SidecarProvider p(mock.url(), fast());
  mock.set_mode(Mode::always_500);
  try {
    p.embed(kTexts);
    FAIL() << "expected a transport error";
  } catch (const TransportError& e) {
    EXPECT_NE(std::string(e.what()).find("3 attempts"), std::string::npos) << e.what();
  }
  EXPECT_EQ(mock.hits(), 3);
}

TEST(Sidecar, ClientErrorIsContractErrorWithoutRetry) {
  MockSidecar mock(4);
  SidecarProvider p(mock.url(), fast());
  mock.set_mode(Mode::bad_request);
  EXPECT_THROW(p.count(kTexts), ContractError);
  EXPECT_EQ(mock.hits(), 1);
}

TEST(Sidecar, MalformedBodyIsContractError) {
  MockSidecar mock(4);
  SidecarProvider p(mock.url(), fast());
  mock.set_mode(Mode::malformed);
  EXPECT_THROW(p.embed(kTexts), ContractError);
}

TEST(Sidecar, DimensionMismatchIsContractError) {
  MockSidecar mock(4);
  SidecarProvider p(mock.url(), fast());
  mock.set_mode(Mode::wrong_dim);
  EXPECT_THROW(p.embed(kTexts), ContractError);
  mock.set_mode(Mode::short_batch);
  EXPECT_THROW(p.embed(kTexts), ContractError);
}

TEST(Sidecar, UnreachableHostIsTransportError) {
  int port = 0;
  {
    MockSidecar probe(1);
    port = std::stoi(probe.url().substr(probe.url().rfind(':') + 1));
  }
  SidecarOptions o = fast();
  o.retries = 1;
  EXPECT_THROW(SidecarProvider("http://127.0.0.1:" + std::to_string(port), o), TransportError);
}
