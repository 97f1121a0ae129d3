#include "bias/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>

// the default backlog of 5 drops SYNs under bursts of concurrent clients
#define CPPHTTPLIB_LISTEN_BACKLOG 256
#include <httplib.h>

#include "bias/digest.hpp"

namespace bias {

using nlohmann::json;

// ---------------------------------------------------------------- pool

WorkerPool::WorkerPool(std::size_t workers) {
  if (workers == 0) throw ConfigError("worker pool: need at least one worker");
  for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { run(); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  ready_.notify_all();
  for (auto& t : threads_) t.join();
}

std::future<void> WorkerPool::submit(std::function<void()> job) {
  std::packaged_task<void()> task(std::move(job));
  auto fut = task.get_future();
  {
    std::lock_guard lock(mutex_);
    if (stopping_) throw StateError("worker pool: stopped");
    queue_.push_back(std::move(task));
  }
  ready_.notify_one();
  return fut;
}

void WorkerPool::run() {
  for (;;) {
    std::packaged_task<void()> task;
    {
      std::unique_lock lock(mutex_);
      ready_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      task = std::move(queue_.front());
      queue_.pop_front();
    }
    const std::size_t now = ++active_;
    std::size_t seen = peak_.load();
    while (now > seen && !peak_.compare_exchange_weak(seen, now)) {
    }
    task();
    --active_;
  }
}

// ---------------------------------------------------------------- log

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

}  // namespace

json RequestLogEntry::to_json() const {
  json classes = json::object();
  for (int k = 0; k < kNumLabels; ++k)
    classes[std::string(label_name(static_cast<Label>(k)))] = per_class[static_cast<std::size_t>(k)];
  return json{{"timestamp", timestamp},         {"request_digest", request_digest},
              {"finding_count", finding_count}, {"per_class", classes},
              {"latency_ms", latency_ms},       {"status", status},
              {"client", client}};
}

RequestLogEntry RequestLogEntry::from_json(const json& j) {
  RequestLogEntry e;
  e.timestamp = j.value("timestamp", "");
  e.request_digest = j.value("request_digest", "");
  e.finding_count = j.value("finding_count", std::size_t{0});
  if (j.contains("per_class"))
    for (int k = 0; k < kNumLabels; ++k)
      e.per_class[static_cast<std::size_t>(k)] =
          j["per_class"].value(std::string(label_name(static_cast<Label>(k))), std::size_t{0});
  e.latency_ms = j.value("latency_ms", 0.0);
  e.status = j.value("status", 0);
  e.client = j.value("client", "");
  return e;
}

RequestLog::RequestLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream touch(path_, std::ios::app);
  if (!touch) throw Error("request log: cannot open " + path_.string());
}

void RequestLog::append(const RequestLogEntry& entry) {
  const std::string line = entry.to_json().dump() + "\n";
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app);
  out << line;
  out.flush();
  if (!out) throw Error("request log: write failed for " + path_.string());
}

std::vector<RequestLogEntry> RequestLog::read_all() const {
  std::lock_guard lock(mutex_);
  std::ifstream in(path_);
  std::vector<RequestLogEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(RequestLogEntry::from_json(json::parse(line)));
    } catch (const json::exception&) {
      // a torn final line from a crash is skipped
    }
  }
  return out;
}

json RequestLog::stats() const {
  const auto entries = read_all();
  std::size_t ok = 0, failed = 0, findings = 0;
  std::array<std::size_t, kNumLabels> per_class{};
  std::vector<double> latencies;
  for (const auto& e : entries) {
    if (e.status != 200) {
      ++failed;
      continue;
    }
    ++ok;
    findings += e.finding_count;
    for (std::size_t k = 0; k < per_class.size(); ++k) per_class[k] += e.per_class[k];
    latencies.push_back(e.latency_ms);
  }
  json classes = json::object();
  for (int k = 0; k < kNumLabels; ++k)
    classes[std::string(label_name(static_cast<Label>(k)))] = per_class[static_cast<std::size_t>(k)];
  return json{{"total", ok},
              {"errors", failed},
              {"findings", findings},
              {"per_class", classes},
              {"latency_ms",
               {{"p50", percentile(latencies, 0.5)},
                {"p90", percentile(latencies, 0.9)},
                {"p99", percentile(latencies, 0.99)},
                {"max", latencies.empty() ? 0.0
                                          : *std::max_element(latencies.begin(), latencies.end())}}}};
}

// ---------------------------------------------------------------- gateway

namespace {

HttpReply error_reply(int status, const std::string& message) {
  return {status, json{{"error", message}, {"status", status}}.dump()};
}

}  // namespace

Gateway::Gateway(GatewayConfig config)
    : config_(std::move(config)),
      pool_(config_.workers),
      log_(config_.log_path),
      started_(std::chrono::steady_clock::now()) {
  if (!(config_.threshold >= 0.0 && config_.threshold <= 1.0))
    throw ConfigError("gateway: default threshold must lie in [0,1]");
}

Gateway::~Gateway() {
  stop();
  if (loader_.joinable()) loader_.join();
}

void Gateway::set_model(std::shared_ptr<const ScreeningModel> model) {
  ScreenerConfig sc;
  sc.threshold = config_.threshold;
  sc.max_bytes = config_.max_text_bytes;
  auto screener = std::make_shared<const Screener>(std::move(model), sc);
  std::lock_guard lock(model_mutex_);
  screener_ = std::move(screener);
  load_error_.clear();
}

void Gateway::load_model_async() {
  if (loader_.joinable()) loader_.join();
  loader_ = std::thread([this] {
    try {
      set_model(ScreeningModel::load(config_.checkpoint, config_.vocab));
    } catch (const std::exception& e) {
      std::lock_guard lock(model_mutex_);
      load_error_ = e.what();
    }
  });
}

bool Gateway::ready() const { return screener() != nullptr; }

std::shared_ptr<const Screener> Gateway::screener() const {
  std::lock_guard lock(model_mutex_);
  return screener_;
}

HttpReply Gateway::handle_screen(const std::string& body) {
  const auto start = std::chrono::steady_clock::now();
  auto screener = this->screener();
  if (!screener) return error_reply(503, "model not loaded");

  json req;
  try {
    req = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_reply(400, std::string("malformed JSON: ") + e.what());
  }
  if (!req.is_object() || !req.contains("text") || !req["text"].is_string())
    return error_reply(400, "request needs a string field 'text'");
  std::string text = req["text"].get<std::string>();
  if (text.size() > config_.max_text_bytes)
    return error_reply(413, "text exceeds " + std::to_string(config_.max_text_bytes) + " bytes");
  double threshold = screener->threshold();
  if (req.contains("threshold") && !req["threshold"].is_null()) {
    if (!req["threshold"].is_number()) return error_reply(422, "threshold must be a number");
    threshold = req["threshold"].get<double>();
    if (!(threshold >= 0.0 && threshold <= 1.0))
      return error_reply(422, "threshold must lie in [0,1]");
  }
  std::string client;
  if (req.contains("client") && req["client"].is_string()) client = req["client"].get<std::string>();

  ScreenResult result;
  std::exception_ptr failure;
  pool_.submit([&] {
         try {
           result = screener->screen_text(text, threshold);
         } catch (...) {
           failure = std::current_exception();
         }
       }).wait();

  RequestLogEntry entry;
  entry.timestamp = utc_now();
  entry.request_digest = sha256_hex(text);
  entry.client = client;
  HttpReply reply;
  if (failure) {
    try {
      std::rethrow_exception(failure);
    } catch (const SizeError& e) {
      reply = error_reply(413, e.what());
    } catch (const std::exception& e) {
      reply = error_reply(500, e.what());
    }
  } else {
    reply.body = result.to_json().dump();
    entry.finding_count = result.findings.size();
    for (const auto& f : result.findings) ++entry.per_class[static_cast<std::size_t>(f.label)];
  }
  entry.status = reply.status;
  entry.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  log_.append(entry);
  return reply;
}

HttpReply Gateway::handle_health() const {
  auto screener = this->screener();
  std::string error;
  {
    std::lock_guard lock(model_mutex_);
    error = load_error_;
  }
  const double uptime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  json j{{"status", screener ? "ready" : (error.empty() ? "loading" : "failed")},
         {"checkpoint_id", screener ? json(screener->model().checkpoint_id) : json(nullptr)},
         {"uptime_s", uptime},
         {"parallelism", pool_.workers()},
         {"threshold", config_.threshold}};
  if (!error.empty()) j["error"] = error;
  return {200, j.dump()};
}

HttpReply Gateway::handle_stats() const { return {200, log_.stats().dump()}; }

int Gateway::start() {
  if (server_) throw StateError("gateway: already started");
  server_ = std::make_unique<httplib::Server>();
  const std::size_t listeners = config_.listener_threads;
  server_->new_task_queue = [listeners] { return new httplib::ThreadPool(listeners); };
  // JSON framing on top of the text cap
  server_->set_payload_max_length(config_.max_text_bytes + (64 << 10));

  const bool cors = config_.cors;
  auto send = [cors](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    if (cors) res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(reply.body, "application/json");
  };
  server_->Post("/v1/screen", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_screen(req.body));
  });
  server_->Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_health());
  });
  server_->Get("/v1/stats", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_stats());
  });
  server_->Options(R"(/v1/.*)", [cors](const httplib::Request&, httplib::Response& res) {
    if (cors) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    }
    res.status = 204;
  });

  if (config_.port == 0)
    port_ = server_->bind_to_any_port(config_.host);
  else
    port_ = server_->bind_to_port(config_.host, config_.port) ? config_.port : -1;
  if (port_ < 0) {
    server_.reset();
    throw Error("gateway: cannot bind " + config_.host + ":" + std::to_string(config_.port));
  }
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void Gateway::stop() {
  if (server_) server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
  server_.reset();
}

}  // namespace bias
