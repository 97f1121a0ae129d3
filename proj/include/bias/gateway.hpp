#pragma once

// HTTP front end for the screener: POST /v1/screen, GET /v1/health,
// GET /v1/stats. Screenings run on a fixed pool of workers fed by one FIFO
// queue; the request log is an append-only JSONL file.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bias/screener.hpp"

namespace httplib {
class Server;
}

namespace bias {

/// Fixed-size thread pool over a FIFO queue.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t workers);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  std::future<void> submit(std::function<void()> job);

  std::size_t workers() const { return threads_.size(); }
  std::size_t active() const { return active_.load(); }
  /// Highest number of jobs seen running at once.
  std::size_t peak_active() const { return peak_.load(); }

 private:
  void run();

  std::vector<std::thread> threads_;
  std::deque<std::packaged_task<void()>> queue_;
  std::mutex mutex_;
  std::condition_variable ready_;
  bool stopping_ = false;
  std::atomic<std::size_t> active_{0};
  std::atomic<std::size_t> peak_{0};
};

struct RequestLogEntry {
  std::string timestamp;  // UTC, ISO 8601
  std::string request_digest;
  std::size_t finding_count = 0;
  std::array<std::size_t, kNumLabels> per_class{};
  double latency_ms = 0.0;
  int status = 200;
  std::string client;

  nlohmann::json to_json() const;
  static RequestLogEntry from_json(const nlohmann::json& j);
};

/// Append-only JSONL log; writes are serialised and flushed per entry.
class RequestLog {
 public:
  explicit RequestLog(std::filesystem::path path);

  void append(const RequestLogEntry& entry);
  std::vector<RequestLogEntry> read_all() const;
  /// Totals, per-class finding counts and latency percentiles over the file.
  nlohmann::json stats() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
};

struct GatewayConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path checkpoint;
  std::filesystem::path vocab;
  std::size_t workers = 8;
  std::size_t listener_threads = 72;
  double threshold = 0.5;
  std::filesystem::path log_path = "requests.jsonl";
  std::size_t max_text_bytes = 1 << 20;
  bool cors = true;
};

struct HttpReply {
  int status = 200;
  std::string body;
};

class Gateway {
 public:
  explicit Gateway(GatewayConfig config);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Installs an already loaded model; the gateway becomes ready.
  void set_model(std::shared_ptr<const ScreeningModel> model);
  /// Loads config.checkpoint / config.vocab on a background thread.
  void load_model_async();
  bool ready() const;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  void stop();
  int port() const { return port_; }

  // Request handlers, usable without a socket.
  HttpReply handle_screen(const std::string& body);
  HttpReply handle_health() const;
  HttpReply handle_stats() const;

  const WorkerPool& pool() const { return pool_; }
  const GatewayConfig& config() const { return config_; }

 private:
  std::shared_ptr<const Screener> screener() const;

  GatewayConfig config_;
  WorkerPool pool_;
  RequestLog log_;
  mutable std::mutex model_mutex_;
  std::shared_ptr<const Screener> screener_;
  std::string load_error_;
  std::chrono::steady_clock::time_point started_;
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
  std::thread loader_;
  int port_ = 0;
};

}  // namespace bias
