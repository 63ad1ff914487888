#pragma once

#include "poolforge/common.hpp"

#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace httplib {
class Server;
}

namespace poolforge {

struct LabelRejection {
  SampleId id;
  std::string reason;
};

struct SubmitResult {
  bool had_batch = true;  // false -> no active batch (HTTP 409)
  std::size_t accepted = 0;
  std::vector<LabelRejection> rejected;
};

/// Shared state between the HTTP handlers and the orchestrator. Handler
/// writes are serialized by one mutex; the orchestrator blocks in
/// wait_for_labels until every id of the active batch has a label.
class AnnotationHub {
 public:
  explicit AnnotationHub(std::vector<std::string> label_words);

  /// Publishes a batch (id, text) for labeling.
  void begin_batch(int round, std::vector<std::pair<SampleId, std::string>> items);

  /// Blocks until the active batch is fully labeled. Throws Error if the
  /// session is abandoned first.
  std::map<SampleId, ClassIndex> wait_for_labels();

  /// Wakes any waiter with an abandonment error.
  void abandon();
  /// Marks the loop finished; status reports phase "done".
  void finish();

  SubmitResult submit(const std::vector<std::pair<SampleId, long long>>& labels);

  struct Status {
    int round = 0;
    std::string phase;  // idle | annotating | complete | done | abandoned
    std::vector<SampleId> pending_ids;
  };
  Status status() const;
  std::vector<std::pair<SampleId, std::string>> batch() const;
  const std::vector<std::string>& label_words() const { return label_words_; }

 private:
  bool complete_locked() const;

  const std::vector<std::string> label_words_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  int round_ = 0;
  std::string phase_ = "idle";
  std::vector<std::pair<SampleId, std::string>> items_;
  std::map<SampleId, ClassIndex> labels_;
};

/// HTTP front end for an AnnotationHub:
///   GET  /api/status   -> {round, phase, pending_ids}
///   GET  /api/batch    -> [{id, text}]
///   POST /api/labels   <- [{id, label}] -> {accepted, rejected: [{id, reason}]}
///   GET  /api/labelset -> label_words
/// 200 on success, 422 on validation failure, 409 when no batch is active.
class AnnotationService {
 public:
  explicit AnnotationService(AnnotationHub& hub);
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  /// Binds `host:port` (port 0 picks a free port) and serves on a
  /// background thread. Throws ValidationError if the port is unavailable.
  void start(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  AnnotationHub& hub_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

/// Splits "host:port"; a bare port binds 127.0.0.1.
std::pair<std::string, int> parse_bind_address(const std::string& bind);

}  // namespace poolforge
