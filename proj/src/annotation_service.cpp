#include "poolforge/annotation_service.hpp"

#include "poolforge/util.hpp"

#include "httplib.h"
#include "json.hpp"

#include <algorithm>

using nlohmann::json;

namespace poolforge {

AnnotationHub::AnnotationHub(std::vector<std::string> label_words) : label_words_(std::move(label_words)) {}

void AnnotationHub::begin_batch(int round, std::vector<std::pair<SampleId, std::string>> items) {
  {
    std::lock_guard lock(mutex_);
    round_ = round;
    items_ = std::move(items);
    labels_.clear();
    phase_ = "annotating";
  }
  cv_.notify_all();
}

bool AnnotationHub::complete_locked() const {
  return std::all_of(items_.begin(), items_.end(), [&](const auto& it) { return labels_.count(it.first) != 0; });
}

std::map<SampleId, ClassIndex> AnnotationHub::wait_for_labels() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return phase_ == "abandoned" || (phase_ != "idle" && complete_locked()); });
  if (phase_ == "abandoned") throw Error("annotation session abandoned before the batch was labeled");
  phase_ = "complete";
  return labels_;
}

void AnnotationHub::abandon() {
  {
    std::lock_guard lock(mutex_);
    phase_ = "abandoned";
  }
  cv_.notify_all();
}

void AnnotationHub::finish() {
  std::lock_guard lock(mutex_);
  phase_ = "done";
  items_.clear();
  labels_.clear();
}

SubmitResult AnnotationHub::submit(const std::vector<std::pair<SampleId, long long>>& labels) {
  SubmitResult result;
  {
    std::lock_guard lock(mutex_);
    if (phase_ != "annotating" && phase_ != "complete") {
      result.had_batch = false;
      return result;
    }
    for (const auto& [id, label] : labels) {
      const bool in_batch =
          std::any_of(items_.begin(), items_.end(), [&](const auto& it) { return it.first == id; });
      if (!in_batch) {
        result.rejected.push_back({id, "id not in the active batch"});
        continue;
      }
      if (label < 0 || label >= static_cast<long long>(label_words_.size())) {
        result.rejected.push_back({id, "label outside the label set"});
        continue;
      }
      auto [it, inserted] = labels_.insert_or_assign(id, static_cast<ClassIndex>(label));
      (void)it;
      if (!inserted) log_info("annotation: id " + std::to_string(id) + " relabeled (latest submission kept)");
      ++result.accepted;
    }
  }
  cv_.notify_all();
  return result;
}

AnnotationHub::Status AnnotationHub::status() const {
  std::lock_guard lock(mutex_);
  Status s{round_, phase_, {}};
  if (phase_ == "annotating")
    for (const auto& [id, text] : items_)
      if (!labels_.count(id)) s.pending_ids.push_back(id);
  return s;
}

std::vector<std::pair<SampleId, std::string>> AnnotationHub::batch() const {
  std::lock_guard lock(mutex_);
  if (phase_ != "annotating" && phase_ != "complete") return {};
  return items_;
}

AnnotationService::AnnotationService(AnnotationHub& hub) : hub_(hub), server_(std::make_unique<httplib::Server>()) {
  // httplib's default adds SO_REUSEPORT, which would let a second service share the port.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
  });
  auto send_json = [](httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
  };

  server_->Get("/api/status", [this, send_json](const httplib::Request&, httplib::Response& res) {
    const auto s = hub_.status();
    send_json(res, {{"round", s.round}, {"phase", s.phase}, {"pending_ids", s.pending_ids}});
  });

  server_->Get("/api/batch", [this, send_json](const httplib::Request&, httplib::Response& res) {
    json items = json::array();
    for (const auto& [id, text] : hub_.batch()) items.push_back({{"id", id}, {"text", text}});
    res.set_header("X-Phase", hub_.status().phase);
    send_json(res, items);
  });

  server_->Get("/api/labelset", [this, send_json](const httplib::Request&, httplib::Response& res) {
    send_json(res, hub_.label_words());
  });

  server_->Post("/api/labels", [this, send_json](const httplib::Request& req, httplib::Response& res) {
    std::vector<std::pair<SampleId, long long>> labels;
    try {
      const json body = json::parse(req.body);
      if (!body.is_array()) throw std::invalid_argument("body must be an array of {id, label}");
      for (const auto& item : body) labels.emplace_back(item.at("id").get<SampleId>(), item.at("label").get<long long>());
    } catch (const std::exception& e) {
      send_json(res, {{"accepted", 0}, {"rejected", json::array()}, {"error", e.what()}}, 422);
      return;
    }
    const auto result = hub_.submit(labels);
    if (!result.had_batch) {
      send_json(res, {{"accepted", 0}, {"rejected", json::array()}, {"error", "no active batch"}}, 409);
      return;
    }
    json rejected = json::array();
    for (const auto& r : result.rejected) rejected.push_back({{"id", r.id}, {"reason", r.reason}});
    send_json(res, {{"accepted", result.accepted}, {"rejected", rejected}}, result.rejected.empty() ? 200 : 422);
  });
}

AnnotationService::~AnnotationService() { stop(); }

void AnnotationService::start(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
    if (port_ < 0) throw ValidationError("bind", "cannot bind " + host);
  } else {
    if (!server_->bind_to_port(host, port)) throw ValidationError("bind", "port unavailable: " + host + ":" + std::to_string(port));
    port_ = port;
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  log_info("annotation service listening on " + host + ":" + std::to_string(port_));
}

void AnnotationService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::pair<std::string, int> parse_bind_address(const std::string& bind) {
  const auto colon = bind.rfind(':');
  std::string host = colon == std::string::npos ? "127.0.0.1" : bind.substr(0, colon);
  const std::string port_text = colon == std::string::npos ? bind : bind.substr(colon + 1);
  if (host.empty()) host = "127.0.0.1";
  try {
    std::size_t used = 0;
    const int port = std::stoi(port_text, &used);
    if (used != port_text.size() || port < 0 || port > 65535) throw std::out_of_range("port");
    return {host, port};
  } catch (const std::exception&) {
    throw ValidationError("bind", "expected host:port, got '" + bind + "'");
  }
}

}  // namespace poolforge
