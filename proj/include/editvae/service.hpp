#pragma once

// HTTP/JSON editing API over a loaded checkpoint.

#include "editvae/checkpoint.hpp"
#include "editvae/editing.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cstdio>
#include <list>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

namespace editvae {

/// Thread-safe LRU store of latent bundles keyed by opaque ids.
class BundleStore {
 public:
  explicit BundleStore(std::size_t capacity = 256) : capacity_(capacity == 0 ? 1 : capacity) {}

  std::string put(LatentBundle bundle) {
    std::lock_guard lock(mutex_);
    const std::string id = "b" + std::to_string(++counter_);
    order_.push_front(id);
    entries_.emplace(id, Entry{std::move(bundle), order_.begin()});
    while (entries_.size() > capacity_) {
      entries_.erase(order_.back());
      order_.pop_back();
    }
    return id;
  }

  std::optional<LatentBundle> get(const std::string& id) {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(id);
    if (it == entries_.end()) return std::nullopt;
    order_.splice(order_.begin(), order_, it->second.position);
    return it->second.bundle;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

 private:
  struct Entry {
    LatentBundle bundle;
    std::list<std::string>::iterator position;
  };
  std::size_t capacity_;
  std::uint64_t counter_ = 0;
  mutable std::mutex mutex_;
  std::list<std::string> order_;
  std::unordered_map<std::string, Entry> entries_;
};

/// Rounds to 6 significant digits, the precision of every float on the wire.
inline double wire_round(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return std::strtod(buf, nullptr);
}

inline nlohmann::json shape_to_json(const DecodedShape& shape) {
  using nlohmann::json;
  json points = json::array();
  const Matrix pts = shape.points();
  for (Index i = 0; i < pts.rows(); ++i)
    points.push_back({wire_round(pts(i, 0)), wire_round(pts(i, 1)), wire_round(pts(i, 2))});
  json prims = json::array();
  for (const auto& p : shape.parts) {
    auto vec = [](const auto& v) {
      json a = json::array();
      for (Index i = 0; i < v.size(); ++i) a.push_back(wire_round(v[i]));
      return a;
    };
    prims.push_back({{"alpha", vec(p.primitive.alpha)},
                     {"epsilon", vec(p.primitive.epsilon)},
                     {"taper", vec(p.primitive.taper)},
                     {"q", vec(p.pose.q)},
                     {"t", vec(p.pose.t)}});
  }
  return {{"points", std::move(points)}, {"part_index", shape.part_index()}, {"primitives", std::move(prims)}};
}

struct ApiResponse {
  int status = 200;
  std::string body;
};

class ApiService {
 public:
  ApiService(Model model, std::string category, std::size_t store_capacity = 256)
      : model_(std::move(model)), category_(std::move(category)), store_(store_capacity) {}

  explicit ApiService(Checkpoint ckpt, std::size_t store_capacity = 256)
      : ApiService(std::move(ckpt.model), std::move(ckpt.category), store_capacity) {}

  const Model& model() const { return model_; }
  BundleStore& store() { return store_; }

  /// Dispatches one request; never throws.
  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body) {
    try {
      if (method == "GET" && path == "/meta") return ok(meta());
      if (method == "POST") {
        if (path == "/sample") return ok(sample(parse(body)));
        if (path == "/encode") return ok(encode(parse(body)));
        if (path == "/mix") return ok(mix(parse(body)));
        if (path == "/resample") return ok(resample(parse(body)));
        if (path == "/interpolate") return ok(interpolate(parse(body)));
      }
      return error(404, "not_found", method + " " + path + " is not an endpoint");
    } catch (const RequestError& e) {
      return error(e.status, e.kind, e.what());
    } catch (const nlohmann::json::exception& e) {
      return error(400, "bad_request", e.what());
    } catch (const std::exception& e) {
      return error(500, "internal_error", e.what());
    }
  }

  /// Registers every endpoint on an httplib server.
  void bind(httplib::Server& server) {
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
      ApiResponse r = handle(req.method, req.path, req.body);
      res.status = r.status;
      res.set_content(r.body, "application/json");
    };
    server.Get("/meta", route);
    for (const char* p : {"/sample", "/encode", "/mix", "/resample", "/interpolate"}) server.Post(p, route);
    server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (!res.body.empty()) return;
      nlohmann::json j = {{"error", res.status == 404 ? "not_found" : "http_error"},
                          {"detail", req.method + " " + req.path}};
      res.set_content(j.dump(), "application/json");
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
      res.status = 500;
      res.set_content(R"({"error":"internal_error","detail":"unhandled exception"})", "application/json");
    });
  }

 private:
  using json = nlohmann::json;

  struct RequestError : std::runtime_error {
    RequestError(int s, std::string k, const std::string& detail)
        : std::runtime_error(detail), status(s), kind(std::move(k)) {}
    int status;
    std::string kind;
  };

  static ApiResponse ok(const json& j) { return {200, j.dump()}; }
  static ApiResponse error(int status, const std::string& kind, const std::string& detail) {
    return {status, json{{"error", kind}, {"detail", detail}}.dump()};
  }

  static json parse(const std::string& body) {
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded()) throw RequestError(400, "bad_request", "request body is not valid JSON");
    if (!j.is_object()) throw RequestError(400, "bad_request", "request body must be a JSON object");
    return j;
  }

  template <typename T>
  static T field(const json& j, const char* key) {
    if (!j.contains(key)) throw RequestError(400, "bad_request", std::string("missing field '") + key + "'");
    try {
      return j.at(key).get<T>();
    } catch (const json::exception&) {
      throw RequestError(400, "bad_request", std::string("field '") + key + "' has the wrong type");
    }
  }

  LatentBundle bundle(const std::string& id) {
    auto b = store_.get(id);
    if (!b) throw RequestError(404, "unknown_id", "no bundle with id '" + id + "'");
    return *b;
  }

  EditSelection selection(const json& j, EditMode mode) const {
    EditSelection sel{field<std::vector<int>>(j, "parts"), mode};
    try {
      sel.validate(model_.config().parts);
    } catch (const DomainError& e) {
      throw RequestError(422, "invalid_part_index", e.what());
    }
    return sel;
  }

  json meta() const {
    const auto& c = model_.config();
    return {{"M", c.parts},
            {"D_z", c.latent_dim},
            {"part_dims", {c.part_dims.style, c.part_dims.pose, c.part_dims.primitive}},
            {"category", category_}};
  }

  json sample(const json& j) {
    const auto seed = field<std::uint64_t>(j, "seed");
    const int n = field<int>(j, "n");
    if (n < 0 || n > 1024) throw RequestError(422, "invalid_count", "n must be in [0, 1024]");
    json shapes = json::array();
    json ids = json::array();
    for (const auto& z : sample_prior(seed, n, model_.config().latent_dim)) {
      LatentBundle b = split(model_, z);
      shapes.push_back(shape_to_json(decode_bundle(model_, b)));
      ids.push_back(store_.put(std::move(b)));
    }
    return {{"shapes", std::move(shapes)}, {"bundle_ids", std::move(ids)}};
  }

  json encode(const json& j) {
    const auto pts = field<std::vector<std::vector<double>>>(j, "points");
    if (pts.empty()) throw RequestError(400, "bad_request", "points must be non-empty");
    Matrix m(static_cast<Index>(pts.size()), 3);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (pts[i].size() != 3) throw RequestError(400, "bad_request", "each point needs 3 coordinates");
      for (int k = 0; k < 3; ++k) m(Index(i), k) = pts[i][k];
    }
    if (!m.allFinite()) throw RequestError(400, "bad_request", "points must be finite");
    LatentBundle b = encode_shape(model_, PointCloud(std::move(m)), true, 0);
    json shape = shape_to_json(decode_bundle(model_, b));
    return {{"bundle_id", store_.put(std::move(b))}, {"shape", std::move(shape)}};
  }

  json with_id(const DecodedShape& shape, LatentBundle edited) {
    json out = shape_to_json(shape);
    out["bundle_id"] = store_.put(std::move(edited));
    return out;
  }

  json mix(const json& j) {
    LatentBundle target = bundle(field<std::string>(j, "target_id"));
    LatentBundle reference = bundle(field<std::string>(j, "reference_id"));
    EditSelection sel = selection(j, EditMode::mix);
    LatentBundle edited = target;
    for (int m : sel.part_indices) edited.parts[m].style = reference.parts[m].style;
    return with_id(mix_parts(model_, target, reference, sel), std::move(edited));
  }

  json resample(const json& j) {
    LatentBundle b = bundle(field<std::string>(j, "bundle_id"));
    EditSelection sel = selection(j, EditMode::resample);
    const auto seed = field<std::uint64_t>(j, "seed");
    LatentBundle edited = b;
    if (!sel.part_indices.empty()) {
      const LatentBundle fresh = split(model_, sample_prior(seed, 1, model_.config().latent_dim).front());
      for (int m : sel.part_indices) edited.parts[m].style = fresh.parts[m].style;
    }
    return with_id(resample_parts(model_, b, sel, seed), std::move(edited));
  }

  json interpolate(const json& j) {
    LatentBundle a = bundle(field<std::string>(j, "id_a"));
    LatentBundle b = bundle(field<std::string>(j, "id_b"));
    const auto weights = field<std::vector<double>>(j, "weights");
    for (double w : weights)
      if (!(w >= 0.0 && w <= 1.0)) throw RequestError(422, "invalid_weight", "weights must lie in [0, 1]");
    json shapes = json::array();
    for (double w : weights) {
      LatentBundle mixed = a;
      for (std::size_t m = 0; m < mixed.parts.size(); ++m) {
        auto lerp = [w](const Vector& x, const Vector& y) -> Vector {
          return w == 0.0 ? x : (w == 1.0 ? y : Vector((1.0 - w) * x + w * y));
        };
        mixed.parts[m] = {lerp(a.parts[m].style, b.parts[m].style), lerp(a.parts[m].pose, b.parts[m].pose),
                          lerp(a.parts[m].primitive, b.parts[m].primitive)};
      }
      mixed.z = w == 0.0 ? a.z : (w == 1.0 ? b.z : Vector((1.0 - w) * a.z + w * b.z));
      shapes.push_back(with_id(decode_bundle(model_, mixed), mixed));
    }
    return {{"shapes", std::move(shapes)}};
  }

  Model model_;
  std::string category_;
  BundleStore store_;
};

}  // namespace editvae
