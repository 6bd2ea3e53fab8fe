#include "reanno/review_http.hpp"

#include <httplib.h>

namespace reanno {

namespace {

Json label_json(LabelIndex l, const LabelSpace& labels) { return Json{{"index", l}, {"name", labels.name(l)}}; }

void send_json(httplib::Response& res, const Json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

template <typename F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const NotFoundError& e) {
            send_json(res, Json{{"error", e.what()}}, 404);
        } catch (const ConflictError& e) {
            send_json(res, Json{{"error", e.what()}}, 409);
        } catch (const ValidationError& e) {
            send_json(res, Json{{"error", e.what()}}, 400);
        } catch (const nlohmann::json::exception& e) {
            send_json(res, Json{{"error", std::string("malformed request body: ") + e.what()}}, 400);
        } catch (const std::exception& e) {
            send_json(res, Json{{"error", e.what()}}, 500);
        }
    };
}

std::size_t size_param(const httplib::Request& req, const std::string& key, std::size_t fallback) {
    if (!req.has_param(key)) return fallback;
    const auto v = req.get_param_value(key);
    try {
        std::size_t used = 0;
        const auto n = std::stoll(v, &used);
        if (used != v.size() || n < 0) throw std::invalid_argument(v);
        return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
        throw ValidationError("query parameter '" + key + "' must be a non-negative integer");
    }
}

LabelIndex parse_label(const Json& j, const LabelSpace& labels) {
    if (j.is_string()) return labels.index_of(j.get<std::string>());
    if (j.is_number_unsigned()) return j.get<LabelIndex>();
    throw ValidationError("label must be a label name or index");
}

}  // namespace

Json item_to_json(const ReviewItem& item, const LabelSpace& labels) {
    Json j{{"id", item.id},
           {"observed", label_json(item.observed, labels)},
           {"original", label_json(item.original, labels)},
           {"psi", item.psi},
           {"suggested", label_json(item.suggested, labels)},
           {"confirm", item.confirm()},
           {"status", to_string(item.status)}};
    if (item.probs.size() > 0) {
        j["probs"] = std::vector<double>(item.probs.data(), item.probs.data() + item.probs.size());
        j["suggested_prob"] = item.probs(static_cast<Eigen::Index>(item.suggested));
    }
    if (item.metadata) {
        const auto& m = *item.metadata;
        Json meta{{"context", m.context},
                  {"head_span", {m.head_span.first, m.head_span.second}},
                  {"tail_span", {m.tail_span.first, m.tail_span.second}}};
        if (m.head_type) meta["head_type"] = *m.head_type;
        if (m.tail_type) meta["tail_type"] = *m.tail_type;
        j["metadata"] = meta;
    }
    if (!item.neighbors.empty()) {
        Json ns = Json::array();
        for (const auto& n : item.neighbors)
            ns.push_back(Json{{"id", n.id}, {"label", label_json(n.label, labels)}, {"distance", n.distance}});
        j["neighbors"] = ns;
    }
    if (item.projection) j["projection"] = {item.projection->first, item.projection->second};
    return j;
}

void register_review_routes(httplib::Server& server, ReviewService& service) {
    server.Get("/queue", guarded([&service](const httplib::Request& req, httplib::Response& res) {
        const auto status =
            req.has_param("status") ? review_status_from_string(req.get_param_value("status")) : ReviewStatus::pending;
        const auto page = service.list_queue(size_param(req, "limit", 50), size_param(req, "offset", 0), status);
        Json items = Json::array();
        for (const auto& item : page.items) items.push_back(item_to_json(item, service.labels()));
        send_json(res, Json{{"total", page.total}, {"items", items}});
    }));

    server.Get(R"(/item/([^/]+))", guarded([&service](const httplib::Request& req, httplib::Response& res) {
        send_json(res, item_to_json(service.get_item(req.matches[1]), service.labels()));
    }));

    server.Post(R"(/item/([^/]+)/decision)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
        const auto body = Json::parse(req.body);
        const auto action = review_action_from_string(body.at("action").get<std::string>());
        std::optional<LabelIndex> label;
        if (body.contains("label") && !body["label"].is_null()) label = parse_label(body["label"], service.labels());
        const auto reviewer = body.value("reviewer", std::string("reviewer"));
        send_json(res, item_to_json(service.post_decision(req.matches[1], action, label, reviewer), service.labels()));
    }));

    server.Post("/recompute", guarded([&service](const httplib::Request&, httplib::Response& res) {
        send_json(res, Json{{"changed", service.recompute()}});
    }));

    server.Get("/projection", guarded([&service](const httplib::Request& req, httplib::Response& res) {
        const auto n = service.original_store().size();
        const auto p = service.projection(size_param(req, "sample", std::min<std::size_t>(n, 2000)),
                                          size_param(req, "seed", 0));
        Json points = Json::array();
        for (const auto& [id, xy] : p.coords) points.push_back(Json{{"id", id}, {"x", xy.first}, {"y", xy.second}});
        send_json(res, Json{{"points", points}});
    }));

    server.Get("/labels", guarded([&service](const httplib::Request&, httplib::Response& res) {
        send_json(res, Json{{"labels", service.labels().names()}});
    }));

    server.Get("/export", guarded([&service](const httplib::Request&, httplib::Response& res) {
        const auto store = service.current_store();
        Json changes = Json::array();
        for (const auto& c : service.changes())
            changes.push_back(Json{{"id", c.id}, {"old", c.old_label}, {"new", c.new_label}});
        Json labels = Json::array();
        for (std::size_t r = 0; r < store.size(); ++r)
            labels.push_back(Json{{"id", store.id(r)}, {"label", store.label(r)}});
        send_json(res, Json{{"changes", changes}, {"labels", labels}});
    }));

    server.Get("/export/datastore", guarded([&service](const httplib::Request&, httplib::Response& res) {
        res.set_content(encode_datastore(service.current_store()), "application/octet-stream");
    }));
}

void serve_review(ReviewService& service, const std::string& host, int port) {
    httplib::Server server;
    register_review_routes(server, service);
    if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace reanno
