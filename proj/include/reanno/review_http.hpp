#pragma once

#include "reanno/review_service.hpp"

#include <string>

namespace httplib {
class Server;
}

namespace reanno {

Json item_to_json(const ReviewItem& item, const LabelSpace& labels);

/// GET /queue, GET /item/{id}, POST /item/{id}/decision, POST /recompute,
/// GET /projection, GET /labels, GET /export, GET /export/datastore.
/// Errors map to 400 (validation), 404 (unknown id), 409 (already decided),
/// 500 (I/O), each with a {"error": message} body.
void register_review_routes(httplib::Server& server, ReviewService& service);

/// Blocks until the server stops.
void serve_review(ReviewService& service, const std::string& host, int port);

}  // namespace reanno
