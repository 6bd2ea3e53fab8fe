#pragma once

// Independent reference implementations used by the tests. They favour the
// obvious formula over speed and share no code with the library beyond types.

#include "reanno/datastore.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

namespace oracle {

/// Full scan + sort: ascending distance, ties by ascending id.
inline std::vector<std::pair<std::string, double>> knn(const std::vector<std::string>& ids,
                                                       const std::vector<std::vector<double>>& keys,
                                                       const std::vector<double>& q, std::size_t k,
                                                       const std::string* exclude = nullptr) {
    std::vector<std::pair<std::string, double>> all;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (exclude && ids[i] == *exclude) continue;
        double d = 0.0;
        for (std::size_t j = 0; j < q.size(); ++j) d += (keys[i][j] - q[j]) * (keys[i][j] - q[j]);
        all.emplace_back(ids[i], d);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    all.resize(std::min(k, all.size()));
    return all;
}

/// Direct-space Gaussian KDE: mean of N(x; m, h^2 I) over members.
inline double kde(const std::vector<std::vector<double>>& members, const std::vector<double>& x, double h) {
    if (members.empty()) return 0.0;
    const double d = static_cast<double>(x.size());
    double acc = 0.0;
    for (const auto& m : members) {
        double sq = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) sq += (x[j] - m[j]) * (x[j] - m[j]);
        acc += std::exp(-sq / (2 * h * h));
    }
    return acc / static_cast<double>(members.size()) / std::pow(h * std::sqrt(2 * std::numbers::pi), d);
}

inline double standard_normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi); }

/// Softmax with no shift; fine for the small logits used in fixtures.
inline std::vector<double> softmax(const std::vector<double>& z) {
    std::vector<double> out;
    double s = 0.0;
    for (double v : z) s += std::exp(v);
    for (double v : z) out.push_back(std::exp(v) / s);
    return out;
}

inline reanno::Datastore random_store(std::size_t n, std::size_t dim, std::size_t n_labels, std::uint64_t seed,
                                      double scale = 1.0) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<float> nd(0.0f, static_cast<float>(scale));
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n_labels; ++i) names.push_back("L" + std::to_string(i));
    reanno::Datastore store(dim, reanno::LabelSpace(names));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> v(dim);
        for (auto& x : v) x = nd(gen);
        store.add("id" + std::to_string(1000 + i), v, static_cast<reanno::LabelIndex>(gen() % n_labels));
    }
    return store;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("reanno_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace oracle
