#pragma once

// Brute-force reference implementations the real engine is checked against.
// These stay deliberately independent of captok::permits and friends: paths
// are compared as segment lists, never as strings.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "captok/scope.hpp"

namespace oracle {

inline std::vector<std::string> split_segments(const std::string &canonical) {
    std::vector<std::string> segs;
    std::string cur;
    for (std::size_t i = 1; i <= canonical.size(); ++i) {
        if (i == canonical.size() || canonical[i] == '/') {
            if (!cur.empty()) segs.push_back(cur);
            cur.clear();
        } else {
            cur += canonical[i];
        }
    }
    return segs;
}

inline bool ancestor_or_equal(const std::string &anc, const std::string &path) {
    auto a = split_segments(anc);
    auto b = split_segments(path);
    if (a.size() > b.size()) return false;
    return std::equal(a.begin(), a.end(), b.begin());
}

inline bool permits(const std::vector<captok::Permission> &perms, captok::Op op,
                    const std::string &path) {
    return std::any_of(perms.begin(), perms.end(), [&](const captok::Permission &p) {
        return p.op == op && ancestor_or_equal(p.path, path);
    });
}

// Every canonical path over segment alphabet {a,b,c} up to `max_depth`
// levels, root included. Depth 6 yields the 1,093-path universe used by the
// acceptance suite (sum of 3^0..3^6).
inline std::vector<std::string> path_universe(int max_depth = 6) {
    std::vector<std::string> out{"/"};
    std::vector<std::string> frontier{""};
    for (int d = 0; d < max_depth; ++d) {
        std::vector<std::string> next;
        for (const auto &base : frontier) {
            for (const char *seg : {"a", "b", "c"}) {
                std::string p = base + "/" + seg;
                out.push_back(p);
                next.push_back(p);
            }
        }
        frontier = std::move(next);
    }
    return out;
}

inline std::vector<captok::Permission> random_permission_set(std::mt19937_64 &rng,
                                                             const std::vector<std::string> &universe,
                                                             std::size_t max_size = 4) {
    std::uniform_int_distribution<std::size_t> size_dist(0, max_size);
    std::uniform_int_distribution<std::size_t> path_dist(0, universe.size() - 1);
    std::uniform_int_distribution<int> op_dist(0, 1);
    std::vector<captok::Permission> perms;
    std::size_t n = size_dist(rng);
    for (std::size_t i = 0; i < n; ++i) {
        perms.push_back({op_dist(rng) == 0 ? captok::Op::read : captok::Op::write,
                         universe[path_dist(rng)]});
    }
    return perms;
}

} // namespace oracle
